"""Differentiable aggregation of radiator outputs into a downlink channel."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .channel import SPEED_OF_LIGHT
from .cplx import ComplexPair, complex_mul
from .errors import DimensionError, DomainError


@dataclass
class RadiatorField:
    """Network output for every radiator.

    ``sigma`` is real and nonnegative, ``coeffs`` complex; both have shape
    ``(N_a * N_r, N_c, N_u, N_b)``, optionally with a leading batch axis.
    """

    sigma: T.DiffTensor
    coeffs: ComplexPair

    def __post_init__(self):
        if self.sigma.shape != self.coeffs.shape:
            raise DimensionError(f"sigma shape {self.sigma.shape} != coefficient shape {self.coeffs.shape}")


def absorption(sigma):
    """Absorption ratio ``1 - exp(-sigma)``."""
    sigma = T.as_tensor(sigma)
    if np.any(sigma.data < 0):
        raise DomainError("absorption needs sigma >= 0")
    return T.sub(T.as_tensor(1.0, like=sigma), T.exp(T.neg(sigma)))


def free_space_weights(frequencies, distances):
    """Complex ``c/(4 pi f D) exp(-j 2 pi f D / c)`` with f on a new axis.

    ``distances`` has shape (..., N_r, 1, N_u, N_b) style layout with a
    singleton frequency axis at position -3; frequencies fill that axis.
    """
    d = np.asarray(distances, dtype=float)
    if np.any(d <= 0):
        raise DomainError("calibrated radiator distance must be positive; "
                          f"min is {d.min():.4g} m")
    f = np.asarray(frequencies, dtype=float).reshape(-1, 1, 1)
    return SPEED_OF_LIGHT / (4 * np.pi * f * d) * np.exp(-2j * np.pi * f * d / SPEED_OF_LIGHT)


def calibrated_distances(bundle):
    """``Delta D + depth`` per (ray, radiator), shape (N_a, N_r, 1, N_u, N_b)."""
    return bundle.calibration[:, None, None, :, :] + bundle.depths[None, :, None, None, None]


def accumulated_transmittance(alpha, depths, calibration, frequencies):
    """Complex transmittance of every radiator.

    Parameters
    ----------
    alpha : DiffTensor, shape (..., N_a, N_r, N_c, N_u, N_b)
    depths : (N_r,) cumulative radiator depths in meters
    calibration : (N_a, N_u, N_b) path-length corrections
    frequencies : (N_c,) Hz

    Returns
    -------
    ComplexPair with the shape of ``alpha``; the product over upstream
    transmittances is exclusive, so the first radiator sees all ones.
    """
    alpha = T.as_tensor(alpha)
    n_a, n_r = alpha.shape[-5], alpha.shape[-4]
    calibration = np.asarray(calibration, dtype=float)
    depths = np.asarray(depths, dtype=float)
    if calibration.shape[0] != n_a or depths.shape != (n_r,):
        raise DimensionError(
            f"alpha has N_a={n_a}, N_r={n_r} but calibration axis 0 is {calibration.shape[0]} "
            f"and depths has shape {depths.shape}")
    dist = calibration[:, None, None, :, :] + depths[None, :, None, None, None]
    fs = free_space_weights(frequencies, dist)
    beta = T.sub(T.as_tensor(1.0, like=alpha), alpha)
    prod = T.cumprod_exclusive(beta, axis=-4)
    dtype = alpha.dtype
    return ComplexPair(T.mul(prod, T.tensor(fs.real.astype(dtype))),
                       T.mul(prod, T.tensor(fs.imag.astype(dtype))))


def aggregate(field, bundle, frequencies):
    """Predicted downlink channel ``sum_ij alpha_ij T_ij C_ij``.

    ``frequencies`` is the downlink subcarrier list (or an
    :class:`~ckmfield.channel.OfdmGrid`). Returns a ComplexPair of shape
    ``(N_c, N_u, N_b)`` or ``(B, N_c, N_u, N_b)`` for batched fields.
    """
    if hasattr(frequencies, "downlink_frequencies"):
        frequencies = frequencies.downlink_frequencies()
    n_a, n_r = bundle.n_rays, bundle.n_radiators
    shape = field.sigma.shape
    if shape[-4] != n_a * n_r:
        raise DimensionError(f"field radiator axis has {shape[-4]} entries, bundle has N_a*N_r={n_a * n_r}")
    if shape[-3] != len(frequencies):
        raise DimensionError(f"field frequency axis has {shape[-3]} entries, grid has {len(frequencies)}")
    lead = shape[:-4]
    split = lead + (n_a, n_r) + shape[-3:]
    sigma = T.reshape(field.sigma, split)
    coeffs = field.coeffs.reshape(split)
    # beta = exp(-sigma) directly is better conditioned than 1 - alpha for large sigma
    alpha = absorption(sigma)
    beta = T.exp(T.neg(sigma))
    prod = T.cumprod_exclusive(beta, axis=-4)
    fs = free_space_weights(frequencies, calibrated_distances(bundle))
    dtype = sigma.dtype
    fs_pair = ComplexPair(T.tensor(fs.real.astype(dtype)), T.tensor(fs.imag.astype(dtype)))
    weight = T.mul(alpha, prod)
    terms = complex_mul(coeffs, fs_pair).scale_real(weight)
    axes = (len(lead), len(lead) + 1)
    return ComplexPair(T.reduce_sum(terms.re, axes), T.reduce_sum(terms.im, axes))


def render_numpy(sigma, coeffs, bundle, frequencies):
    """Plain numpy reference of :func:`aggregate` for a single sample (complex ``coeffs``)."""
    n_a, n_r = bundle.n_rays, bundle.n_radiators
    sigma = np.asarray(sigma, dtype=float).reshape(n_a, n_r, *np.shape(sigma)[-3:])
    coeffs = np.asarray(coeffs).reshape(sigma.shape)
    alpha = 1.0 - np.exp(-sigma)
    beta = np.exp(-sigma)
    prod = np.concatenate([np.ones_like(beta[:, :1]), np.cumprod(beta, axis=1)[:, :-1]], axis=1)
    fs = free_space_weights(frequencies, calibrated_distances(bundle))
    return (alpha * prod * fs * coeffs).sum(axis=(0, 1))
