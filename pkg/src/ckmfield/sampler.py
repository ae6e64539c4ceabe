"""Ray sampling: spherical Fibonacci directions, radial radiators, distance calibration."""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DimensionError

GOLDEN_RATIO = (1.0 + 5.0 ** 0.5) / 2.0


class CalibrationWarning(UserWarning):
    """A direction passed to the calibration was not unit length and got normalised."""


def sfg_directions(K):
    """Spherical Fibonacci grid of ``K`` unit vectors, shape (K, 3).

    The z coordinates split [-1, 1] into K - 1 equal steps from the north
    pole down; the azimuth advances by the golden ratio each point.
    """
    K = int(K)
    if K < 2:
        raise ConfigError(f"spherical Fibonacci grid needs K >= 2 directions, got {K}")
    k = np.arange(1, K + 1, dtype=float)
    z = 1.0 - 2.0 * (k - 1.0) / (K - 1.0)
    r = np.sqrt(np.clip(1.0 - z * z, 0.0, None))
    # reduce k*Phi mod 1 before the trig call to keep the angle small
    turn = np.mod(k * GOLDEN_RATIO, 1.0)
    return np.stack([r * np.cos(2 * np.pi * turn), r * np.sin(2 * np.pi * turn), z], axis=1)


def ll_directions(resolution_deg):
    """Latitude-longitude grid directions with the two poles kept once each."""
    res = float(resolution_deg)
    if res <= 0 or abs(180.0 / res - round(180.0 / res)) > 1e-9:
        raise ConfigError(f"resolution must divide 180 degrees, got {resolution_deg}")
    n_lat = int(round(180.0 / res))
    n_lon = int(round(360.0 / res))
    lat = np.deg2rad(-90.0 + res * np.arange(1, n_lat))
    lon = np.deg2rad(res * np.arange(n_lon))
    la, lo = np.meshgrid(lat, lon, indexing="ij")
    body = np.stack([np.cos(la) * np.cos(lo), np.cos(la) * np.sin(lo), np.sin(la)], axis=-1).reshape(-1, 3)
    poles = np.array([[0.0, 0.0, -1.0], [0.0, 0.0, 1.0]])
    return np.concatenate([poles[:1], body, poles[1:]], axis=0)


def nearest_neighbor_angles(directions):
    """Angular distance (radians) from each direction to its nearest neighbour."""
    d = np.asarray(directions, dtype=float)
    cos = np.clip(d @ d.T, -1.0, 1.0)
    np.fill_diagonal(cos, -np.inf)
    return np.arccos(np.clip(cos.max(axis=1), -1.0, 1.0))


def uniformity_cv(directions):
    """Coefficient of variation of nearest-neighbour angular distances."""
    a = nearest_neighbor_angles(directions)
    return float(a.std() / a.mean())


def uniform_radial(N_r, range_m):
    """Equal intervals and radiator depths along every ray.

    Returns ``(intervals, depths)``; radiator j (0-based) sits at
    ``(j + 1) * range / N_r`` so no radiator is placed at depth 0.
    """
    N_r = int(N_r)
    if N_r < 1:
        raise ConfigError(f"need at least one radiator per ray, got N_r={N_r}")
    if not range_m > 0:
        raise ConfigError(f"radial range must be positive, got {range_m}")
    step = float(range_m) / N_r
    intervals = np.full(N_r, step)
    depths = step * np.arange(1, N_r + 1)
    return intervals, depths


def distance_calibration(rx, omega, N_b):
    """Per-antenna path-length correction ``-p_u . omega`` replicated over ``N_b`` columns.

    ``rx`` is an :class:`~ckmfield.channel.ArrayGeometry` or an (N_u, 3)
    array of element offsets. Non-unit ``omega`` is normalised and a
    :class:`CalibrationWarning` is issued.
    """
    offsets = rx.offsets() if hasattr(rx, "offsets") else np.asarray(rx, dtype=float)
    omega = np.asarray(omega, dtype=float)
    norm = np.linalg.norm(omega)
    if norm == 0:
        raise ConfigError("direction must be non-zero")
    if abs(norm - 1.0) > 1e-12:
        warnings.warn(f"direction norm {norm:.6g} != 1, normalising", CalibrationWarning, stacklevel=2)
        omega = omega / norm
    dd = -offsets @ omega
    return np.repeat(dd[:, None], int(N_b), axis=1)


@dataclass
class RayBundle:
    """Sampling sets shared by every query: directions, radial grid and calibration.

    Attributes
    ----------
    directions : (N_a, 3)
    intervals : (N_r,) radial step lengths
    depths : (N_r,) cumulative radiator depths
    calibration : (N_a, N_u, N_b) path-length corrections
    """

    directions: np.ndarray
    intervals: np.ndarray
    depths: np.ndarray
    calibration: np.ndarray

    def __post_init__(self):
        if self.calibration.shape[0] != self.directions.shape[0]:
            raise DimensionError(
                f"calibration axis 0 ({self.calibration.shape[0]}) must equal N_a ({self.directions.shape[0]})")
        if self.intervals.shape != self.depths.shape:
            raise DimensionError("intervals and depths must both have length N_r")

    @classmethod
    def build(cls, n_rays, n_radiators, range_m, rx, N_b):
        dirs = sfg_directions(n_rays)
        intervals, depths = uniform_radial(n_radiators, range_m)
        offsets = rx.offsets() if hasattr(rx, "offsets") else np.asarray(rx, dtype=float)
        dd = -(dirs @ offsets.T)                                   # (N_a, N_u)
        calib = np.repeat(dd[:, :, None], int(N_b), axis=2)
        bundle = cls(dirs, intervals, depths, calib)
        if np.any(depths[0] + calib.min() <= 0):
            raise ConfigError("first radiator depth does not clear the array aperture; "
                              "increase range or reduce N_r")
        return bundle

    @property
    def n_rays(self):
        return self.directions.shape[0]

    @property
    def n_radiators(self):
        return self.depths.shape[0]
