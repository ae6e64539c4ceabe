"""Evaluation metrics, noise injection and FLOP accounting."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DimensionError, DomainError, NumericalError


def _as_batch(x):
    x = np.asarray(x)
    if x.ndim == 3:
        return x[None], True
    if x.ndim != 4:
        raise DimensionError(f"expected (N_c, N_u, N_b) or (B, N_c, N_u, N_b), got shape {x.shape}")
    return x, False


# PSNR ------------------------------------------------------------------------

def psnr(pred, truth):
    """``-10 log10(||pred - truth||^2 / ||truth||^2)`` per sample, +inf for exact matches."""
    p, single = _as_batch(pred)
    t, _ = _as_batch(truth)
    if p.shape != t.shape:
        raise DimensionError(f"psnr: prediction {p.shape} and truth {t.shape} differ")
    t = t.astype(np.complex128)
    energy = (np.abs(t) ** 2).sum(axis=(1, 2, 3))
    if np.any(energy == 0):
        raise DomainError("psnr: ground truth has zero energy")
    err = (np.abs(p - t) ** 2).sum(axis=(1, 2, 3))
    with np.errstate(divide="ignore"):
        out = -10.0 * np.log10(err / energy)
    return float(out[0]) if single else out


def finite_median(values):
    """Median ignoring +inf sentinels (exact reconstructions)."""
    v = np.asarray(values, dtype=float)
    v = v[np.isfinite(v)]
    return float(np.median(v)) if v.size else math.inf


# SGCS ------------------------------------------------------------------------

def dominant_eigvec(A, seed=0, tol=1e-10, max_iter=10_000, return_info=False):
    """Dominant eigenvector of Hermitian PSD matrices ``A`` (..., n, n) by power iteration.

    Iterates on ``A`` and, whenever progress stalls, on a repeatedly squared
    copy of ``A`` (same eigenvectors, widened spectral gap). Convergence is
    declared when ``||A v - (v^H A v) v|| <= tol * ||A||_2`` for every matrix.
    """
    A = np.asarray(A, dtype=np.complex128)
    shape = A.shape[:-2]
    n = A.shape[-1]
    A2 = A.reshape(-1, n, n)
    m = A2.shape[0]
    rng = np.random.default_rng(seed)
    v = rng.standard_normal((m, n)) + 1j * rng.standard_normal((m, n))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    scale = np.linalg.norm(A2, ord=2, axis=(1, 2)) if m else np.zeros(0)
    zero = scale == 0
    if np.any(zero):
        raise DomainError("dominant_eigvec: zero matrix has no dominant eigenvector")
    P = A2 / scale[:, None, None]
    done = np.zeros(m, dtype=bool)
    res = np.full(m, np.inf)
    it = 0
    while it < max_iter:
        for _ in range(8):
            v = np.einsum("mij,mj->mi", P, v)
            v /= np.linalg.norm(v, axis=1, keepdims=True)
            it += 1
        Av = np.einsum("mij,mj->mi", A2, v)
        lam = np.einsum("mi,mi->m", v.conj(), Av).real
        res = np.linalg.norm(Av - lam[:, None] * v, axis=1) / scale
        done = res <= tol
        if done.all():
            break
        # square the iteration matrix to accelerate slow (small-gap) cases
        P = P @ P
        P /= np.linalg.norm(P, axis=(1, 2), keepdims=True)
    if not done.all():
        ev = np.linalg.eigvalsh(A2[~done])
        gap = ev[:, -2] / np.maximum(ev[:, -1], 1e-300)
        raise NumericalError(
            f"power iteration did not converge in {max_iter} iterations for {int((~done).sum())} matrices; "
            f"worst residual {res.max():.3e}, eigenvalue ratio lambda2/lambda1 up to {gap.max():.6f}")
    v = v.reshape(shape + (n,))
    if return_info:
        return v, {"iterations": it, "residual": float(res.max(initial=0.0))}
    return v


def _gram(H, side):
    if side == "right":
        return np.conj(np.swapaxes(H, -1, -2)) @ H
    if side == "left":
        return H @ np.conj(np.swapaxes(H, -1, -2))
    raise ConfigError(f"side must be 'right' or 'left', got {side!r}")


def sgcs(pred, truth, side="right", seed=0, per_subcarrier=False):
    """Squared generalised cosine similarity of dominant eigenvectors, averaged over subcarriers.

    ``side="right"`` uses eigenvectors of ``H^H H`` (transmit side),
    ``"left"`` those of ``H H^H``. Returns one value per sample.
    """
    p, single = _as_batch(pred)
    t, _ = _as_batch(truth)
    if p.shape != t.shape:
        raise DimensionError(f"sgcs: prediction {p.shape} and truth {t.shape} differ")
    p = p.astype(np.complex128)
    t = t.astype(np.complex128)
    w = dominant_eigvec(_gram(t, side), seed=seed)
    wh = dominant_eigvec(_gram(p, side), seed=seed + 1)
    num = np.abs(np.einsum("...i,...i->...", w.conj(), wh)) ** 2
    den = (np.abs(w) ** 2).sum(-1) * (np.abs(wh) ** 2).sum(-1)
    val = np.clip(num / den, 0.0, 1.0)
    if per_subcarrier:
        return val[0] if single else val
    out = val.mean(axis=-1)
    return float(out[0]) if single else out


# spectral efficiency -----------------------------------------------------------

def dft_codebook(n):
    """Unit-norm columns of the n-point DFT matrix."""
    k = np.arange(n)
    return np.exp(-2j * np.pi * np.outer(k, k) / n) / math.sqrt(n)


def beam_gains(H, W=None, F=None):
    """Mean over subcarriers of ``|w^H H f|^2`` for every codebook pair, shape (..., |W|, |F|)."""
    H = np.asarray(H, dtype=np.complex128)
    W = dft_codebook(H.shape[-2]) if W is None else W
    F = dft_codebook(H.shape[-1]) if F is None else F
    G = np.conj(W.T) @ H @ F
    return (np.abs(G) ** 2).mean(axis=-3)


def select_beams(H):
    """Index pair ``(w, f)`` maximising the mean beam gain; ties go to the lowest flat index."""
    g = beam_gains(H)
    flat = np.argmax(g.reshape(g.shape[:-2] + (-1,)), axis=-1)
    return np.unravel_index(flat, g.shape[-2:])


def spectral_efficiency(pred, truth, gamma_db=10.0, normalize=False):
    """Achievable rate (bps/Hz) with beams chosen on ``pred`` and evaluated on ``truth``.

    With ``normalize=True`` both channels are scaled per sample so the
    true channel has unit mean entry power, i.e. ``gamma`` becomes the
    per-antenna receive SNR.
    """
    p, single = _as_batch(pred)
    t, _ = _as_batch(truth)
    if p.shape != t.shape:
        raise DimensionError(f"spectral_efficiency: prediction {p.shape} and truth {t.shape} differ")
    t = t.astype(np.complex128)
    p = p.astype(np.complex128)
    if normalize:
        power = (np.abs(t) ** 2).mean(axis=(1, 2, 3))
        s = np.where(power > 0, 1.0 / np.sqrt(np.where(power > 0, power, 1.0)), 0.0)
        t = t * s[:, None, None, None]
        p = p * s[:, None, None, None]
    gamma = 10.0 ** (gamma_db / 10.0)
    W = dft_codebook(t.shape[-2])
    F = dft_codebook(t.shape[-1])
    wi, fi = select_beams(p)
    w = W[:, wi].T                                   # (B, N_u)
    f = F[:, fi].T                                   # (B, N_b)
    y = np.einsum("bu,bcuk,bk->bc", w.conj(), t, f)
    rate = np.log2(1.0 + gamma * np.abs(y) ** 2).mean(axis=-1)
    return float(rate[0]) if single else rate


# ESNR -----------------------------------------------------------------------

def inject_esnr(uplink, esnr_db, seed=0):
    """Add circular Gaussian noise with exactly the requested energy ratio per sample.

    ``esnr_db = inf`` (or ``None``) returns an unchanged copy. Each sample
    ``i`` of a batch draws from ``SeedSequence([seed, i])``.
    """
    x, single = _as_batch(uplink)
    out = np.array(x, dtype=np.complex128)
    if esnr_db is None or esnr_db == math.inf:
        return (out[0] if single else out).astype(np.asarray(uplink).dtype)
    if not math.isfinite(esnr_db):
        raise DomainError(f"ESNR must be finite or +inf, got {esnr_db}")
    target = 10.0 ** (-esnr_db / 10.0)
    for i in range(out.shape[0]):
        rng = np.random.default_rng(np.random.SeedSequence([int(seed), i]))
        noise = (rng.standard_normal(out.shape[1:]) + 1j * rng.standard_normal(out.shape[1:])) / math.sqrt(2.0)
        e_sig = float((np.abs(out[i]) ** 2).sum())
        e_noise = float((np.abs(noise) ** 2).sum())
        out[i] = out[i] + noise * math.sqrt(target * e_sig / e_noise)
    return out[0] if single else out


def measured_esnr(clean, noisy):
    clean = np.asarray(clean, dtype=np.complex128)
    noise = np.asarray(noisy, dtype=np.complex128) - clean
    return 10.0 * math.log10((np.abs(clean) ** 2).sum() / (np.abs(noise) ** 2).sum())


# FLOPs -----------------------------------------------------------------------

GN_FLOPS = 8       # per element: mean, centre, square, var, scale, shift ...
GELU_FLOPS = 8     # per element
SOFTPLUS_FLOPS = 4
RENDER_FLOPS = 24  # per radiator entry: absorption, cumprod, free-space product, complex MAC


def _conv_flops(n, cin, cout, k, ho, wo):
    return n * ho * wo * cout * (2 * cin * k * k)


def flop_count(cfg, batch=1, per_ray_angular=True):
    """Forward FLOPs of network plus renderer for ``batch`` samples.

    Convolutions and fully-connected layers are counted exactly
    (multiply and add per weight, plus bias); normalisation and activation
    layers use fixed per-element costs. ``per_ray_angular`` mirrors the
    forward pass option: the angular shaping stage then runs on one query
    per ray instead of one per radiator. Returns a dict with a breakdown
    and the ``total``.
    """
    n = batch * cfg.n_rays * cfg.n_radiators
    n_ang = batch * cfg.n_rays if per_ray_angular else n
    h, w = cfg.n_rx, cfg.n_tx
    hw = h * w
    c2 = 2 * cfg.n_sub
    nh = cfg.hidden
    sw = cfg.shaping_width
    out = {"shaping": 0, "mp": 0, "ac": 0, "fca": 0, "render": 0}

    def conv(part, nimg, cin, cout, k, ho, wo):
        out[part] += _conv_flops(nimg, cin, cout, k, ho, wo) + nimg * ho * wo * cout

    def act(part, count):
        out[part] += (GN_FLOPS + GELU_FLOPS) * count

    def fca(c, hh, ww):
        nin = c + cfg.n_sub
        out["fca"] += n * (c * hh * ww)                                   # mean pool
        out["fca"] += n * (2 * nin * nh + nh + 2 * nh * nh + nh + 2 * nh * 2 * c + 2 * c)
        out["fca"] += n * 2 * (GN_FLOPS + GELU_FLOPS) * nh
        out["fca"] += n * 2 * c * hh * ww                                 # w * x + b

    def block(part, cin, cout, ho, wo, stride_in_hw, shortcut):
        conv(part, n, cin, cout, 3, ho, wo)
        act(part, n * cout * ho * wo)
        conv(part, n, cout, cout, 3, ho, wo)
        out[part] += GN_FLOPS * n * cout * ho * wo
        if shortcut:
            conv(part, n, cin, cout, 1, ho, wo)
        out[part] += (1 + GELU_FLOPS) * n * cout * ho * wo

    # shaping
    conv("shaping", n_ang, c2 + 3, sw, 3, h, w)
    act("shaping", n_ang * sw * hw)
    for _ in range(cfg.shaping_layers - 1):
        conv("shaping", n_ang, sw, sw, 3, h, w)
        act("shaping", n_ang * sw * hw)
    conv("shaping", n_ang, sw, c2, 3, h, w)
    nr_img = batch * cfg.n_rays
    conv("shaping", nr_img, 2 * cfg.n_radiators, sw, 3, c2, hw)
    act("shaping", nr_img * sw * c2 * hw)
    for _ in range(cfg.shaping_layers - 1):
        conv("shaping", nr_img, sw, sw, 3, c2, hw)
        act("shaping", nr_img * sw * c2 * hw)
    conv("shaping", nr_img, sw, cfg.n_radiators, 3, c2, hw)
    out["shaping"] += (n_ang + n) * c2 * hw                               # residual adds

    # material branch
    conv("mp", n, c2, nh, 3, h, w)
    act("mp", n * nh * hw)
    for _ in range(cfg.n_mp_blocks):
        block("mp", nh, nh, h, w, 1, False)
        fca(nh, h, w)
    conv("mp", n, nh, cfg.n_sub, 3, h, w)
    out["mp"] += SOFTPLUS_FLOPS * n * cfg.n_sub * hw

    # coefficient branch
    hd = nh * cfg.down_mult
    h2, w2 = (h + 1) // 2, (w + 1) // 2
    block("ac", nh + 3, hd, h2, w2, 2, True)
    fca(hd, h2, w2)
    block("ac", hd, nh, 2 * h2, 2 * w2, 1, hd != nh)
    fca(nh, h, w)
    conv("ac", n, nh, c2, 3, h, w)

    out["render"] = RENDER_FLOPS * n * cfg.n_sub * hw
    out["total"] = sum(out.values())
    return out


def complexity_order(cfg):
    """Leading-order cost ``N_a N_r N_u N_b (N_h (L N_h + N_c) + N_r N_c)`` (no constants)."""
    return (cfg.n_rays * cfg.n_radiators * cfg.n_rx * cfg.n_tx
            * (cfg.hidden * (cfg.depth * cfg.hidden + cfg.n_sub) + cfg.n_radiators * cfg.n_sub))


# reports ---------------------------------------------------------------------

CDF_GRID = np.linspace(0.0, 1.0, 21)


def box_summary(values):
    """Median, quartiles and 1.5-IQR whiskers (clipped to the data) of finite values."""
    v = np.sort(np.asarray(values, dtype=float))
    v = v[np.isfinite(v)]
    if v.size == 0:
        return {"count": 0}
    q1, med, q3 = np.percentile(v, [25, 50, 75])
    iqr = q3 - q1
    lo = v[v >= q1 - 1.5 * iqr].min()
    hi = v[v <= q3 + 1.5 * iqr].max()
    return {"count": int(v.size), "median": float(med), "q1": float(q1), "q3": float(q3),
            "lower_whisker": float(lo), "upper_whisker": float(hi), "mean": float(v.mean()),
            "cdf": {"p": [float(p) for p in CDF_GRID], "value": [float(x) for x in np.quantile(v, CDF_GRID)]}}


@dataclass
class EvalReport:
    psnr: np.ndarray
    sgcs: np.ndarray
    se: np.ndarray
    se_perfect: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if np.any((self.sgcs < 0) | (self.sgcs > 1)):
            raise DomainError("SGCS values must lie in [0, 1]")
        if np.any(self.se < 0):
            raise DomainError("spectral efficiency must be nonnegative")

    def summary(self):
        return {
            "n_samples": int(self.psnr.size),
            "n_exact": int(np.isposinf(self.psnr).sum()),
            "psnr_db": box_summary(self.psnr),
            "sgcs": box_summary(self.sgcs),
            "spectral_efficiency": box_summary(self.se),
            "spectral_efficiency_perfect_csi": box_summary(self.se_perfect),
            "meta": self.meta,
        }

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["sample", "psnr_db", "sgcs", "spectral_efficiency", "spectral_efficiency_perfect_csi"])
            for i in range(self.psnr.size):
                w.writerow([i, repr(float(self.psnr[i])), repr(float(self.sgcs[i])),
                            repr(float(self.se[i])), repr(float(self.se_perfect[i]))])

    def write_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.summary(), fh, indent=2, sort_keys=True)
            fh.write("\n")


def evaluate(pred, truth, gamma_db=10.0, normalize_se=True, seed=0, meta=None):
    """Per-sample PSNR, SGCS and spectral efficiency (predicted and perfect CSI)."""
    return EvalReport(
        psnr=np.atleast_1d(psnr(pred, truth)),
        sgcs=np.atleast_1d(sgcs(pred, truth, seed=seed)),
        se=np.atleast_1d(spectral_efficiency(pred, truth, gamma_db, normalize_se)),
        se_perfect=np.atleast_1d(spectral_efficiency(truth, truth, gamma_db, normalize_se)),
        meta=dict(meta or {}, gamma_db=gamma_db, se_normalized=normalize_se),
    )


# heatmaps --------------------------------------------------------------------

def write_pgm16(path, grid, lo, hi):
    """Binary 16-bit PGM of ``grid`` mapped linearly from [lo, hi] to [0, 65535]."""
    g = np.asarray(grid, dtype=float)
    span = hi - lo if hi > lo else 1.0
    q = np.clip(np.rint((g - lo) / span * 65535.0), 0, 65535).astype(">u2")
    rows, cols = q.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{cols} {rows}\n65535\n".encode())
        fh.write(q.tobytes())


def read_pgm16(path):
    with open(path, "rb") as fh:
        data = fh.read()
    parts = data.split(b"\n", 3)
    if parts[0] != b"P5":
        raise DomainError(f"{path}: not a binary PGM")
    cols, rows = (int(v) for v in parts[1].split())
    return np.frombuffer(parts[3], dtype=">u2").reshape(rows, cols)


def write_grid_csv(path, grid, xs, ys):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "y", "gain_db"])
        for i, y in enumerate(ys):
            for j, x in enumerate(xs):
                w.writerow([repr(float(x)), repr(float(y)), repr(float(grid[i, j]))])
