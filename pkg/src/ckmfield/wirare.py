"""Radiator network: query shaping, material-property and coefficient branches.

The network maps replicated uplink CSI plus ray indicators to a per-radiator
nonnegative ``sigma`` and a complex coefficient ``C``. Every learnable
tensor lives in one ordered ``name -> DiffTensor`` dict so the optimizer,
checkpoint and gradient checks can address parameters by name.
"""
from __future__ import annotations

import math
from collections import OrderedDict
from dataclasses import asdict, dataclass, replace

import numpy as np

from . import tensor as T
from .cplx import ComplexPair
from .errors import ConfigError, DimensionError
from .render import RadiatorField

KERNEL = 3


@dataclass(frozen=True)
class NetConfig:
    """Architecture hyper-parameters.

    ``depth`` counts residual blocks: the coefficient branch always holds
    two (down, up), the material branch the remaining ``depth - 2``. The
    down block widens to ``down_mult * hidden`` channels at half resolution.
    """

    n_sub: int = 8          # N_c
    n_rx: int = 4           # N_u
    n_tx: int = 16          # N_b
    n_rays: int = 16        # N_a
    n_radiators: int = 16   # N_r
    hidden: int = 128       # N_h
    depth: int = 6          # L
    shaping_width: int = 96
    shaping_layers: int = 1
    down_mult: int = 2
    sigma_bias: float = 0.0
    dtype: str = "float32"

    def __post_init__(self):
        for name in ("n_sub", "n_rx", "n_tx", "n_rays", "n_radiators", "hidden", "shaping_width"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.depth < 3:
            raise ConfigError(f"depth must be >= 3 (two coefficient blocks plus one material block), got {self.depth}")
        if self.down_mult < 1:
            raise ConfigError("down_mult must be >= 1")
        if self.shaping_layers < 1:
            raise ConfigError("shaping_layers must be >= 1")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError(f"dtype must be float32 or float64, got {self.dtype!r}")

    @property
    def n_mp_blocks(self):
        return self.depth - 2

    @property
    def np_dtype(self):
        return np.dtype(self.dtype)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        known = {k: v for k, v in d.items() if k in cls.__dataclass_fields__}
        return cls(**known)

    def with_(self, **kw):
        return replace(self, **kw)


def preset(name, **overrides):
    """Named configurations; ``full`` and ``lite`` use the reference array/band dimensions."""
    ref = dict(n_sub=52, n_rx=4, n_tx=16, n_rays=24, n_radiators=32)
    table = {
        "full": dict(ref, hidden=128, depth=6),
        "lite": dict(ref, hidden=32, depth=4),
        "desk": dict(n_sub=8, n_rx=4, n_tx=16, n_rays=16, n_radiators=16, hidden=32, depth=4),
        "micro": dict(n_sub=4, n_rx=4, n_tx=4, n_rays=2, n_radiators=3, hidden=8, depth=3,
                      shaping_width=8, shaping_layers=1, dtype="float64"),
    }
    if name not in table:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(table)}")
    return NetConfig(**dict(table[name], **overrides))


def gn_groups(c):
    """Eight groups, or one per channel for narrow layers."""
    if c < 8:
        return c
    return 8 if c % 8 == 0 else math.gcd(8, c)


# parameter construction --------------------------------------------------------

class _Builder:
    def __init__(self, rng, dtype):
        self.rng = rng
        self.dtype = dtype
        self.params = OrderedDict()

    def _add(self, name, arr):
        self.params[name] = T.DiffTensor(np.ascontiguousarray(arr, dtype=self.dtype), requires_grad=True, name=name)

    def conv(self, name, cin, cout, k=KERNEL, zero=False):
        bound = 1.0 / math.sqrt(cin * k * k)
        if zero:
            self._add(name + ".w", np.zeros((cout, cin, k, k)))
            self._add(name + ".b", np.zeros(cout))
        else:
            self._add(name + ".w", self.rng.uniform(-bound, bound, (cout, cin, k, k)))
            self._add(name + ".b", self.rng.uniform(-bound, bound, cout))

    def gn(self, name, c, gamma=1.0):
        self._add(name + ".g", np.full(c, gamma))
        self._add(name + ".beta", np.zeros(c))

    def fc(self, name, cin, cout):
        bound = 1.0 / math.sqrt(cin)
        self._add(name + ".w", self.rng.uniform(-bound, bound, (cout, cin)))
        self._add(name + ".b", self.rng.uniform(-bound, bound, cout))


def _conv_stack(b, prefix, cin, width, cout, layers, identity):
    b.conv(f"{prefix}.in", cin, width)
    b.gn(f"{prefix}.in_gn", width)
    for i in range(layers - 1):
        b.conv(f"{prefix}.mid{i}", width, width)
        b.gn(f"{prefix}.mid{i}_gn", width)
    b.conv(f"{prefix}.out", width, cout, zero=identity)


def _res_block(b, prefix, cin, cout, mode, identity):
    b.conv(f"{prefix}.conv1", cin, cout)
    b.gn(f"{prefix}.gn1", cout)
    b.conv(f"{prefix}.conv2", cout, cout)
    # zero scale on the last norm makes the main branch vanish at init
    b.gn(f"{prefix}.gn2", cout, gamma=0.0 if identity else 1.0)
    if mode != "keep" or cin != cout:
        b.conv(f"{prefix}.short", cin, cout, k=1)


def _fca(b, prefix, c, n_freq, hidden, identity):
    b.fc(f"{prefix}.fc1", c + n_freq, hidden)
    b.gn(f"{prefix}.gn1", hidden)
    b.fc(f"{prefix}.fc2", hidden, hidden)
    b.gn(f"{prefix}.gn2", hidden)
    b.fc(f"{prefix}.fc3", hidden, 2 * c)
    if identity:
        p = b.params
        p[f"{prefix}.fc3.w"].data[...] = 0.0
        p[f"{prefix}.fc3.b"].data[...] = np.concatenate([np.ones(c), np.zeros(c)])


def init_params(cfg: NetConfig, seed=0, mode="identity"):
    """Build all learnable tensors.

    ``mode="identity"`` zeroes the shaping output convs, the last norm scale
    of every residual block and the FCA weight heads, so the shaping filter
    and every FCA start as exact identities. ``mode="random"`` keeps the
    plain uniform fan-in init everywhere (used by gradient-coverage probes).
    """
    if mode not in ("identity", "random"):
        raise ConfigError(f"init mode must be 'identity' or 'random', got {mode!r}")
    ident = mode == "identity"
    b = _Builder(np.random.default_rng(seed), cfg.np_dtype)
    c2 = 2 * cfg.n_sub
    h = cfg.hidden
    _conv_stack(b, "shape_ang", c2 + 3, cfg.shaping_width, c2, cfg.shaping_layers, ident)
    _conv_stack(b, "shape_rad", 2 * cfg.n_radiators, cfg.shaping_width, cfg.n_radiators, cfg.shaping_layers, ident)
    b.conv("mp.stem", c2, h)
    b.gn("mp.stem_gn", h)
    for i in range(cfg.n_mp_blocks):
        _res_block(b, f"mp.block{i}", h, h, "keep", ident)
        _fca(b, f"mp.fca{i}", h, cfg.n_sub, h, ident)
    b.conv("mp.head", h, cfg.n_sub)
    b.params["mp.head.b"].data[...] += cfg.sigma_bias
    hd = h * cfg.down_mult
    _res_block(b, "ac.down", h + 3, hd, "down", ident)
    _fca(b, "ac.fca_down", hd, cfg.n_sub, h, ident)
    _res_block(b, "ac.up", hd, h, "up", ident)
    _fca(b, "ac.fca_up", h, cfg.n_sub, h, ident)
    b.conv("ac.head", h, c2)
    return b.params


def param_count(params):
    return int(sum(p.data.size for p in params.values()))


def count_parameters(cfg: NetConfig):
    """Parameter count of a freshly built network with this configuration."""
    return param_count(init_params(cfg.with_(dtype="float32"), seed=0))


# forward pieces ----------------------------------------------------------------

def _conv(p, name, x, stride=1):
    return T.conv2d(x, p[name + ".w"], p[name + ".b"], stride=stride)


def _gn(p, name, x):
    g = p[name + ".g"]
    return T.group_norm(x, gn_groups(g.shape[0]), g, p[name + ".beta"])


def _run_stack(p, prefix, x, layers):
    y = T.gelu(_gn(p, f"{prefix}.in_gn", _conv(p, f"{prefix}.in", x)))
    for i in range(layers - 1):
        y = T.gelu(_gn(p, f"{prefix}.mid{i}_gn", _conv(p, f"{prefix}.mid{i}", y)))
    return _conv(p, f"{prefix}.out", y)


def uplink_to_real(uplink):
    """(B, N_c, N_u, N_b) complex -> (B, 2N_c, N_u, N_b) real, real parts first."""
    up = np.asarray(uplink)
    return np.concatenate([up.real, up.imag], axis=-3)


def build_raw_queries(uplink_real, n_rays, n_radiators):
    """Replicate every sample's real uplink grid to all ``n_rays * n_radiators`` radiators.

    ``uplink_real`` has shape (B, 2N_c, N_u, N_b) or (2N_c, N_u, N_b); the
    result is (B * N_a * N_r, 2N_c, N_u, N_b) ordered sample, ray, radiator.
    """
    x = np.asarray(uplink_real)
    if x.ndim == 3:
        x = x[None]
    if x.ndim != 4:
        raise DimensionError(f"uplink must be (B, 2N_c, N_u, N_b), got shape {x.shape}")
    n = n_rays * n_radiators
    rep = np.broadcast_to(x[:, None], (x.shape[0], n) + x.shape[1:])
    return T.DiffTensor(np.ascontiguousarray(rep).reshape((-1,) + x.shape[1:]))


def indicators(directions, intervals, batch, n_sub, n_rx, n_tx, dtype=np.float64):
    """Ray-direction and interval indicator tensors.

    Returns ``gamma`` of shape (B*N_a*N_r, 3, N_u, N_b) and ``eta`` of shape
    (B*N_a, N_r, 2N_c, N_u*N_b).
    """
    d = np.asarray(directions, dtype=dtype)
    delta = np.asarray(intervals, dtype=dtype)
    n_a, n_r = d.shape[0], delta.shape[0]
    g = np.broadcast_to(d[None, :, None, :, None, None], (batch, n_a, n_r, 3, n_rx, n_tx))
    gamma = np.ascontiguousarray(g).reshape(batch * n_a * n_r, 3, n_rx, n_tx)
    e = np.broadcast_to(delta[None, :, None, None], (batch * n_a, n_r, 2 * n_sub, n_rx * n_tx))
    eta = np.ascontiguousarray(e)
    return T.DiffTensor(gamma), T.DiffTensor(eta)


def shape_angular(q, gamma, params, cfg):
    """Angular shaping: conv stack over [q, gamma] added back onto q."""
    if gamma.shape[0] != q.shape[0] or gamma.shape[2:] != q.shape[2:]:
        raise DimensionError(f"gamma shape {gamma.shape} does not match queries {q.shape} on axes 0, 2, 3")
    x = T.concat([q, gamma], axis=1)
    return T.add(q, _run_stack(params, "shape_ang", x, cfg.shaping_layers))


def shape_radial(q_ang, eta, params, cfg):
    """Radial shaping on the (B*N_a, N_r, 2N_c, N_u*N_b) view, returned in query layout."""
    n, c2, nu, nb = q_ang.shape
    r = T.reshape(q_ang, (n // cfg.n_radiators, cfg.n_radiators, c2, nu * nb))
    if eta.shape != r.shape:
        raise DimensionError(f"eta shape {eta.shape} != radial view {r.shape}")
    x = T.concat([r, eta], axis=1)
    out = T.add(r, _run_stack(params, "shape_rad", x, cfg.shaping_layers))
    return T.reshape(out, (n, c2, nu, nb))


def fca_modulate(x, freqs_ghz, params, prefix, enabled=True):
    """Frequency-conditioned per-channel affine map ``w * x + b``.

    ``freqs_ghz`` holds the subcarrier frequencies in GHz, either one
    vector shared by the batch or one row per batch entry; a scalar is
    broadcast to every subcarrier slot.
    """
    if not enabled:
        return x
    B, C = x.shape[0], x.shape[1]
    w1 = params[prefix + ".fc1.w"]
    n_freq = w1.shape[1] - C
    f = np.asarray(freqs_ghz, dtype=x.dtype)
    if f.ndim == 0:
        f = np.full(n_freq, f)
    if f.ndim == 1:
        f = np.broadcast_to(f, (B, f.size))
    if f.shape != (B, n_freq):
        raise DimensionError(f"FCA at {prefix} expects {n_freq} frequencies per entry, got shape {f.shape}")
    pooled = T.mean_pool_spatial(x)
    z = T.concat([pooled, T.DiffTensor(np.ascontiguousarray(f))], axis=1)
    z = T.linear(z, w1, params[prefix + ".fc1.b"])
    z = T.gelu(_gn1d(params, prefix + ".gn1", z))
    z = T.linear(z, params[prefix + ".fc2.w"], params[prefix + ".fc2.b"])
    z = T.gelu(_gn1d(params, prefix + ".gn2", z))
    z = T.linear(z, params[prefix + ".fc3.w"], params[prefix + ".fc3.b"])
    w = T.reshape(T.index(z, (slice(None), slice(0, C))), (B, C, 1, 1))
    b = T.reshape(T.index(z, (slice(None), slice(C, 2 * C))), (B, C, 1, 1))
    return T.add(T.mul(w, x), b)


def fca_groups(c):
    """Group count for the FCA vector norms.

    A pooled vector has no spatial extent, so a group of one feature would
    normalise to zero and one of two to +-1. Groups therefore hold at least
    four features; wide layers still get eight groups.
    """
    g = min(8, c // 4)
    while g > 1 and c % g:
        g -= 1
    return max(g, 1)


def _gn1d(params, name, z):
    g = params[name + ".g"]
    x4 = T.reshape(z, (z.shape[0], z.shape[1], 1, 1))
    return T.reshape(T.group_norm(x4, fca_groups(g.shape[0]), g, params[name + ".beta"]), z.shape)


def residual_block(x, params, prefix, mode="keep"):
    """Two conv/GN stages plus shortcut, then GELU.

    ``down`` uses stride 2 in the first conv and a strided 1x1 shortcut;
    ``up`` first doubles H and W by nearest-neighbour repetition.
    """
    if mode not in ("keep", "down", "up"):
        raise ConfigError(f"residual block mode must be keep, down or up, got {mode!r}")
    stride = 2 if mode == "down" else 1
    if mode == "up":
        x = T.upsample_nearest2x(x)
    y = T.gelu(_gn(params, prefix + ".gn1", _conv(params, prefix + ".conv1", x, stride)))
    y = _gn(params, prefix + ".gn2", _conv(params, prefix + ".conv2", y))
    key = prefix + ".short.w"
    if key in params:
        s = T.conv2d_1x1(x, params[key], params[prefix + ".short.b"], stride=stride)
    else:
        s = x
    return T.gelu(T.add(y, s))


def mp_forward(q, freqs_ghz, params, cfg, fca=True):
    """Material branch; returns (sigma >= 0, trunk features)."""
    x = T.gelu(_gn(params, "mp.stem_gn", _conv(params, "mp.stem", q)))
    for i in range(cfg.n_mp_blocks):
        x = residual_block(x, params, f"mp.block{i}", "keep")
        x = fca_modulate(x, freqs_ghz, params, f"mp.fca{i}", fca)
    sigma = T.softplus(_conv(params, "mp.head", x))
    return sigma, x


def ac_forward(trunk, gamma, freqs_ghz, params, cfg, fca=True):
    """Coefficient branch; returns complex ``C`` as a ComplexPair."""
    hw = trunk.shape[2:]
    x = T.concat([trunk, gamma], axis=1)
    x = residual_block(x, params, "ac.down", "down")
    x = fca_modulate(x, freqs_ghz, params, "ac.fca_down", fca)
    x = residual_block(x, params, "ac.up", "up")
    if x.shape[2:] != hw:
        x = T.index(x, (slice(None), slice(None), slice(0, hw[0]), slice(0, hw[1])))
    x = fca_modulate(x, freqs_ghz, params, "ac.fca_up", fca)
    out = _conv(params, "ac.head", x)
    n = cfg.n_sub
    re = T.index(out, (slice(None), slice(0, n)))
    im = T.index(out, (slice(None), slice(n, 2 * n)))
    return ComplexPair(re, im)


@dataclass
class ForwardTrace:
    """Intermediate tensors of one forward pass (for tests and diagnostics)."""

    raw: T.DiffTensor
    gamma: T.DiffTensor
    eta: T.DiffTensor
    shaped_ang: T.DiffTensor
    shaped: T.DiffTensor


def wirare_forward(uplink_real, bundle, freqs_ghz, params, cfg, fca=True, trace=False, per_ray_angular=True):
    """Full mapping from (normalised, real) uplink CSI to a RadiatorField.

    Parameters
    ----------
    uplink_real : array (B, 2N_c, N_u, N_b)
    bundle : RayBundle
    freqs_ghz : (N_c,) downlink subcarrier frequencies in GHz
    per_ray_angular : bool
        Evaluate the angular shaping stage once per ray (exact; the
        replicated path is kept for verification).

    Returns
    -------
    RadiatorField with sigma/coeffs of shape (B, N_a*N_r, N_c, N_u, N_b),
    and the ForwardTrace when ``trace`` is true.
    """
    x = np.asarray(uplink_real, dtype=cfg.np_dtype)
    if x.ndim == 3:
        x = x[None]
    B = x.shape[0]
    if x.shape[1:] != (2 * cfg.n_sub, cfg.n_rx, cfg.n_tx):
        raise DimensionError(
            f"uplink shape {x.shape[1:]} != expected (2N_c, N_u, N_b) = {(2 * cfg.n_sub, cfg.n_rx, cfg.n_tx)}")
    if bundle.n_rays != cfg.n_rays or bundle.n_radiators != cfg.n_radiators:
        raise DimensionError(
            f"bundle has {bundle.n_rays} rays x {bundle.n_radiators} radiators, "
            f"network expects {cfg.n_rays} x {cfg.n_radiators}")
    gamma, eta = indicators(bundle.directions, bundle.intervals, B, cfg.n_sub, cfg.n_rx, cfg.n_tx, cfg.np_dtype)
    if per_ray_angular:
        # before radial shaping every radiator of a ray holds the same query and
        # direction, so the angular stage runs once per ray and is then broadcast
        q1 = build_raw_queries(x, cfg.n_rays, 1)
        g1, _ = indicators(bundle.directions, bundle.intervals[:1], B, cfg.n_sub, cfg.n_rx, cfg.n_tx, cfg.np_dtype)
        qa1 = shape_angular(q1, g1, params, cfg)
        c2 = 2 * cfg.n_sub
        spread = T.DiffTensor(np.zeros((1, cfg.n_radiators, 1, 1, 1), dtype=cfg.np_dtype))
        qa = T.add(T.reshape(qa1, (qa1.shape[0], 1, c2, cfg.n_rx, cfg.n_tx)), spread)
        qa = T.reshape(qa, (qa1.shape[0] * cfg.n_radiators, c2, cfg.n_rx, cfg.n_tx))
        q = build_raw_queries(x, cfg.n_rays, cfg.n_radiators) if trace else None
    else:
        q = build_raw_queries(x, cfg.n_rays, cfg.n_radiators)
        qa = shape_angular(q, gamma, params, cfg)
    qs = shape_radial(qa, eta, params, cfg)
    sigma, trunk = mp_forward(qs, freqs_ghz, params, cfg, fca)
    coeffs = ac_forward(trunk, gamma, freqs_ghz, params, cfg, fca)
    n = cfg.n_rays * cfg.n_radiators
    out_shape = (B, n, cfg.n_sub, cfg.n_rx, cfg.n_tx)
    field = RadiatorField(T.reshape(sigma, out_shape), coeffs.reshape(out_shape))
    if trace:
        return field, ForwardTrace(q, gamma, eta, qa, qs)
    return field
