"""Gradient-check suite and latency/FLOP benchmarks used by the CLI."""
from __future__ import annotations

import time

import numpy as np

from . import render, sampler, wirare
from . import tensor as T
from .channel import ArrayGeometry, SPEED_OF_LIGHT
from .cplx import ComplexPair, abs2, complex_mul
from .gradcheck import grad_check
from .metrics import flop_count
from .training import nmse_loss

OP_TOL = 1e-4
MODEL_TOL = 1e-3
STEP = 1e-5


def _leaf(rng, *shape, lo=-1.0, hi=1.0, name=None):
    return T.DiffTensor(rng.uniform(lo, hi, shape), requires_grad=True, name=name)


def _probe(rng, shape):
    """Fixed random weights turning a tensor into a scalar (checks the full VJP)."""
    return T.DiffTensor(rng.standard_normal(shape))


def _weighted(out, w):
    return T.sum_all(T.mul(out, w))


def micro_setup(seed=0, init="random"):
    """Micro configuration: 2 rays x 3 radiators, 4 subcarriers, 2x2 / 2x2 arrays, float64."""
    cfg = wirare.preset("micro")
    rx = ArrayGeometry(2, 2, 0.06)
    bundle = sampler.RayBundle.build(cfg.n_rays, cfg.n_radiators, 3.0, rx, cfg.n_tx)
    freqs = 2.465e9 + (np.arange(cfg.n_sub) - 1.5) * 1.25e6
    rng = np.random.default_rng(seed + 1)
    up = rng.standard_normal((1, 2 * cfg.n_sub, cfg.n_rx, cfg.n_tx))
    truth = (rng.standard_normal((1, cfg.n_sub, cfg.n_rx, cfg.n_tx))
             + 1j * rng.standard_normal((1, cfg.n_sub, cfg.n_rx, cfg.n_tx))) * 1e-2
    params = wirare.init_params(cfg, seed, init)
    return cfg, bundle, freqs, up, truth, params


def op_checks(seed=0, max_entries=None):
    """Yield ``(name, f, leaves)`` for every differentiable primitive and composite layer."""
    rng = np.random.default_rng(seed)
    a = _leaf(rng, 3, 4, name="a")
    b = _leaf(rng, 3, 4, name="b")
    bb = _leaf(rng, 4, name="b_row")
    pos = _leaf(rng, 3, 4, lo=0.5, hi=2.0, name="pos")
    w34 = _probe(rng, (3, 4))
    yield "add_broadcast", lambda: _weighted(T.add(a, bb), w34), [a, bb]
    yield "sub", lambda: _weighted(T.sub(a, b), w34), [a, b]
    yield "mul_broadcast", lambda: _weighted(T.mul(a, bb), w34), [a, bb]
    yield "div", lambda: _weighted(T.div(a, pos), w34), [a, pos]
    yield "exp", lambda: _weighted(T.exp(a), w34), [a]
    yield "square", lambda: _weighted(T.square(a), w34), [a]
    yield "gelu", lambda: _weighted(T.gelu(a), w34), [a]
    yield "softplus", lambda: _weighted(T.softplus(a), w34), [a]
    w3 = _probe(rng, (3,))
    yield "reduce_sum", lambda: _weighted(T.reduce_sum(a, 1), w3), [a]
    w43 = _probe(rng, (4, 3))
    yield "transpose", lambda: _weighted(T.transpose(a, (1, 0)), w43), [a]
    w64 = _probe(rng, (6, 4))
    yield "concat", lambda: _weighted(T.concat([a, b], 0), w64), [a, b]
    w22 = _probe(rng, (2, 2))
    yield "index", lambda: _weighted(T.index(a, (slice(1, 3), slice(0, 4, 2))), w22), [a]
    x5 = _leaf(rng, 2, 5, 3, lo=0.2, hi=1.5, name="x")
    w5 = _probe(rng, (2, 5, 3))
    yield "cumprod_exclusive", lambda: _weighted(T.cumprod_exclusive(x5, 1), w5), [x5]
    W = _leaf(rng, 5, 4, name="W")
    bias = _leaf(rng, 5, name="bias")
    w35 = _probe(rng, (3, 5))
    yield "linear", lambda: _weighted(T.linear(a, W, bias), w35), [a, W, bias]

    img = _leaf(rng, 2, 3, 5, 6, name="img")
    k = _leaf(rng, 4, 3, 3, 3, name="kernel")
    kb = _leaf(rng, 4, name="kbias")
    wc1 = _probe(rng, (2, 4, 5, 6))
    wc2 = _probe(rng, (2, 4, 3, 3))
    yield "conv2d", lambda: _weighted(T.conv2d(img, k, kb), wc1), [img, k, kb]
    yield "conv2d_stride2", lambda: _weighted(T.conv2d(img, k, kb, stride=2), wc2), [img, k, kb]
    k1 = _leaf(rng, 4, 3, 1, 1, name="k1")
    yield "conv2d_1x1", lambda: _weighted(T.conv2d_1x1(img, k1, kb), wc1), [img, k1, kb]
    wu = _probe(rng, (2, 3, 9, 12))
    yield "upsample_crop", lambda: _weighted(T.upsample_nearest2x(img, (9, 12)), wu), [img]
    gam = _leaf(rng, 4, lo=0.5, hi=1.5, name="gamma")
    bet = _leaf(rng, 4, name="beta")
    img4 = _leaf(rng, 2, 4, 3, 5, name="img4")
    wg = _probe(rng, (2, 4, 3, 5))
    yield "group_norm", lambda: _weighted(T.group_norm(img4, 2, gam, bet), wg), [img4, gam, bet]
    wp = _probe(rng, (2, 4))
    yield "mean_pool_spatial", lambda: _weighted(T.mean_pool_spatial(img4), wp), [img4]

    zr, zi = _leaf(rng, 3, 4, name="z.re"), _leaf(rng, 3, 4, name="z.im")
    vr, vi = _leaf(rng, 3, 4, name="v.re"), _leaf(rng, 3, 4, name="v.im")
    yield "complex_mul", (lambda: _weighted(abs2(complex_mul(ComplexPair(zr, zi), ComplexPair(vr, vi))), w34)), \
        [zr, zi, vr, vi]

    # renderer pieces
    rx = ArrayGeometry(2, 2, 0.06)
    bundle = sampler.RayBundle.build(2, 3, 3.0, rx, 2)
    freqs = 2.465e9 + np.array([-1.0, 1.0]) * 1e6
    shape = (6, 2, 4, 2)
    sig = _leaf(rng, *shape, lo=0.05, hi=2.0, name="sigma")
    cr, ci = _leaf(rng, *shape, name="C.re"), _leaf(rng, *shape, name="C.im")
    ws = _probe(rng, shape)
    yield "absorption", lambda: _weighted(render.absorption(sig), ws), [sig]
    al = _leaf(rng, 2, 3, 2, 4, 2, lo=0.0, hi=0.9, name="alpha")
    wt = _probe(rng, (2, 3, 2, 4, 2))

    def trans():
        t = render.accumulated_transmittance(al, bundle.depths, bundle.calibration, freqs)
        return T.add(_weighted(t.re, wt), _weighted(t.im, wt))

    yield "accumulated_transmittance", trans, [al]
    scale = 4 * np.pi * freqs[0] * 3.0 / SPEED_OF_LIGHT
    truth = (rng.standard_normal((2, 4, 2)) + 1j * rng.standard_normal((2, 4, 2))) / scale

    def agg():
        h = render.aggregate(render.RadiatorField(sig, ComplexPair(cr, ci)), bundle, freqs)
        return nmse_loss(h, truth)

    yield "aggregate+nmse", agg, [sig, cr, ci]

    # network layers (micro config, random init so no branch is zeroed)
    cfg, mb, mf, up, mt, p = micro_setup(seed, "random")
    fghz = mf / 1e9
    feat = _leaf(rng, 3, 8, 2, 4, name="features")
    wf = _probe(rng, (3, 8, 2, 4))
    yield "fca_modulate", lambda: _weighted(wirare.fca_modulate(feat, fghz, p, "mp.fca0"), wf), \
        [feat] + [p[k] for k in p if k.startswith("mp.fca0")]
    yield "residual_keep", lambda: _weighted(wirare.residual_block(feat, p, "mp.block0", "keep"), wf), \
        [feat] + [p[k] for k in p if k.startswith("mp.block0")]
    feat11 = _leaf(rng, 3, 11, 2, 4, name="features11")
    wd = _probe(rng, (3, 16, 1, 2))
    yield "residual_down", lambda: _weighted(wirare.residual_block(feat11, p, "ac.down", "down"), wd), \
        [feat11] + [p[k] for k in p if k.startswith("ac.down")]
    feat16 = _leaf(rng, 3, 16, 1, 2, name="features16")
    yield "residual_up", lambda: _weighted(wirare.residual_block(feat16, p, "ac.up", "up"), wf), \
        [feat16] + [p[k] for k in p if k.startswith("ac.up")]
    q = _leaf(rng, 6, 8, 4, 4, name="queries")
    gamma, eta = wirare.indicators(mb.directions, mb.intervals, 1, cfg.n_sub, cfg.n_rx, cfg.n_tx)
    wq = _probe(rng, (6, 8, 4, 4))
    yield "shape_angular", lambda: _weighted(wirare.shape_angular(q, gamma, p, cfg), wq), \
        [q] + [p[k] for k in p if k.startswith("shape_ang")]
    yield "shape_radial", lambda: _weighted(wirare.shape_radial(q, eta, p, cfg), wq), \
        [q] + [p[k] for k in p if k.startswith("shape_rad")]
    wm = _probe(rng, (6, 4, 4, 4))

    def mp():
        s, trunk = wirare.mp_forward(q, fghz, p, cfg)
        return T.add(_weighted(s, wm), T.scale(T.sum_all(T.square(trunk)), 0.01))

    yield "mp_forward", mp, [q] + [p[k] for k in p if k.startswith("mp.")]
    trunk = _leaf(rng, 6, 8, 4, 4, name="trunk")

    def ac():
        c = wirare.ac_forward(trunk, gamma, fghz, p, cfg)
        return T.add(_weighted(c.re, wm), _weighted(c.im, wm))

    yield "ac_forward", ac, [trunk] + [p[k] for k in p if k.startswith("ac.")]


def model_check(seed=0, max_entries=None):
    """Full forward + render + NMSE on the micro configuration against every parameter."""
    cfg, bundle, freqs, up, truth, params = micro_setup(seed, "random")

    def f():
        field = wirare.wirare_forward(up, bundle, freqs / 1e9, params, cfg)
        return nmse_loss(render.aggregate(field, bundle, freqs), truth)

    return grad_check(f, list(params.values()), step=STEP, tolerance=MODEL_TOL,
                      max_entries=max_entries, seed=seed)


def run_gradchecks(seed=0, max_entries=24):
    """All per-op checks (tolerance 1e-4) plus the full-model check (1e-3)."""
    out = []
    for name, f, leaves in op_checks(seed):
        out.append((name, grad_check(f, leaves, step=STEP, tolerance=OP_TOL, max_entries=max_entries, seed=seed)))
    out.append(("wirare_forward+nmse", model_check(seed, max_entries)))
    return out


def bench_presets(names, repeat=1, seed=0):
    """Latency of one forward pass (one sample), analytic FLOPs and parameter count per preset."""
    rows = []
    for name in names:
        cfg = wirare.preset(name)
        params = wirare.init_params(cfg, seed)
        rx = ArrayGeometry(2, 2, 0.06) if cfg.n_rx == 4 else ArrayGeometry(1, cfg.n_rx, 0.06)
        bundle = sampler.RayBundle.build(cfg.n_rays, cfg.n_radiators, 9.0, rx, cfg.n_tx)
        freqs = 2.465e9 + (np.arange(cfg.n_sub) - (cfg.n_sub - 1) / 2) * 312.5e3
        x = np.random.default_rng(seed).standard_normal((1, 2 * cfg.n_sub, cfg.n_rx, cfg.n_tx))
        times = []
        with T.no_grad():
            for _ in range(max(1, repeat)):
                t0 = time.perf_counter()
                field = wirare.wirare_forward(x, bundle, freqs / 1e9, params, cfg)
                render.aggregate(field, bundle, freqs)
                times.append(time.perf_counter() - t0)
        rows.append({"model": name, "latency_ms": 1e3 * float(np.median(times)),
                     "gflops": flop_count(cfg)["total"] / 1e9, "params_m": wirare.param_count(params) / 1e6})
    return rows
