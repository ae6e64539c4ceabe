"""End-to-end acceptance checks.

Each test covers one numbered criterion, asserts it at its tolerance and
runtime budget, and records a one-line PASS/FAIL verdict that is printed at
the end of the session (see ``pytest_terminal_summary`` in conftest).
"""
import cmath
import csv
import math
import time

import numpy as np
import pytest
from threadpoolctl import threadpool_limits

from ckmfield import channel as C
from ckmfield import dataio, diagnostics, metrics, render, sampler, wirare
from ckmfield import tensor as T
from ckmfield.cli import evaluate_model, main
from ckmfield.cplx import ComplexPair
from ckmfield.training import Adam, PlateauScheduler, TrainConfig, Trainer, nmse_numpy

from conftest import ACCEPTANCE

# learning probe: 16 rays x 16 radiators as required; widths, batch and lr sized
# so that the run fits in 30 min on one CPU core (~110-150 s per epoch)
PROBE = dict(rays=16, radiators=16, hidden=8, depth=3, shaping_width=8, range=9.0,
             lr=3e-3, batch=2, epochs=12, seed=0)
PROBE_SCENE = dict(n_samples=512, reflection=0.5, max_order=1, seed=0)


def verdict(n, ok, detail):
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE.append(line)
    print(line)
    return ok


# 1 ---------------------------------------------------------------------------------

def test_criterion_1_renderer_reproduces_los_channel():
    t0 = time.perf_counter()
    spec = C.SceneSpec(n_samples=1, max_order=0,
                       tx=C.ArrayGeometry(2, 2, 0.061, center=(0.6, 2.5, 2.0)),
                       rx=C.ArrayGeometry(2, 2, 0.061))
    rx_pos = np.array([3.1, 1.7, 1.1])
    _, down, paths = C.channel_at(spec, rx_pos)
    freqs = down.frequencies
    h_true = down.grid                                              # (N_c, N_u, N_b)
    assert len(paths) == 1

    # ray 0 points at the tx; its radiator j sits at the tx centre and the
    # calibration carries every (rx element, tx element) path length exactly
    d_pair = C.per_antenna_path_lengths(spec.tx, spec.rx.moved_to(rx_pos), spec.tx.center)
    dist = float(np.linalg.norm(np.asarray(spec.tx.center) - rx_pos))
    n_r, j = 12, 9
    intervals = np.full(n_r, dist / (j + 1))
    depths = np.cumsum(intervals)
    toward = (np.asarray(spec.tx.center) - rx_pos) / dist
    dirs = np.stack([toward, np.array([0.0, 0.0, 1.0])])
    calib = np.stack([d_pair - depths[j], np.zeros_like(d_pair)])
    bundle = sampler.RayBundle(dirs, intervals, depths, calib)

    n_c, n_u, n_b = h_true.shape
    sigma = np.zeros((2 * n_r, n_c, n_u, n_b))
    sigma[:j] = 0.05                    # thin medium in front of the source
    sigma[j] = 2.0
    sigma[n_r + 3] = 0.7                # absorbing radiator on the other ray, no radiance
    weight = (1 - math.exp(-2.0)) * math.exp(-0.05 * j)
    coeffs = np.zeros(sigma.shape, dtype=complex)
    coeffs[j] = 1.0 / weight            # one frequency-flat coefficient
    field = render.RadiatorField(T.tensor(sigma), ComplexPair.from_numpy(coeffs))
    got = render.aggregate(field, bundle, freqs).numpy()

    # analytic channel evaluated directly from the free-space factor
    ref = np.empty_like(h_true)
    for k, f in enumerate(freqs):
        for u in range(n_u):
            for m in range(n_b):
                amp, ph = C.free_space_factor(f, d_pair[u, m])
                ref[k, u, m] = amp * cmath.exp(1j * ph)
    np.testing.assert_allclose(h_true, ref, rtol=1e-12)
    per_sub = np.linalg.norm((got - ref).reshape(n_c, -1), axis=1) / np.linalg.norm(ref.reshape(n_c, -1), axis=1)
    dt = time.perf_counter() - t0
    ok = per_sub.max() < 1e-6 and dt < 1.0
    assert verdict(1, ok, f"max per-subcarrier rel. error {per_sub.max():.2e} (< 1e-6), {dt:.2f} s (< 1 s)")


# 2 ---------------------------------------------------------------------------------

def test_criterion_2_gradient_fidelity():
    t0 = time.perf_counter()
    results = diagnostics.run_gradchecks(seed=0, max_entries=24)
    dt = time.perf_counter() - t0
    op_err = max(rep.max_error for name, rep in results[:-1])
    model_err = results[-1][1].max_error
    ok = all(rep.passed for _, rep in results) and op_err < 1e-4 and model_err < 1e-3 and dt < 120
    failed = [name for name, rep in results if not rep.passed]
    assert verdict(2, ok, f"{len(results) - 1} ops max rel. error {op_err:.2e} (< 1e-4), micro model "
                          f"{model_err:.2e} (< 1e-3), {dt:.1f} s (< 120 s) {failed or ''}")


# 3 ---------------------------------------------------------------------------------

def test_criterion_3_sfg_more_uniform_than_ll():
    t0 = time.perf_counter()
    cv_sfg = sampler.uniformity_cv(sampler.sfg_directions(648))
    cv_ll = sampler.uniformity_cv(sampler.ll_directions(10.0))
    dt = time.perf_counter() - t0
    assert verdict(3, cv_sfg < cv_ll and dt < 5, f"CV SFG {cv_sfg:.4f} < LL {cv_ll:.4f}, {dt:.2f} s (< 5 s)")


# 4 and 9 ----------------------------------------------------------------------------

@pytest.fixture(scope="session")
def probe(tmp_path_factory):
    t0 = time.perf_counter()
    spec = C.SceneSpec(**PROBE_SCENE)
    ds = dataio.from_samples(C.generate_dataset(spec), spec.grid, spec.to_dict())
    assert ds.dims == (512, 8, 4, 16)
    train, test = ds.split()
    out = tmp_path_factory.mktemp("probe")
    with threadpool_limits(1):
        trainer = Trainer(train, test, TrainConfig(**PROBE))
        trainer.run(out_dir=out)
    return dict(model=trainer.model, test=test, out=out, seconds=time.perf_counter() - t0)


@pytest.mark.slow
def test_criterion_4_learning_probe(probe):
    test = probe["test"]
    baseline = float(np.median(metrics.psnr(test.uplink, test.downlink)))
    pred = probe["model"].predict(test.uplink)
    psnr = float(np.median(metrics.psnr(pred, test.downlink)))
    sgcs = float(np.median(metrics.sgcs(pred, test.downlink)))
    with open(probe["out"] / "train_log.csv") as fh:
        epochs = int(list(csv.DictReader(fh))[-1]["epoch"])
    minutes = probe["seconds"] / 60
    ok = epochs <= 50 and psnr >= baseline + 3.0 and sgcs >= 0.9 and minutes <= 30
    assert verdict(4, ok, f"{epochs} epochs: median PSNR {psnr:.2f} dB vs copy baseline {baseline:.2f} dB "
                          f"(need +3 dB), median SGCS {sgcs:.3f} (>= 0.9), {minutes:.1f} min (<= 30)")


@pytest.mark.slow
def test_criterion_9_se_monotone_in_esnr(probe):
    t0 = time.perf_counter()
    grid = [6.0, 9.0, 12.0, 15.0, 18.0]
    reports = evaluate_model(probe["model"], probe["test"], grid, seed=0)
    med = [float(np.median(r.se)) for r in reports]
    dt = time.perf_counter() - t0
    ok = all(b >= a for a, b in zip(med, med[1:])) and dt < 300
    assert verdict(9, ok, "median SE " + ", ".join(f"{e:g} dB: {m:.4f}" for e, m in zip(grid, med))
                   + f" bps/Hz, {dt:.1f} s (< 300 s)")


# 5 ---------------------------------------------------------------------------------

def test_criterion_5_metric_identities():
    t0 = time.perf_counter()
    rng = np.random.default_rng(5)
    h = rng.standard_normal((6, 8, 4, 16)) + 1j * rng.standard_normal((6, 8, 4, 16))
    psnr0 = metrics.psnr(np.zeros_like(h), h)
    z = 2.7 * cmath.exp(0.9j)
    sg = metrics.sgcs(z * h, h)
    se = metrics.spectral_efficiency(h, h, gamma_db=10.0)
    wi, fi = metrics.select_beams(h)
    W, F = metrics.dft_codebook(4), metrics.dft_codebook(16)
    g = 10.0
    exhaustive = []
    for b in range(h.shape[0]):
        gains = [[np.mean([abs(W[:, i].conj() @ h[b, c] @ F[:, jj]) ** 2 for c in range(8)])
                  for jj in range(16)] for i in range(4)]
        i, jj = np.unravel_index(int(np.argmax(gains)), (4, 16))
        assert (int(wi[b]), int(fi[b])) == (i, jj)
        exhaustive.append(np.mean([math.log2(1 + g * abs(W[:, i].conj() @ h[b, c] @ F[:, jj]) ** 2)
                                   for c in range(8)]))
    se_err = float(np.max(np.abs(se - exhaustive) / np.asarray(exhaustive)))
    nmse0 = nmse_numpy(h, h)
    dt = time.perf_counter() - t0
    ok = (np.all(psnr0 == 0.0) and np.max(np.abs(sg - 1)) <= 1e-10 and se_err <= 1e-12
          and np.all(nmse0 == 0.0) and dt < 10)
    assert verdict(5, ok, f"PSNR(0) max |{np.abs(psnr0).max():g}| dB, SGCS invariance {np.abs(sg - 1).max():.1e}, "
                          f"SE vs exhaustive {se_err:.1e}, NMSE(truth) {nmse0.max():g}, {dt:.2f} s (< 10 s)")


# 6 ---------------------------------------------------------------------------------

def test_criterion_6_complexity():
    t0 = time.perf_counter()
    desk = wirare.preset("desk")
    ratio = metrics.flop_count(desk.with_(n_tx=32))["total"] / metrics.flop_count(desk)["total"]
    full, lite = wirare.preset("full"), wirare.preset("lite")
    saving = 1 - metrics.flop_count(lite)["total"] / metrics.flop_count(full)["total"]
    p_full = wirare.param_count(wirare.init_params(full)) / 1e6
    p_lite = wirare.param_count(wirare.init_params(lite)) / 1e6
    dt = time.perf_counter() - t0
    ok = (1.85 <= ratio <= 2.15 and saving >= 0.80 and abs(p_full / 3.41 - 1) <= 0.10
          and abs(p_lite / 0.51 - 1) <= 0.10 and dt < 10)
    assert verdict(6, ok, f"N_b doubling FLOP ratio {ratio:.3f}, lite saves {100 * saving:.1f}% (>= 80%), "
                          f"params {p_lite:.3f}M / {p_full:.3f}M (0.51M / 3.41M +-10%), {dt:.1f} s (< 10 s)")


# 7 ---------------------------------------------------------------------------------

def test_criterion_7_single_thread_determinism(tmp_path):
    t0 = time.perf_counter()
    data = tmp_path / "d.bin"
    assert main(["gen-data", "--out", str(data), "--samples", "24", "--seed", "3"]) == 0
    flags = ["--epochs", "1", "--seed", "11", "--quiet"]
    for key in ("rays", "radiators", "hidden", "depth", "lr", "batch"):
        flags += ["--" + key, str(PROBE[key])]
    flags += ["--shaping-width", str(PROBE["shaping_width"])]
    runs = []
    for name in ("a", "b"):
        assert main(["--threads", "1", "train", "--data", str(data), "--out", str(tmp_path / name)] + flags) == 0
        with open(tmp_path / name / "train_log.csv") as fh:
            row = [r for r in csv.DictReader(fh) if r["epoch"] == "1"][0]
        runs.append((row["train_nmse"], row["val_nmse"], (tmp_path / name / "last.ckpt").read_bytes(),
                     (tmp_path / name / "best.ckpt").read_bytes()))
    dt = time.perf_counter() - t0
    same = runs[0] == runs[1]
    ok = same and dt < 300
    assert verdict(7, ok, f"epoch-1 loss {runs[0][0]} vs {runs[1][0]}, checkpoints "
                          f"{'byte-identical' if same else 'differ'}, {dt:.1f} s (< 300 s)")


# 8 ---------------------------------------------------------------------------------

def test_criterion_8_scheduler_and_adam():
    t0 = time.perf_counter()
    sch = PlateauScheduler(5e-5, patience=10, factor=0.9)
    sch.step(0.5)                                   # reference validation
    lrs = [sch.step(0.5) for _ in range(10)]
    sched_ok = lrs[:9] == [5e-5] * 9 and lrs[9] == 4.5e-5

    x0 = np.array([0.25, -1.0, 3.0])
    grad = np.array([2.0, -1e-3, 0.0])
    p = T.tensor(x0.copy(), requires_grad=True)
    p.grad = grad.copy()
    opt = Adam({"p": p}, lr=5e-5, betas=(0.9, 0.999), eps=1e-8)
    opt.step()
    m_hat = (1 - 0.9) * grad / (1 - 0.9)
    v_hat = (1 - 0.999) * grad ** 2 / (1 - 0.999)
    closed = x0 - 5e-5 * m_hat / (np.sqrt(v_hat) + 1e-8)
    # relative to the step size; float64 bias corrections agree to ~1e-12
    adam_err = float(np.max(np.abs(p.data - closed))) / 5e-5
    dt = time.perf_counter() - t0
    ok = sched_ok and adam_err <= 1e-9 and dt < 1
    assert verdict(8, ok, f"lr after 10 flat validations {lrs[9]!r} (4.5e-05), Adam first step deviation "
                          f"{adam_err:.1e} of lr, {dt:.3f} s (< 1 s)")
