import numpy as np
import pytest

from ckmfield import tensor as T
from ckmfield import wirare as W
from ckmfield.diagnostics import micro_setup
from ckmfield.errors import ConfigError, DimensionError
from ckmfield.render import aggregate
from ckmfield.sampler import RayBundle
from ckmfield.training import Adam, nmse_loss


def freqs_ghz(freqs):
    return np.asarray(freqs) / 1e9


def test_uplink_to_real_layout():
    up = np.arange(2 * 3 * 2 * 2).reshape(2, 3, 2, 2) * (1 + 2j)
    r = W.uplink_to_real(up)
    assert r.shape == (2, 6, 2, 2)
    np.testing.assert_array_equal(r[:, :3], up.real)
    np.testing.assert_array_equal(r[:, 3:], up.imag)


def test_raw_queries_replicate_sample():
    x = np.random.default_rng(0).standard_normal((2, 4, 2, 3))
    q = W.build_raw_queries(x, 3, 2).data
    assert q.shape == (12, 4, 2, 3)
    np.testing.assert_array_equal(q[:6], np.broadcast_to(x[0], (6, 4, 2, 3)))
    np.testing.assert_array_equal(q[6:], np.broadcast_to(x[1], (6, 4, 2, 3)))


def test_indicators_constant_over_elements():
    dirs = np.array([[0.0, 0.6, 0.8], [1.0, 0.0, 0.0]])
    delta = np.array([0.5, 0.25, 0.25])
    gamma, eta = W.indicators(dirs, delta, 2, 2, 3, 4)
    assert gamma.shape == (2 * 2 * 3, 3, 3, 4)
    assert eta.shape == (4, 3, 4, 12)
    # order is sample, ray, radiator
    np.testing.assert_array_equal(gamma.data[3 + 1, :, 1, 2], dirs[1])
    np.testing.assert_array_equal(eta.data[1, 0], 0.5)
    np.testing.assert_array_equal(eta.data[1, 2], 0.25)


def test_gn_groups():
    assert [W.gn_groups(c) for c in (4, 8, 16, 20, 12, 35)] == [4, 8, 8, 4, 4, 1]


def test_fca_groups_keep_four_features_per_group():
    assert [W.fca_groups(c) for c in (3, 8, 12, 16, 32, 128)] == [1, 2, 3, 4, 8, 8]
    for c in range(1, 200):
        g = W.fca_groups(c)
        assert c % g == 0 and (g == 1 or c // g >= 4)


def test_config_validation():
    with pytest.raises(ConfigError):
        W.NetConfig(depth=2)
    with pytest.raises(ConfigError):
        W.NetConfig(hidden=0)
    with pytest.raises(ConfigError):
        W.preset("huge")
    with pytest.raises(ConfigError):
        W.init_params(W.preset("micro"), mode="zeros")


def test_config_roundtrip():
    cfg = W.preset("desk", hidden=24)
    assert W.NetConfig.from_dict(cfg.to_dict()) == cfg


def test_parameter_counts_near_reference_sizes():
    full = W.count_parameters(W.preset("full"))
    lite = W.count_parameters(W.preset("lite"))
    assert abs(full - 3.41e6) / 3.41e6 < 0.10
    assert abs(lite - 0.51e6) / 0.51e6 < 0.10


def test_parameter_names_cover_both_branches():
    names = list(W.init_params(W.preset("micro")))
    for prefix in ("shape_ang.", "shape_rad.", "mp.stem", "mp.block0.", "mp.fca0.", "mp.head",
                   "ac.down.", "ac.fca_down.", "ac.up.", "ac.fca_up.", "ac.head"):
        assert any(n.startswith(prefix) for n in names), prefix


def run(params, cfg, bundle, freqs, up, **kw):
    return W.wirare_forward(up, bundle, freqs_ghz(freqs), params, cfg, **kw)


def test_output_shapes_and_nonnegative_sigma():
    cfg, bundle, freqs, up, _, params = micro_setup(0)
    fld = run(params, cfg, bundle, freqs, up)
    shape = (1, cfg.n_rays * cfg.n_radiators, cfg.n_sub, cfg.n_rx, cfg.n_tx)
    assert fld.sigma.shape == shape and fld.coeffs.shape == shape
    assert np.all(fld.sigma.data >= 0)


def test_identity_init_shaping_passes_queries_through():
    cfg, bundle, freqs, up, _, _ = micro_setup(0)
    params = W.init_params(cfg, 0, "identity")
    _, tr = run(params, cfg, bundle, freqs, up, trace=True)
    np.testing.assert_array_equal(tr.shaped.data, tr.raw.data)
    np.testing.assert_array_equal(tr.shaped_ang.data, tr.raw.data)


def test_identity_init_fca_is_exact_identity():
    cfg = W.preset("micro")
    params = W.init_params(cfg, 1, "identity")
    x = T.tensor(np.random.default_rng(0).standard_normal((3, cfg.hidden, 2, 2)))
    y = W.fca_modulate(x, np.linspace(2.4, 2.5, cfg.n_sub), params, "mp.fca0")
    np.testing.assert_array_equal(y.data, x.data)


def test_fca_toggle_equal_at_identity_init():
    cfg, bundle, freqs, up, _, _ = micro_setup(0)
    params = W.init_params(cfg, 0, "identity")
    on = run(params, cfg, bundle, freqs, up, fca=True)
    off = run(params, cfg, bundle, freqs, up, fca=False)
    np.testing.assert_array_equal(on.sigma.data, off.sigma.data)
    np.testing.assert_array_equal(on.coeffs.numpy(), off.coeffs.numpy())


def test_fca_reacts_to_frequency_after_init():
    cfg = W.preset("micro")
    params = W.init_params(cfg, 1, "random")
    x = T.tensor(np.random.default_rng(0).standard_normal((1, cfg.hidden, 2, 2)))
    f = np.linspace(2.4, 2.5, cfg.n_sub)
    a = W.fca_modulate(x, f, params, "mp.fca0").data
    b = W.fca_modulate(x, f + 0.05, params, "mp.fca0").data
    assert np.abs(a - b).max() > 1e-6


def test_fca_single_step_separates_frequencies():
    cfg = W.preset("micro")
    params = W.init_params(cfg, 1, "identity")
    x = T.tensor(np.random.default_rng(0).standard_normal((1, cfg.hidden, 2, 2)))
    f1 = np.linspace(2.40, 2.41, cfg.n_sub)
    f2 = f1 + 0.05
    # the target asks for a larger output at the higher band
    loss = T.add(T.sum_all(T.square(T.sub(W.fca_modulate(x, f1, params, "mp.fca0"), x))),
                 T.sum_all(T.square(T.sub(W.fca_modulate(x, f2, params, "mp.fca0"), T.scale(x, 2.0)))))
    loss.backward()
    Adam(params, lr=1e-2).step()
    with T.no_grad():
        a = W.fca_modulate(x, f1, params, "mp.fca0").data
        b = W.fca_modulate(x, f2, params, "mp.fca0").data
    assert np.abs(a - b).max() > 1e-4


def test_fca_frequency_count_checked():
    cfg = W.preset("micro")
    params = W.init_params(cfg, 1)
    x = T.tensor(np.zeros((2, cfg.hidden, 2, 2)))
    with pytest.raises(DimensionError, match="mp.fca0"):
        W.fca_modulate(x, np.ones(cfg.n_sub + 1), params, "mp.fca0")


def test_per_ray_angular_matches_replicated_path():
    cfg, bundle, freqs, up, _, params = micro_setup(2, init="random")
    up2 = np.concatenate([up, 0.5 * up[:, ::-1]])
    fast = run(params, cfg, bundle, freqs, up2, per_ray_angular=True)
    slow = run(params, cfg, bundle, freqs, up2, per_ray_angular=False)
    np.testing.assert_allclose(fast.sigma.data, slow.sigma.data, rtol=1e-12, atol=1e-14)
    np.testing.assert_allclose(fast.coeffs.numpy(), slow.coeffs.numpy(), rtol=1e-12, atol=1e-14)


def test_per_ray_angular_gradients_match():
    cfg, bundle, freqs, up, truth, _ = micro_setup(3, init="random")
    grads = []
    for flag in (True, False):
        params = W.init_params(cfg, 3, "random")
        fld = run(params, cfg, bundle, freqs, up, per_ray_angular=flag)
        nmse_loss(aggregate(fld, bundle, freqs), truth).backward()
        grads.append({k: p.grad.copy() for k, p in params.items()})
    for k in grads[0]:
        np.testing.assert_allclose(grads[0][k], grads[1][k], rtol=1e-9, atol=1e-12, err_msg=k)


def test_every_parameter_receives_gradient():
    cfg, bundle, freqs, up, truth, params = micro_setup(4, init="random")
    fld = run(params, cfg, bundle, freqs, up)
    nmse_loss(aggregate(fld, bundle, freqs), truth).backward()
    dead = [k for k, p in params.items() if p.grad is None or not np.any(p.grad)]
    assert dead == []


def test_batch_entries_independent():
    cfg, bundle, freqs, up, _, params = micro_setup(5, init="random")
    other = np.random.default_rng(9).standard_normal(up.shape)
    both = run(params, cfg, bundle, freqs, np.concatenate([up, other]))
    single = run(params, cfg, bundle, freqs, other)
    np.testing.assert_allclose(both.sigma.data[1], single.sigma.data[0], rtol=1e-12)
    np.testing.assert_allclose(both.coeffs.numpy()[1], single.coeffs.numpy()[0], rtol=1e-12)


def test_output_depends_on_ray_direction():
    cfg, bundle, freqs, up, _, params = micro_setup(6, init="random")
    base = run(params, cfg, bundle, freqs, up).sigma.data
    dirs = bundle.directions.copy()
    dirs[0] = -dirs[0]
    moved = RayBundle(dirs, bundle.intervals, bundle.depths, bundle.calibration)
    out = run(params, cfg, moved, freqs, up).sigma.data
    n_r = cfg.n_radiators
    assert np.abs(out[0, :n_r] - base[0, :n_r]).max() > 1e-8
    np.testing.assert_allclose(out[0, n_r:], base[0, n_r:], rtol=1e-12)


def test_shape_errors_are_descriptive():
    cfg, bundle, freqs, up, _, params = micro_setup(0)
    with pytest.raises(DimensionError, match="uplink shape"):
        run(params, cfg, bundle, freqs, up[:, :, :1])
    small = RayBundle.build(3, cfg.n_radiators, 3.0, np.zeros((cfg.n_rx, 3)), cfg.n_tx)
    with pytest.raises(DimensionError, match="3 rays"):
        run(params, cfg, small, freqs, up)
