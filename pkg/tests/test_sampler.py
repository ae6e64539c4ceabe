import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ckmfield import sampler as S
from ckmfield.channel import ArrayGeometry, SPEED_OF_LIGHT
from ckmfield.errors import ConfigError


def test_sfg_two_points_are_poles():
    d = S.sfg_directions(2)
    np.testing.assert_allclose(d[:, 2], [1, -1])
    np.testing.assert_allclose(d[:, :2], 0, atol=1e-15)


def test_sfg_three_points_equator():
    d = S.sfg_directions(3)
    np.testing.assert_allclose(d[:, 2], [1, 0, -1], atol=1e-15)
    assert np.linalg.norm(d[1]) == pytest.approx(1.0)
    # azimuth of the middle point follows 2 pi * 2 * golden ratio
    phi = 2 * math.pi * 2 * S.GOLDEN_RATIO
    np.testing.assert_allclose(d[1, :2], [math.cos(phi), math.sin(phi)], atol=1e-12)


def test_sfg_rejects_single_point():
    with pytest.raises(ConfigError):
        S.sfg_directions(1)


@settings(max_examples=25, deadline=None)
@given(st.integers(2, 400))
def test_sfg_unit_norm_and_equal_z_steps(K):
    d = S.sfg_directions(K)
    np.testing.assert_allclose(np.linalg.norm(d, axis=1), 1.0, atol=1e-12)
    np.testing.assert_allclose(np.diff(d[:, 2]), -2.0 / (K - 1), atol=1e-12)


def test_ll_grid_counts():
    assert len(S.ll_directions(90)) == 6
    # two poles plus 17 interior latitudes of 36 longitudes
    assert len(S.ll_directions(10)) == 2 + 17 * 36 == 614
    np.testing.assert_allclose(np.linalg.norm(S.ll_directions(10), axis=1), 1.0)


def test_ll_ninety_degrees_is_axes():
    d = np.round(S.ll_directions(90), 12)
    want = {(0, 0, -1), (0, 0, 1), (1, 0, 0), (0, 1, 0), (-1, 0, 0), (0, -1, 0)}
    assert {tuple(abs(v) if v == 0 else v for v in row) for row in d} == want


def test_ll_rejects_non_divisor():
    with pytest.raises(ConfigError):
        S.ll_directions(7)


def test_sfg_more_uniform_than_ll_at_648():
    sfg = S.uniformity_cv(S.sfg_directions(648))
    ll = S.uniformity_cv(S.ll_directions(10))
    assert sfg < ll


def test_nearest_neighbor_brute_force():
    d = S.sfg_directions(30)
    nn = S.nearest_neighbor_angles(d)
    for i in range(30):
        ang = [math.acos(min(1.0, float(d[i] @ d[j]))) for j in range(30) if j != i]
        assert nn[i] == pytest.approx(min(ang), abs=1e-7)


def test_uniform_radial_reference_values():
    delta, depth = S.uniform_radial(32, 9.0)
    np.testing.assert_array_equal(delta, 0.28125)
    assert depth[0] == 0.28125 and depth[-1] == 9.0
    assert np.all(np.diff(depth) > 0)
    delta1, depth1 = S.uniform_radial(1, 9.0)
    assert delta1.tolist() == [9.0] and depth1.tolist() == [9.0]


@pytest.mark.parametrize("n,r", [(0, 1.0), (4, 0.0), (4, -1.0)])
def test_uniform_radial_rejects(n, r):
    with pytest.raises(ConfigError):
        S.uniform_radial(n, r)


def test_calibration_center_element_zero():
    arr = ArrayGeometry(3, 3, 0.1)
    dd = S.distance_calibration(arr, [0.6, 0.8, 0.0], 5)
    assert dd.shape == (9, 5)
    np.testing.assert_allclose(dd[4], 0.0, atol=1e-16)


def test_calibration_parallel_offset():
    offsets = np.array([[0.3, 0.0, 0.0], [-0.3, 0.0, 0.0]])
    dd = S.distance_calibration(offsets, [1.0, 0.0, 0.0], 2)
    np.testing.assert_allclose(dd[:, 0], [-0.3, 0.3])


def test_calibration_broadside_is_zero():
    lam = SPEED_OF_LIGHT / 2.415e9
    arr = ArrayGeometry(2, 2, lam / 2)
    # default array spans the y-z plane, so its normal is x
    np.testing.assert_allclose(S.distance_calibration(arr, [1.0, 0, 0], 4), 0.0, atol=1e-17)


def test_calibration_normalises_with_warning():
    arr = ArrayGeometry(2, 2, 0.1)
    with pytest.warns(S.CalibrationWarning):
        dd = S.distance_calibration(arr, [0.0, 2.0, 0.0], 3)
    np.testing.assert_allclose(dd, S.distance_calibration(arr, [0.0, 1.0, 0.0], 3))


def test_calibration_unit_vector_no_warning():
    arr = ArrayGeometry(2, 2, 0.1)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        S.distance_calibration(arr, S.sfg_directions(5)[2], 3)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 4), st.integers(1, 4), st.floats(0.01, 0.2), st.integers(2, 50), st.integers(0, 49))
def test_calibration_sums_to_zero(rows, cols, spacing, K, k):
    arr = ArrayGeometry(rows, cols, spacing)
    w = S.sfg_directions(K)[k % K]
    assert abs(S.distance_calibration(arr, w, 1).sum()) < 1e-14


def test_ray_bundle_shapes_and_invariants():
    arr = ArrayGeometry(2, 2, 0.062)
    b = S.RayBundle.build(24, 32, 9.0, arr, 16)
    assert b.directions.shape == (24, 3)
    assert b.calibration.shape == (24, 4, 16)
    # every tx column repeats the per-rx correction
    np.testing.assert_array_equal(b.calibration, b.calibration[:, :, :1].repeat(16, axis=2))
    assert np.all(b.depths[0] + b.calibration > 0)


def test_ray_bundle_rejects_aperture_larger_than_first_step():
    arr = ArrayGeometry(8, 8, 0.5)
    with pytest.raises(ConfigError):
        S.RayBundle.build(8, 64, 1.0, arr, 2)
