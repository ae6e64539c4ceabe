import runpy
from pathlib import Path

import numpy as np
import pytest

from ckmfield import _pykernels, kernels

BACKENDS = kernels.backends()


def test_dispatch_reports_backend():
    assert kernels.BACKEND in BACKENDS


@pytest.mark.parametrize("dtype", [np.float32, np.float64])
@pytest.mark.parametrize("stride", [1, 2])
def test_im2col_col2im_agree_across_backends(dtype, stride):
    rng = np.random.default_rng(0)
    x = rng.standard_normal((3, 4, 5, 7)).astype(dtype)
    ref_cols = _pykernels.im2col(x, 3, stride, 1)
    g = rng.standard_normal(ref_cols.shape).astype(dtype)
    ref_back = _pykernels.col2im(g, x.shape, 3, stride, 1)
    for name, mod in BACKENDS.items():
        np.testing.assert_array_equal(mod.im2col(x, 3, stride, 1), ref_cols, err_msg=name)
        np.testing.assert_allclose(mod.col2im(g, x.shape, 3, stride, 1), ref_back,
                                   rtol=1e-5 if dtype == np.float32 else 1e-12, err_msg=name)


def test_col2im_is_adjoint_of_im2col():
    rng = np.random.default_rng(1)
    x = rng.standard_normal((2, 3, 4, 6))
    cols = _pykernels.im2col(x, 3, 1, 1)
    c = rng.standard_normal(cols.shape)
    lhs = (cols * c).sum()
    rhs = (x * _pykernels.col2im(c, x.shape, 3, 1, 1)).sum()
    assert lhs == pytest.approx(rhs, rel=1e-12)


@pytest.mark.parametrize("dtype", [np.float32, np.float64])
def test_cumprod_backends_agree(dtype):
    rng = np.random.default_rng(2)
    x = rng.uniform(0, 1, (3, 6, 5)).astype(dtype)
    x[1, 2, :] = 0.0
    g = rng.standard_normal(x.shape).astype(dtype)
    y = _pykernels.cumprod_exclusive(x)
    dx = _pykernels.cumprod_exclusive_grad(x, y, g)
    for name, mod in BACKENDS.items():
        np.testing.assert_array_equal(mod.cumprod_exclusive(x), y, err_msg=name)
        np.testing.assert_allclose(mod.cumprod_exclusive_grad(x, y, g), dx, rtol=1e-5, err_msg=name)


def test_cumprod_grad_matches_finite_difference():
    rng = np.random.default_rng(3)
    x = rng.uniform(0.2, 1.2, (1, 5, 2))
    g = rng.standard_normal(x.shape)
    dx = _pykernels.cumprod_exclusive_grad(x, _pykernels.cumprod_exclusive(x), g)
    h = 1e-6
    num = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        xp, xm = x.copy(), x.copy()
        xp[idx] += h
        xm[idx] -= h
        num[idx] = ((_pykernels.cumprod_exclusive(xp) - _pykernels.cumprod_exclusive(xm)) * g).sum() / (2 * h)
    np.testing.assert_allclose(dx, num, rtol=1e-7, atol=1e-9)


def test_benchmark_script_runs(capsys):
    path = Path(__file__).resolve().parents[1] / "benchmarks" / "bench_kernels.py"
    mod = runpy.run_path(str(path))
    mod["main"](["--repeat", "1"])
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines[-1].startswith("cumprod_exclusive_grad")
    assert all(line.split()[-1] == "0.0e+00" for line in lines[-5:])
