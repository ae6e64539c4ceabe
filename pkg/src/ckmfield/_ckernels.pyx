# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled versions of the hot kernels (same contract as ``_pykernels``)."""
import numpy as np
cimport cython
from cython cimport floating


def conv_out_size(Py_ssize_t n, Py_ssize_t k, Py_ssize_t stride, Py_ssize_t pad):
    return (n + 2 * pad - k) // stride + 1


cdef void _im2col(const floating[:, :, :, ::1] x, floating[:, ::1] cols,
                  Py_ssize_t k, Py_ssize_t stride, Py_ssize_t pad,
                  Py_ssize_t ho, Py_ssize_t wo) noexcept nogil:
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3]
    cdef Py_ssize_t b, oh, ow, ci, kh, kw, hi, wi, row, col
    row = 0
    for b in range(n):
        for oh in range(ho):
            for ow in range(wo):
                col = 0
                for ci in range(c):
                    for kh in range(k):
                        hi = oh * stride - pad + kh
                        for kw in range(k):
                            wi = ow * stride - pad + kw
                            if 0 <= hi < h and 0 <= wi < w:
                                cols[row, col] = x[b, ci, hi, wi]
                            else:
                                cols[row, col] = 0
                            col += 1
                row += 1


cdef void _col2im(const floating[:, ::1] cols, floating[:, :, :, ::1] out,
                  Py_ssize_t k, Py_ssize_t stride, Py_ssize_t pad,
                  Py_ssize_t ho, Py_ssize_t wo) noexcept nogil:
    cdef Py_ssize_t n = out.shape[0], c = out.shape[1], h = out.shape[2], w = out.shape[3]
    cdef Py_ssize_t b, oh, ow, ci, kh, kw, hi, wi, row, col
    row = 0
    for b in range(n):
        for oh in range(ho):
            for ow in range(wo):
                col = 0
                for ci in range(c):
                    for kh in range(k):
                        hi = oh * stride - pad + kh
                        for kw in range(k):
                            wi = ow * stride - pad + kw
                            if 0 <= hi < h and 0 <= wi < w:
                                out[b, ci, hi, wi] += cols[row, col]
                            col += 1
                row += 1


def im2col(x, Py_ssize_t k, Py_ssize_t stride, Py_ssize_t pad):
    x = np.ascontiguousarray(x)
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1]
    cdef Py_ssize_t ho = conv_out_size(x.shape[2], k, stride, pad)
    cdef Py_ssize_t wo = conv_out_size(x.shape[3], k, stride, pad)
    cols = np.empty((n * ho * wo, c * k * k), dtype=x.dtype)
    if x.dtype == np.float32:
        _im2col[float](x, cols, k, stride, pad, ho, wo)
    else:
        _im2col[double](x, cols, k, stride, pad, ho, wo)
    return cols


def col2im(cols, x_shape, Py_ssize_t k, Py_ssize_t stride, Py_ssize_t pad):
    cols = np.ascontiguousarray(cols)
    n, c, h, w = x_shape
    cdef Py_ssize_t ho = conv_out_size(h, k, stride, pad)
    cdef Py_ssize_t wo = conv_out_size(w, k, stride, pad)
    out = np.zeros((n, c, h, w), dtype=cols.dtype)
    if cols.dtype == np.float32:
        _col2im[float](cols, out, k, stride, pad, ho, wo)
    else:
        _col2im[double](cols, out, k, stride, pad, ho, wo)
    return out


cdef void _cumprod_excl(const floating[:, :, ::1] x, floating[:, :, ::1] y) noexcept nogil:
    cdef Py_ssize_t a, j, i
    cdef Py_ssize_t na = x.shape[0], n = x.shape[1], ni = x.shape[2]
    for a in range(na):
        for i in range(ni):
            y[a, 0, i] = 1
        for j in range(1, n):
            for i in range(ni):
                y[a, j, i] = y[a, j - 1, i] * x[a, j - 1, i]


cdef void _cumprod_excl_grad(const floating[:, :, ::1] x, const floating[:, :, ::1] y,
                             const floating[:, :, ::1] g, floating[:, :, ::1] dx,
                             floating[::1] s) noexcept nogil:
    cdef Py_ssize_t a, k, i
    cdef Py_ssize_t na = x.shape[0], n = x.shape[1], ni = x.shape[2]
    for a in range(na):
        for i in range(ni):
            s[i] = 0
            dx[a, n - 1, i] = 0
        for k in range(n - 2, -1, -1):
            for i in range(ni):
                s[i] = g[a, k + 1, i] + x[a, k + 1, i] * s[i]
                dx[a, k, i] = y[a, k, i] * s[i]


def cumprod_exclusive(x):
    x = np.ascontiguousarray(x)
    y = np.empty_like(x)
    if x.dtype == np.float32:
        _cumprod_excl[float](x, y)
    else:
        _cumprod_excl[double](x, y)
    return y


def cumprod_exclusive_grad(x, y, g):
    x = np.ascontiguousarray(x)
    y = np.ascontiguousarray(y)
    g = np.ascontiguousarray(g, dtype=x.dtype)
    dx = np.empty_like(x)
    s = np.empty(x.shape[2], dtype=x.dtype)
    if x.dtype == np.float32:
        _cumprod_excl_grad[float](x, y, g, dx, s)
    else:
        _cumprod_excl_grad[double](x, y, g, dx, s)
    return dx
