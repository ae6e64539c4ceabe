"""Pure-numpy reference versions of the hot kernels.

These are the fallback used when the compiled ``_ckernels`` module is not
built. Both implementations share one contract (see ``kernels.py``).
"""
import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def conv_out_size(n, k, stride, pad):
    return (n + 2 * pad - k) // stride + 1


def im2col(x, k, stride, pad):
    """Unfold ``x`` of shape (N, C, H, W) into rows of receptive fields.

    Returns an array of shape (N*Ho*Wo, C*k*k); rows are ordered
    (n, ho, wo) and columns (c, kh, kw).
    """
    n, c, h, w = x.shape
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    win = sliding_window_view(x, (k, k), axis=(2, 3))
    win = win[:, :, ::stride, ::stride]
    ho, wo = win.shape[2], win.shape[3]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c * k * k)
    return np.ascontiguousarray(cols)


def col2im(cols, x_shape, k, stride, pad):
    """Adjoint of :func:`im2col`: scatter-add rows back onto the input grid."""
    n, c, h, w = x_shape
    ho = conv_out_size(h, k, stride, pad)
    wo = conv_out_size(w, k, stride, pad)
    cols = cols.reshape(n, ho, wo, c, k, k)
    out = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=cols.dtype)
    for kh in range(k):
        for kw in range(k):
            out[:, :, kh:kh + stride * ho:stride, kw:kw + stride * wo:stride] += (
                cols[:, :, :, :, kh, kw].transpose(0, 3, 1, 2)
            )
    if pad:
        out = out[:, :, pad:pad + h, pad:pad + w]
    return np.ascontiguousarray(out)


def cumprod_exclusive(x):
    """Exclusive running product along axis 1 of a (outer, n, inner) array."""
    out = np.empty_like(x)
    out[:, 0] = 1.0
    if x.shape[1] > 1:
        np.cumprod(x[:, :-1], axis=1, out=out[:, 1:])
    return out


def cumprod_exclusive_grad(x, y, g):
    """Gradient of :func:`cumprod_exclusive` without dividing by ``x``.

    With ``y_j = prod_{m<j} x_m`` the gradient is ``dx_k = y_k * s_k`` where
    ``s_k = g_{k+1} + x_{k+1} * s_{k+1}`` runs backwards from ``s_{n-1} = 0``.
    This stays exact when some factors are zero.
    """
    n = x.shape[1]
    dx = np.empty_like(x)
    s = np.zeros_like(x[:, 0])
    dx[:, n - 1] = 0.0
    for k in range(n - 2, -1, -1):
        s = g[:, k + 1] + x[:, k + 1] * s
        dx[:, k] = y[:, k] * s
    return dx
