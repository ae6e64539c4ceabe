"""A small reverse-mode autodiff engine over numpy arrays.

Only the operations the radiance-field network and renderer need are
provided. Every op builds a graph node holding a closure that maps the
output gradient to input gradients; :meth:`DiffTensor.backward` walks the
graph once in reverse topological order and accumulates into leaves.
"""
from contextlib import contextmanager

import numpy as np
from scipy import special

from . import kernels
from .errors import ConfigError, DimensionError

_GRAD_ENABLED = True


@contextmanager
def no_grad():
    """Evaluate ops without recording a graph (inference, validation)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


class DiffTensor:
    """Array value plus lazily allocated gradient and producing-op record."""

    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad=False, name=None):
        arr = np.asarray(data)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.name = name
        self._parents = ()
        self._backward = None
        self.op = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def is_leaf(self):
        return not self._parents

    def numpy(self):
        return self.data

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        tag = f", op={self.op}" if self.op else ""
        return f"DiffTensor(shape={self.shape}, dtype={self.dtype}{tag})"

    def backward(self, grad=None):
        """Backpropagate from this tensor into every reachable leaf."""
        if grad is None:
            if self.data.size != 1:
                raise DimensionError("backward() without a seed gradient needs a scalar output")
            grad = np.ones_like(self.data)
        order = _topological_order(self)
        grads = {id(self): np.asarray(grad, dtype=self.dtype)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node.is_leaf:
                if node.requires_grad:
                    node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = pg if key not in grads else grads[key] + pg

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __getitem__(self, idx):
        return index(self, idx)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def _topological_order(root):
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in reversed(node._parents):
            if id(p) not in seen:
                stack.append((p, False))
    return order


def tensor(data, requires_grad=False, dtype=None, name=None):
    arr = np.array(data, dtype=dtype if dtype is not None else None, copy=True)
    return DiffTensor(arr, requires_grad=requires_grad, name=name)


def as_tensor(x, like=None):
    if isinstance(x, DiffTensor):
        return x
    dtype = like.dtype if like is not None else None
    return DiffTensor(np.asarray(x, dtype=dtype))


def _node(data, parents, backward, op):
    out = DiffTensor(data)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
        out.op = op
    return out


def unbroadcast(g, shape):
    """Sum ``g`` down to ``shape`` (inverse of numpy broadcasting)."""
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _check_broadcast(a, b, opname):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{opname}: shapes {a.shape} and {b.shape} are not broadcastable") from None


# elementwise -----------------------------------------------------------------

def add(a, b):
    a = as_tensor(a, like=b if isinstance(b, DiffTensor) else None)
    b = as_tensor(b, like=a)
    _check_broadcast(a, b, "add")

    def backward(g):
        return unbroadcast(g, a.shape), unbroadcast(g, b.shape)

    return _node(a.data + b.data, (a, b), backward, "add")


def sub(a, b):
    a = as_tensor(a, like=b if isinstance(b, DiffTensor) else None)
    b = as_tensor(b, like=a)
    _check_broadcast(a, b, "sub")

    def backward(g):
        return unbroadcast(g, a.shape), unbroadcast(-g, b.shape)

    return _node(a.data - b.data, (a, b), backward, "sub")


def mul(a, b):
    a = as_tensor(a, like=b if isinstance(b, DiffTensor) else None)
    b = as_tensor(b, like=a)
    _check_broadcast(a, b, "mul")

    def backward(g):
        ga = unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return _node(a.data * b.data, (a, b), backward, "mul")


def div(a, b):
    a = as_tensor(a, like=b if isinstance(b, DiffTensor) else None)
    b = as_tensor(b, like=a)
    _check_broadcast(a, b, "div")
    out = a.data / b.data

    def backward(g):
        ga = unbroadcast(g / b.data, a.shape) if a.requires_grad else None
        gb = unbroadcast(-g * out / b.data, b.shape) if b.requires_grad else None
        return ga, gb

    return _node(out, (a, b), backward, "div")


def neg(x):
    return _node(-x.data, (x,), lambda g: (-g,), "neg")


def scale(x, s):
    """Multiply by a non-differentiable Python scalar."""
    s = float(s)
    return _node(x.data * s, (x,), lambda g: (g * s,), "scale")


def exp(x):
    out = np.exp(x.data)
    return _node(out, (x,), lambda g: (g * out,), "exp")


def square(x):
    return _node(x.data * x.data, (x,), lambda g: (2.0 * g * x.data,), "square")


def gelu(x):
    """Exact GELU, ``x * Phi(x)`` with the standard normal CDF."""
    cdf = special.ndtr(x.data)
    out = x.data * cdf

    def backward(g):
        pdf = np.exp(-0.5 * x.data * x.data) / np.sqrt(2.0 * np.pi)
        return (g * (cdf + x.data * pdf),)

    return _node(out.astype(x.dtype, copy=False), (x,), backward, "gelu")


def softplus(x):
    """``log(1 + exp(x))``, evaluated without overflow."""
    d = x.data
    out = np.logaddexp(0.0, d).astype(x.dtype, copy=False)

    def backward(g):
        return (g * special.expit(d),)

    return _node(out, (x,), backward, "softplus")


# reductions and shape ----------------------------------------------------------

def sum_all(x):
    shape = x.shape
    return _node(np.asarray(x.data.sum()), (x,), lambda g: (np.broadcast_to(g, shape).copy(),), "sum_all")


def reduce_sum(x, axis, keepdims=False):
    axes = (axis,) if isinstance(axis, int) else tuple(axis)
    axes = tuple(a % x.ndim for a in axes)
    shape = x.shape

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, shape).copy(),)

    return _node(x.data.sum(axis=axes, keepdims=keepdims), (x,), backward, "reduce_sum")


def mean_pool_spatial(x):
    """Average over the two trailing (spatial) axes: (B, C, H, W) -> (B, C)."""
    if x.ndim != 4:
        raise DimensionError(f"mean_pool_spatial expects 4-D input, got shape {x.shape}")
    n = x.shape[2] * x.shape[3]
    shape = x.shape

    def backward(g):
        return (np.broadcast_to(g[:, :, None, None] / n, shape).copy(),)

    return _node(x.data.mean(axis=(2, 3)), (x,), backward, "mean_pool_spatial")


def reshape(x, shape):
    shape = tuple(shape)
    orig = x.shape
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise DimensionError(f"cannot reshape {orig} into {shape}") from None
    return _node(out, (x,), lambda g: (g.reshape(orig),), "reshape")


def transpose(x, axes):
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return _node(np.ascontiguousarray(x.data.transpose(axes)), (x,),
                 lambda g: (g.transpose(inv),), "transpose")


def concat(tensors, axis):
    tensors = [as_tensor(t) for t in tensors]
    ref = tensors[0]
    axis = axis % ref.ndim
    for i, t in enumerate(tensors[1:], 1):
        if t.ndim != ref.ndim:
            raise DimensionError(f"concat: operand {i} has {t.ndim} axes, expected {ref.ndim}")
        for ax in range(ref.ndim):
            if ax != axis and t.shape[ax] != ref.shape[ax]:
                raise DimensionError(
                    f"concat: operand {i} differs on axis {ax} ({t.shape[ax]} vs {ref.shape[ax]})")
    sizes = [t.shape[axis] for t in tensors]
    cuts = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, cuts, axis=axis))

    return _node(np.concatenate([t.data for t in tensors], axis=axis), tensors, backward, "concat")


def index(x, idx):
    """Basic (slice/integer) indexing; the backward scatters into zeros."""
    shape = x.shape

    def backward(g):
        out = np.zeros(shape, dtype=g.dtype)
        out[idx] = g
        return (out,)

    return _node(np.ascontiguousarray(x.data[idx]), (x,), backward, "index")


def cumprod_exclusive(x, axis):
    """``y[..., j, ...] = prod_{k<j} x[..., k, ...]`` along ``axis`` (y[0] = 1)."""
    axis = axis % x.ndim
    shape = x.shape
    outer = int(np.prod(shape[:axis], dtype=np.int64))
    inner = int(np.prod(shape[axis + 1:], dtype=np.int64))
    x3 = np.ascontiguousarray(x.data).reshape(outer, shape[axis], inner)
    y3 = kernels.cumprod_exclusive(x3)

    def backward(g):
        g3 = np.ascontiguousarray(g).reshape(outer, shape[axis], inner)
        return (kernels.cumprod_exclusive_grad(x3, y3, g3).reshape(shape),)

    return _node(y3.reshape(shape), (x,), backward, "cumprod_exclusive")


# layers --------------------------------------------------------------------------

def linear(x, weight, bias=None):
    """Affine map ``x @ weight.T + bias`` for x of shape (B, N), weight (M, N)."""
    if x.ndim != 2 or weight.ndim != 2:
        raise DimensionError(f"linear expects 2-D input and weight, got {x.shape} and {weight.shape}")
    if x.shape[1] != weight.shape[1]:
        raise DimensionError(
            f"linear: axis 1 of input ({x.shape[1]}) does not match axis 1 of weight ({weight.shape[1]})")
    out = x.data @ weight.data.T
    parents = [x, weight]
    if bias is not None:
        if bias.shape != (weight.shape[0],):
            raise DimensionError(f"linear: bias shape {bias.shape} != ({weight.shape[0]},)")
        out = out + bias.data
        parents.append(bias)

    def backward(g):
        gx = g @ weight.data if x.requires_grad else None
        gw = g.T @ x.data if weight.requires_grad else None
        if bias is None:
            return gx, gw
        return gx, gw, g.sum(axis=0)

    return _node(out, parents, backward, "linear")


def conv2d(x, kernel, bias=None, stride=1, padding=None):
    """2-D cross-correlation with zero padding.

    ``padding=None`` means "same" for odd kernels, i.e. ``k // 2``.
    """
    if x.ndim != 4:
        raise DimensionError(f"conv2d: input must be 4-D (B, C, H, W), got shape {x.shape}")
    if kernel.ndim != 4:
        raise DimensionError(f"conv2d: kernel must be 4-D (Cout, Cin, k, k), got shape {kernel.shape}")
    cout, cin, kh, kw = kernel.shape
    if cin != x.shape[1]:
        raise DimensionError(f"conv2d: axis 1 (channels) of input is {x.shape[1]} but kernel expects {cin}")
    if kh != kw:
        raise DimensionError(f"conv2d: axes 2/3 of kernel must be equal, got {kh}x{kw}")
    if stride < 1:
        raise ConfigError(f"conv2d: stride must be >= 1, got {stride}")
    k = kh
    pad = k // 2 if padding is None else int(padding)
    b, _, h, w = x.shape
    ho = kernels.conv_out_size(h, k, stride, pad)
    wo = kernels.conv_out_size(w, k, stride, pad)
    if ho < 1 or wo < 1:
        raise DimensionError(f"conv2d: input spatial size {h}x{w} too small for kernel {k} / padding {pad}")
    xd = np.ascontiguousarray(x.data)
    wmat = kernel.data.reshape(cout, -1)
    cols = kernels.im2col(xd, k, stride, pad)
    out = cols @ wmat.T
    parents = [x, kernel]
    if bias is not None:
        if bias.shape != (cout,):
            raise DimensionError(f"conv2d: bias shape {bias.shape} != ({cout},)")
        out += bias.data
        parents.append(bias)
    out = out.reshape(b, ho, wo, cout).transpose(0, 3, 1, 2)

    def backward(g):
        g2 = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(-1, cout)
        gk = (g2.T @ cols).reshape(kernel.shape) if kernel.requires_grad else None
        gx = kernels.col2im(g2 @ wmat, x.shape, k, stride, pad) if x.requires_grad else None
        if bias is None:
            return gx, gk
        return gx, gk, g2.sum(axis=0)

    return _node(np.ascontiguousarray(out), parents, backward, "conv2d")


def conv2d_1x1(x, kernel, bias=None, stride=1):
    """Pointwise convolution (shortcut / projection)."""
    if kernel.ndim != 4 or kernel.shape[2:] != (1, 1):
        raise DimensionError(f"conv2d_1x1: kernel must have 1x1 spatial size, got {kernel.shape}")
    return conv2d(x, kernel, bias, stride=stride, padding=0)


def upsample_nearest2x(x, out_hw=None):
    """Nearest-neighbour x2 spatial up-sampling, optionally cropped to ``out_hw``."""
    if x.ndim != 4:
        raise DimensionError(f"upsample_nearest2x expects 4-D input, got {x.shape}")
    b, c, h, w = x.shape
    up = np.repeat(np.repeat(x.data, 2, axis=2), 2, axis=3)
    oh, ow = out_hw if out_hw is not None else (2 * h, 2 * w)
    if oh > 2 * h or ow > 2 * w:
        raise DimensionError(f"upsample_nearest2x: target {oh}x{ow} exceeds {2 * h}x{2 * w}")
    up = np.ascontiguousarray(up[:, :, :oh, :ow])

    def backward(g):
        full = np.zeros((b, c, 2 * h, 2 * w), dtype=g.dtype)
        full[:, :, :oh, :ow] = g
        return (full.reshape(b, c, h, 2, w, 2).sum(axis=(3, 5)),)

    return _node(up, (x,), backward, "upsample_nearest2x")


def group_norm(x, groups, gamma, beta, eps=1e-5):
    """Group normalisation over (channels-in-group, H, W) per sample."""
    if x.ndim != 4:
        raise DimensionError(f"group_norm expects 4-D input (B, C, H, W), got {x.shape}")
    b, c, h, w = x.shape
    if groups < 1 or c % groups:
        raise ConfigError(f"group_norm: {c} channels not divisible into {groups} groups")
    if gamma.shape != (c,) or beta.shape != (c,):
        raise DimensionError(f"group_norm: gamma/beta must have shape ({c},)")
    xg = x.data.reshape(b, groups, -1)
    mu = xg.mean(axis=2, keepdims=True)
    xc = xg - mu
    var = (xc * xc).mean(axis=2, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (xc * inv).reshape(b, c, h, w)
    out = xhat * gamma.data[None, :, None, None] + beta.data[None, :, None, None]

    def backward(g):
        ggam = (g * xhat).sum(axis=(0, 2, 3))
        gbet = g.sum(axis=(0, 2, 3))
        gx = None
        if x.requires_grad:
            dxhat = (g * gamma.data[None, :, None, None]).reshape(b, groups, -1)
            xh = xhat.reshape(b, groups, -1)
            gx = inv * (dxhat - dxhat.mean(axis=2, keepdims=True)
                        - xh * (dxhat * xh).mean(axis=2, keepdims=True))
            gx = gx.reshape(b, c, h, w)
        return gx, ggam, gbet

    return _node(out.astype(x.dtype, copy=False), (x, gamma, beta), backward, "group_norm")
