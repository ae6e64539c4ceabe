"""Hot-kernel dispatch.

The compiled core (``ckmfield._ckernels``) is used when it has been built;
otherwise the numpy versions in ``ckmfield._pykernels`` are used. Set
``CKMFIELD_KERNELS=python`` to force the fallback.
"""
import os

from . import _pykernels

BACKEND = "python"
_impl = _pykernels

if os.environ.get("CKMFIELD_KERNELS", "").lower() != "python":
    try:
        from . import _ckernels as _impl  # type: ignore[no-redef]

        BACKEND = "compiled"
    except ImportError:
        _impl = _pykernels

conv_out_size = _pykernels.conv_out_size


def im2col(x, k, stride, pad):
    return _impl.im2col(x, k, stride, pad)


def col2im(cols, x_shape, k, stride, pad):
    return _impl.col2im(cols, tuple(x_shape), k, stride, pad)


def cumprod_exclusive(x):
    return _impl.cumprod_exclusive(x)


def cumprod_exclusive_grad(x, y, g):
    return _impl.cumprod_exclusive_grad(x, y, g)


def backends():
    """Return ``{name: module}`` for every kernel implementation available."""
    out = {"python": _pykernels}
    try:
        from . import _ckernels

        out["compiled"] = _ckernels
    except ImportError:
        pass
    return out
