"""Complex-valued tensors carried as a pair of real :class:`DiffTensor`."""
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import DimensionError


@dataclass(frozen=True)
class ComplexPair:
    re: T.DiffTensor
    im: T.DiffTensor

    def __post_init__(self):
        if self.re.shape != self.im.shape:
            raise DimensionError(f"ComplexPair: re shape {self.re.shape} != im shape {self.im.shape}")

    @classmethod
    def from_numpy(cls, z, requires_grad=False, dtype=np.float64):
        z = np.asarray(z)
        return cls(T.DiffTensor(np.ascontiguousarray(z.real, dtype=dtype), requires_grad),
                   T.DiffTensor(np.ascontiguousarray(z.imag, dtype=dtype), requires_grad))

    @property
    def shape(self):
        return self.re.shape

    def numpy(self):
        return self.re.data + 1j * self.im.data

    def reshape(self, shape):
        return ComplexPair(T.reshape(self.re, shape), T.reshape(self.im, shape))

    def scale_real(self, r):
        """Multiply by a real tensor (broadcast over singleton axes)."""
        return ComplexPair(T.mul(self.re, r), T.mul(self.im, r))

    def __add__(self, other):
        return ComplexPair(T.add(self.re, other.re), T.add(self.im, other.im))

    def __sub__(self, other):
        return ComplexPair(T.sub(self.re, other.re), T.sub(self.im, other.im))


def complex_mul(a, b):
    """Elementwise product ``(a.re b.re - a.im b.im, a.re b.im + a.im b.re)``."""
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"complex_mul: shapes {a.shape} and {b.shape} are not broadcastable") from None
    re = T.sub(T.mul(a.re, b.re), T.mul(a.im, b.im))
    im = T.add(T.mul(a.re, b.im), T.mul(a.im, b.re))
    return ComplexPair(re, im)


def abs2(z):
    """Squared magnitude ``re**2 + im**2`` as a real tensor."""
    return T.add(T.square(z.re), T.square(z.im))
