"""Binary dataset container with a JSON provenance sidecar.

Layout (all little-endian)::

    b"F4CK"  u32 version  u32 N_s  u32 N_c  u32 N_u  u32 N_b
    f64 uplink_center  f64 downlink_center  f64 subcarrier_spacing
    N_s records of:
        f32[N_c*N_u*N_b*2]  uplink grid, (re, im) interleaved, C order
        f32[N_c*N_u*N_b*2]  downlink grid
        f64[3]              rx position

The sidecar ``<path>.json`` holds the full scene description.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import FormatError

MAGIC = b"F4CK"
VERSION = 1
_HEAD = struct.Struct("<4sIIIII3d")


@dataclass
class Dataset:
    """In-memory dataset: complex64 grids of shape (N_s, N_c, N_u, N_b)."""

    uplink: np.ndarray
    downlink: np.ndarray
    positions: np.ndarray
    uplink_center: float
    downlink_center: float
    spacing: float
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.uplink.shape != self.downlink.shape or self.uplink.ndim != 4:
            raise FormatError(f"uplink {self.uplink.shape} and downlink {self.downlink.shape} must share a 4-D shape")
        if self.positions.shape != (self.uplink.shape[0], 3):
            raise FormatError(f"positions must be ({self.uplink.shape[0]}, 3), got {self.positions.shape}")

    def __len__(self):
        return self.uplink.shape[0]

    @property
    def dims(self):
        return self.uplink.shape

    def offsets(self):
        n = self.uplink.shape[1]
        return (np.arange(n) - (n - 1) / 2.0) * self.spacing

    def uplink_frequencies(self):
        return self.uplink_center + self.offsets()

    def downlink_frequencies(self):
        return self.downlink_center + self.offsets()

    def subset(self, idx):
        idx = np.asarray(idx)
        return Dataset(self.uplink[idx], self.downlink[idx], self.positions[idx],
                       self.uplink_center, self.downlink_center, self.spacing, self.meta)

    def split(self, test_every=6):
        """Deterministic 5:1 train/test split: every ``test_every``-th sample is held out."""
        n = len(self)
        test = np.arange(test_every - 1, n, test_every)
        train = np.setdiff1d(np.arange(n), test)
        return self.subset(train), self.subset(test)


def from_samples(samples, grid, meta=None):
    up = np.stack([s.uplink.grid for s in samples]).astype(np.complex64)
    dn = np.stack([s.downlink.grid for s in samples]).astype(np.complex64)
    pos = np.stack([s.rx_position for s in samples]).astype(np.float64)
    return Dataset(up, dn, pos, float(grid.uplink_center), float(grid.downlink_center),
                   float(grid.spacing), dict(meta or {}))


def _interleave(z):
    out = np.empty(z.shape + (2,), dtype="<f4")
    out[..., 0] = z.real
    out[..., 1] = z.imag
    return out


def write_dataset(path, ds: Dataset, sidecar=True):
    n_s, n_c, n_u, n_b = ds.dims
    with open(path, "wb") as fh:
        fh.write(_HEAD.pack(MAGIC, VERSION, n_s, n_c, n_u, n_b,
                            ds.uplink_center, ds.downlink_center, ds.spacing))
        up = _interleave(ds.uplink).reshape(n_s, -1)
        dn = _interleave(ds.downlink).reshape(n_s, -1)
        pos = ds.positions.astype("<f8")
        for i in range(n_s):
            fh.write(up[i].tobytes())
            fh.write(dn[i].tobytes())
            fh.write(pos[i].tobytes())
    if sidecar:
        with open(str(path) + ".json", "w") as fh:
            json.dump(ds.meta, fh, indent=2, sort_keys=True)
            fh.write("\n")


def read_dataset(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEAD.size:
        raise FormatError(f"{path}: file too short for a dataset header")
    magic, version, n_s, n_c, n_u, n_b, fu, fd, sp = _HEAD.unpack_from(raw)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise FormatError(f"{path}: unsupported dataset version {version}")
    m = n_c * n_u * n_b
    rec = np.dtype([("up", "<f4", (m, 2)), ("dn", "<f4", (m, 2)), ("pos", "<f8", 3)])
    expected = _HEAD.size + n_s * rec.itemsize
    if len(raw) != expected:
        raise FormatError(f"{path}: size {len(raw)} bytes, header implies {expected}")
    arr = np.frombuffer(raw, dtype=rec, count=n_s, offset=_HEAD.size)
    shape = (n_s, n_c, n_u, n_b)
    up = (arr["up"][..., 0] + 1j * arr["up"][..., 1]).astype(np.complex64).reshape(shape)
    dn = (arr["dn"][..., 0] + 1j * arr["dn"][..., 1]).astype(np.complex64).reshape(shape)
    meta = {}
    try:
        with open(str(path) + ".json") as fh:
            meta = json.load(fh)
    except FileNotFoundError:
        pass
    return Dataset(up, dn, np.array(arr["pos"]), fu, fd, sp, meta)
