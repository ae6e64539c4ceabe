"""MIMO-OFDM multipath channels and an image-method shoebox generator."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ConfigError, DimensionError, DomainError

SPEED_OF_LIGHT = 299_792_458.0


# geometry ---------------------------------------------------------------------

@dataclass(frozen=True)
class ArrayGeometry:
    """Uniform planar array of ``rows x cols`` elements.

    The array lies in the plane spanned by the first two columns of
    ``orientation``; element (m, n) sits at
    ``center + ((m - (rows-1)/2) * e_row + (n - (cols-1)/2) * e_col) * spacing``
    so offsets are symmetric about the centre.
    """

    rows: int
    cols: int
    spacing: float
    center: tuple = (0.0, 0.0, 0.0)
    orientation: tuple = ((0.0, 0.0, 1.0), (0.0, 1.0, 0.0), (1.0, 0.0, 0.0))

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise ConfigError(f"array needs at least one row and column, got {self.rows}x{self.cols}")
        if not self.spacing > 0:
            raise ConfigError(f"antenna spacing must be positive, got {self.spacing}")
        basis = np.asarray(self.orientation, dtype=float)
        if basis.shape != (3, 3) or not np.allclose(basis @ basis.T, np.eye(3), atol=1e-9):
            raise ConfigError("orientation must be an orthonormal 3x3 basis (rows are unit vectors)")
        object.__setattr__(self, "center", tuple(float(v) for v in self.center))
        object.__setattr__(self, "orientation", tuple(tuple(float(v) for v in r) for r in basis))

    @property
    def n_elements(self):
        return self.rows * self.cols

    def offsets(self):
        """Element offsets from the centre, shape (rows*cols, 3), row-major (m, n)."""
        basis = np.asarray(self.orientation)
        m = np.arange(self.rows) - (self.rows - 1) / 2.0
        n = np.arange(self.cols) - (self.cols - 1) / 2.0
        mm, nn = np.meshgrid(m, n, indexing="ij")
        return self.spacing * (mm.reshape(-1, 1) * basis[0] + nn.reshape(-1, 1) * basis[1])

    def positions(self):
        return np.asarray(self.center) + self.offsets()

    def moved_to(self, center):
        return dataclasses.replace(self, center=tuple(float(v) for v in center))


@dataclass(frozen=True)
class OfdmGrid:
    """Used-subcarrier layout of the uplink and downlink bands.

    Used subcarriers form a contiguous block centred on each band centre:
    offset_k = (k - (N_c - 1)/2) * spacing.
    """

    n_subcarriers_used: int = 52
    n_fft: int = 64
    spacing: float = 312.5e3
    uplink_center: float = 2.415e9
    duplex_gap: float = 50e6

    def __post_init__(self):
        if not 1 <= self.n_subcarriers_used <= self.n_fft:
            raise ConfigError(f"need 1 <= used subcarriers ({self.n_subcarriers_used}) <= n_fft ({self.n_fft})")
        if not self.spacing > 0:
            raise ConfigError("subcarrier spacing must be positive")
        if self.uplink_frequencies()[0] <= 0:
            raise ConfigError("all subcarrier frequencies must be positive")

    @property
    def downlink_center(self):
        return self.uplink_center + self.duplex_gap

    def offsets(self):
        k = np.arange(self.n_subcarriers_used)
        return (k - (self.n_subcarriers_used - 1) / 2.0) * self.spacing

    def uplink_frequencies(self):
        return self.uplink_center + self.offsets()

    def downlink_frequencies(self):
        return self.downlink_center + self.offsets()

    def frequencies(self, band):
        if band == "uplink":
            return self.uplink_frequencies()
        if band == "downlink":
            return self.downlink_frequencies()
        raise ConfigError(f"band must be 'uplink' or 'downlink', got {band!r}")


@dataclass
class CsiTensor:
    """Complex channel grid of shape (N_c, N_u, N_b) with its subcarrier frequencies."""

    grid: np.ndarray
    frequencies: np.ndarray

    def __post_init__(self):
        self.grid = np.asarray(self.grid)
        self.frequencies = np.asarray(self.frequencies, dtype=float)
        if self.grid.ndim != 3:
            raise DimensionError(f"CSI grid must be 3-D (N_c, N_u, N_b), got shape {self.grid.shape}")
        if self.frequencies.shape != (self.grid.shape[0],):
            raise DimensionError(
                f"axis 0 of the CSI grid ({self.grid.shape[0]}) must match {self.frequencies.size} frequencies")
        if not np.all(np.isfinite(self.grid)):
            raise DomainError("CSI grid contains non-finite entries")
        if np.any(np.diff(self.frequencies) <= 0):
            raise DomainError("subcarrier frequencies must be strictly increasing")

    @property
    def shape(self):
        return self.grid.shape

    def as_real(self):
        """Real view with real/imag parts concatenated on the frequency axis: (2N_c, N_u, N_b)."""
        return np.concatenate([self.grid.real, self.grid.imag], axis=0)


@dataclass
class PathSet:
    """Propagation paths: reflection-product gains, per-element lengths, arrival directions."""

    gains: np.ndarray        # (L,)
    lengths: np.ndarray      # (L, N_u, N_b) meters
    directions: np.ndarray   # (L, 3) unit vectors, rx -> source
    orders: np.ndarray = field(default=None)

    def __post_init__(self):
        self.gains = np.asarray(self.gains, dtype=float)
        self.lengths = np.asarray(self.lengths, dtype=float)
        self.directions = np.asarray(self.directions, dtype=float)
        if self.orders is None:
            self.orders = np.zeros(self.gains.size, dtype=int)
        if self.gains.ndim != 1 or self.gains.size < 1:
            raise DimensionError("PathSet needs at least one path")
        if self.lengths.ndim != 3 or self.lengths.shape[0] != self.gains.size:
            raise DimensionError(
                f"axis 0 of lengths ({self.lengths.shape}) must equal the number of paths ({self.gains.size})")

    def __len__(self):
        return self.gains.size

    def __or__(self, other):
        return PathSet(np.concatenate([self.gains, other.gains]),
                       np.concatenate([self.lengths, other.lengths]),
                       np.concatenate([self.directions, other.directions]),
                       np.concatenate([self.orders, other.orders]))


# analytic channel ----------------------------------------------------------------

def free_space_factor(f, d):
    """Free-space amplitude ``c / (4 pi f d)`` and phase ``-2 pi f d / c``."""
    f = np.asarray(f, dtype=float)
    d = np.asarray(d, dtype=float)
    if np.any(d <= 0):
        raise DomainError("propagation distance must be positive (the d = 0 singularity is rejected)")
    if np.any(f <= 0):
        raise DomainError("frequency must be positive")
    amp = SPEED_OF_LIGHT / (4.0 * np.pi * f * d)
    phase = -2.0 * np.pi * f * d / SPEED_OF_LIGHT
    if amp.ndim == 0:
        return float(amp), float(phase)
    return amp, phase


def per_antenna_path_lengths(tx, rx, image_point, mirror=(1.0, 1.0, 1.0)):
    """Exact path length for each (rx element, tx element) pair via an image source.

    ``image_point`` is the image of the tx array centre; ``mirror`` holds the
    per-axis signs (+1/-1) of the reflection that produced it, which also
    mirrors the tx element offsets. Returns shape (N_u, N_b).
    """
    img = np.asarray(image_point, dtype=float) + np.asarray(tx.offsets()) * np.asarray(mirror, dtype=float)
    rxp = rx.positions()
    return np.linalg.norm(rxp[:, None, :] - img[None, :, :], axis=-1)


def multipath_channel(paths, grid, band="downlink"):
    """Sum of free-space contributions over all paths at every used subcarrier."""
    freqs = grid.frequencies(band) if isinstance(grid, OfdmGrid) else np.asarray(grid, dtype=float)
    d = paths.lengths
    if np.any(d <= 0):
        raise DomainError("all path lengths must be positive")
    f = freqs[:, None, None, None]
    amp = SPEED_OF_LIGHT / (4.0 * np.pi * f * d[None])
    h = paths.gains[None, :, None, None] * amp * np.exp(-2j * np.pi * f * d[None] / SPEED_OF_LIGHT)
    return CsiTensor(h.sum(axis=1), freqs)


# image method ---------------------------------------------------------------------

def image_sources(source, room, max_order):
    """Enumerate mirror images of ``source`` in the box [0, room].

    Yields ``(image_point, mirror_signs, order)`` for every image with total
    reflection order <= ``max_order``; along each axis the image is
    ``(1 - 2p) * x + 2 n L`` with ``|n - p| + |n|`` reflections.
    """
    if max_order < 0:
        raise ConfigError("max reflection order must be >= 0")
    source = np.asarray(source, dtype=float)
    per_axis = []
    for ax in range(3):
        opts = []
        for n in range(-max_order, max_order + 1):
            for p in (0, 1):
                order = abs(n - p) + abs(n)
                if order <= max_order:
                    coord = (1 - 2 * p) * source[ax] + 2 * n * room[ax]
                    opts.append((coord, 1 - 2 * p, order))
        per_axis.append(sorted(opts, key=lambda t: (t[2], t[0])))
    out = []
    for cx, sx, ox in per_axis[0]:
        for cy, sy, oy in per_axis[1]:
            for cz, sz, oz in per_axis[2]:
                order = ox + oy + oz
                if order <= max_order:
                    out.append((np.array([cx, cy, cz]), np.array([sx, sy, sz], dtype=float), order))
    out.sort(key=lambda t: (t[2], tuple(t[0])))
    return out


def image_method_paths(tx, rx, room, reflection, max_order):
    """Specular paths from the tx array to the rx array inside a shoebox room."""
    gains, lengths, dirs, orders = [], [], [], []
    rc = np.asarray(rx.center)
    for img, mirror, order in image_sources(tx.center, room, max_order):
        d = per_antenna_path_lengths(tx, rx, img, mirror)
        v = img - rc
        gains.append(reflection ** order)
        lengths.append(d)
        dirs.append(v / np.linalg.norm(v))
        orders.append(order)
    return PathSet(np.array(gains), np.array(lengths), np.array(dirs), np.array(orders))


@dataclass
class SceneSpec:
    """Everything needed to synthesise a dataset deterministically."""

    room: tuple = (4.0, 5.0, 3.0)
    reflection: float = 0.5
    max_order: int = 1
    tx: ArrayGeometry = None
    rx: ArrayGeometry = None
    rx_margin: float = 0.3
    min_tx_distance: float = 1.0
    grid: OfdmGrid = None
    n_samples: int = 512
    seed: int = 0

    def __post_init__(self):
        if self.grid is None:
            self.grid = desk_grid()
        half_lambda = SPEED_OF_LIGHT / self.grid.uplink_center / 2.0
        if self.tx is None:
            self.tx = ArrayGeometry(4, 4, half_lambda, center=(0.6, 2.5, 2.0))
        if self.rx is None:
            self.rx = ArrayGeometry(2, 2, half_lambda)
        self.room = tuple(float(v) for v in self.room)
        self.validate()

    def validate(self):
        if len(self.room) != 3 or min(self.room) <= 0:
            raise ConfigError(f"room dimensions must be three positive lengths, got {self.room}")
        if not 0 < self.reflection < 1:
            raise ConfigError(f"wall reflection coefficient must lie in (0, 1), got {self.reflection}")
        if self.max_order < 0:
            raise ConfigError("max reflection order must be >= 0")
        if self.n_samples < 1:
            raise ConfigError(f"n_samples must be >= 1, got {self.n_samples}")
        lo, hi = self.rx_region()
        if np.any(lo >= hi):
            raise ConfigError("rx placement region is empty (margin too large for the room)")
        if not _inside(self.tx.positions(), self.room):
            raise ConfigError("tx array must lie strictly inside the room")

    def rx_region(self):
        room = np.asarray(self.room)
        return np.full(3, self.rx_margin), room - self.rx_margin

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        for key in ("tx", "rx"):
            if d.get(key) is not None and not isinstance(d[key], ArrayGeometry):
                g = dict(d[key])
                g["center"] = tuple(g.get("center", (0.0, 0.0, 0.0)))
                if "orientation" in g:
                    g["orientation"] = tuple(tuple(r) for r in g["orientation"])
                d[key] = ArrayGeometry(**g)
        if d.get("grid") is not None and not isinstance(d["grid"], OfdmGrid):
            d["grid"] = OfdmGrid(**d["grid"])
        if "room" in d:
            d["room"] = tuple(d["room"])
        return cls(**d)


def desk_grid():
    """Desk-scale OFDM layout: 8 of 16 subcarriers over 20 MHz at 2.4 GHz."""
    return OfdmGrid(n_subcarriers_used=8, n_fft=16, spacing=20e6 / 16,
                    uplink_center=2.415e9, duplex_gap=50e6)


def _inside(points, room):
    pts = np.atleast_2d(points)
    return bool(np.all(pts > 0) and np.all(pts < np.asarray(room)))


@dataclass
class Sample:
    uplink: CsiTensor
    downlink: CsiTensor
    rx_position: np.ndarray


def sample_rx_position(spec, rng):
    lo, hi = spec.rx_region()
    tx_c = np.asarray(spec.tx.center)
    for _ in range(10_000):
        p = lo + (hi - lo) * rng.random(3)
        if np.linalg.norm(p - tx_c) >= spec.min_tx_distance:
            return p
    raise ConfigError("could not place an rx position satisfying min_tx_distance")


def channel_at(spec, rx_position):
    """Uplink and downlink CSI for one rx position (both in (N_c, N_u, N_b) layout)."""
    rx = spec.rx.moved_to(rx_position)
    if not _inside(rx.positions(), spec.room):
        raise DomainError(f"rx array at {tuple(rx_position)} is not strictly inside the room")
    paths = image_method_paths(spec.tx, rx, spec.room, spec.reflection, spec.max_order)
    down = multipath_channel(paths, spec.grid, "downlink")
    # Reciprocity: the rx->tx channel at f is the transpose of the tx->rx channel,
    # so expressing the uplink in (N_u, N_b) layout is the geometry channel at the uplink band.
    up = multipath_channel(paths, spec.grid, "uplink")
    return up, down, paths


def generate_sample(spec, index):
    """Sample ``index`` of the dataset; uses its own seeded substream."""
    seq = np.random.SeedSequence(spec.seed).spawn(index + 1)[index]
    rng = np.random.default_rng(seq)
    pos = sample_rx_position(spec, rng)
    up, down, _ = channel_at(spec, pos)
    return Sample(up, down, pos)


def generate_dataset(spec: SceneSpec, indices: Sequence[int] | None = None):
    """Generate every sample (or the given ``indices``) of ``spec``.

    Each sample draws from an independent child of ``SeedSequence(seed)``, so
    any partition of indices across workers yields bit-identical samples.
    """
    children = np.random.SeedSequence(spec.seed).spawn(spec.n_samples)
    idx = range(spec.n_samples) if indices is None else indices
    out = []
    for i in idx:
        rng = np.random.default_rng(children[i])
        pos = sample_rx_position(spec, rng)
        up, down, _ = channel_at(spec, pos)
        out.append(Sample(up, down, pos))
    return out
