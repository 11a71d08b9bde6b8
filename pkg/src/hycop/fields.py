"""Uniform grids, fields on them, and the transform/derivative/quadrature kernels.

Grid points are cell centres, ``x_j = (j + 1/2) h`` with ``h = L / N``, for
both periodic and wall-bounded grids, so a boundary swap never moves a sample.
Field values are stored as float64 arrays of shape ``(channels, *n_points)``.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .errors import BoundaryUnsupported, StateShapeError


class Boundary(str, enum.Enum):
    PERIODIC = "periodic"
    WALL = "wall"


@dataclass(frozen=True)
class Grid:
    n_points: tuple[int, ...]
    length: tuple[float, ...]
    boundary: Boundary = Boundary.PERIODIC

    def __post_init__(self):
        n = tuple(int(v) for v in np.atleast_1d(self.n_points))
        L = tuple(float(v) for v in np.atleast_1d(self.length))
        if len(n) not in (1, 2) or len(n) != len(L):
            raise ValueError(f"grid must be 1D or 2D with matching axes, got {n}, {L}")
        if min(n) < 4:
            raise ValueError("need at least 4 points per axis")
        if min(L) <= 0 or not all(np.isfinite(L)):
            raise ValueError("domain length must be positive and finite")
        object.__setattr__(self, "n_points", n)
        object.__setattr__(self, "length", L)
        object.__setattr__(self, "boundary", Boundary(self.boundary))

    @classmethod
    def line(cls, n, length, boundary=Boundary.PERIODIC):
        return cls((n,), (length,), boundary)

    @classmethod
    def square(cls, n, length, boundary=Boundary.PERIODIC):
        return cls((n, n), (length, length), boundary)

    @property
    def dim(self) -> int:
        return len(self.n_points)

    @property
    def spacing(self) -> tuple[float, ...]:
        return tuple(L / n for L, n in zip(self.length, self.n_points))

    @property
    def size(self) -> int:
        return int(np.prod(self.n_points))

    @property
    def volume(self) -> float:
        return float(np.prod(self.length))

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    @property
    def periodic(self) -> bool:
        return self.boundary is Boundary.PERIODIC

    def axis_coords(self, axis=0) -> np.ndarray:
        n, h = self.n_points[axis], self.spacing[axis]
        return (np.arange(n) + 0.5) * h

    def coords(self) -> tuple[np.ndarray, ...]:
        """Meshgrid of cell-centre coordinates (``ij`` indexing)."""
        axes = [self.axis_coords(a) for a in range(self.dim)]
        return tuple(np.meshgrid(*axes, indexing="ij"))

    def wavenumbers(self, axis=0) -> np.ndarray:
        """Angular wavenumbers ``2*pi*m/L`` in FFT order for one axis."""
        return 2 * np.pi * np.fft.fftfreq(self.n_points[axis], d=self.spacing[axis])

    def with_boundary(self, boundary) -> "Grid":
        return Grid(self.n_points, self.length, Boundary(boundary))

    def with_points(self, n_points) -> "Grid":
        n = tuple(np.broadcast_to(np.atleast_1d(n_points), (self.dim,)))
        return Grid(n, self.length, self.boundary)


@dataclass(frozen=True)
class Field:
    grid: Grid
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.shape == self.grid.n_points:
            v = v[None]
        if v.ndim != self.grid.dim + 1 or v.shape[1:] != self.grid.n_points:
            raise StateShapeError(
                f"values of shape {v.shape} do not fit grid {self.grid.n_points}")
        v = v.copy()
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def channels(self) -> int:
        return self.values.shape[0]

    def channel(self, c=0) -> np.ndarray:
        return self.values[c]

    def replace(self, values) -> "Field":
        return Field(self.grid, values)

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.values)))

    def __len__(self):
        return self.values.size


def _as_array(f):
    if isinstance(f, Field):
        if f.channels != 1:
            raise StateShapeError("expected a single-channel field")
        return f.grid, f.values[0]
    raise TypeError("expected a Field")


def _fft_axes(grid):
    return tuple(range(-grid.dim, 0))


def dft(f: Field) -> np.ndarray:
    """Unnormalised forward DFT of a single-channel periodic field."""
    grid, v = _as_array(f)
    if not grid.periodic:
        raise BoundaryUnsupported("spectral transforms need a periodic grid")
    spec = v.astype(np.complex128)
    # separable 1D passes, one axis at a time
    for ax in _fft_axes(grid):
        spec = np.fft.fft(spec, axis=ax)
    return spec


def idft(spec: np.ndarray, grid: Grid) -> Field:
    if not grid.periodic:
        raise BoundaryUnsupported("spectral transforms need a periodic grid")
    out = np.asarray(spec, dtype=np.complex128)
    for ax in _fft_axes(grid):
        out = np.fft.ifft(out, axis=ax)
    return Field(grid, out.real)


def spectral_derivative(v: np.ndarray, grid: Grid, axis: int, order: int = 1) -> np.ndarray:
    """Derivative of real array(s) whose trailing axes are the grid axes."""
    ax = v.ndim - grid.dim + axis
    n = grid.n_points[axis]
    k = grid.wavenumbers(axis)
    if order % 2 == 1 and n % 2 == 0:
        k = k.copy()
        k[n // 2] = 0.0
    shape = [1] * v.ndim
    shape[ax] = n
    mult = ((1j * k) ** order).reshape(shape)
    return np.fft.ifft(mult * np.fft.fft(v, axis=ax), axis=ax).real


def gradient(f: Field, axis: int = 0) -> Field:
    """d/dx_axis of a single-channel field.

    Periodic grids use exact spectral differentiation; wall grids use
    second-order central differences with one-sided second-order closures.
    """
    grid, v = _as_array(f)
    if grid.periodic:
        d = spectral_derivative(v, grid, axis)
    else:
        d = np.gradient(v, grid.spacing[axis], axis=axis, edge_order=2)
    return Field(grid, d)


def integrate(f: Field) -> float | np.ndarray:
    """Midpoint-rule integral over the domain, one value per channel.

    Returns a float for single-channel fields.
    """
    totals = f.values.reshape(f.channels, -1).sum(axis=1) * f.grid.cell_volume
    return float(totals[0]) if f.channels == 1 else totals
