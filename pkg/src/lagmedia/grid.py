"""Uniform Eulerian grids, grid fields and second-order difference operators."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConstructionError, GridMismatch
from .lattice import _normalize_bounds, _normalize_shape

PERIODIC = "periodic"
CLAMPED = "clamped"


@dataclass(frozen=True)
class Grid:
    """Uniform node-centred grid.

    Periodic grids have ``n`` nodes at ``lo + i*L/n``.  Clamped grids have
    nodes on both walls, ``lo + i*L/(n-1)``.
    """

    dim: int
    bounds: tuple
    shape: tuple
    boundary: str = PERIODIC

    def __post_init__(self):
        if self.dim not in (1, 2, 3):
            raise ConstructionError(f"dim must be 1, 2 or 3, got {self.dim}")
        object.__setattr__(self, "bounds", _normalize_bounds(self.dim, self.bounds))
        object.__setattr__(self, "shape", _normalize_shape(self.dim, self.shape))
        if self.boundary not in (PERIODIC, CLAMPED):
            raise ConstructionError(f"unknown grid boundary {self.boundary!r}")
        if any(n < 2 for n in self.shape):
            raise ConstructionError(f"need at least 2 nodes per axis, got {self.shape}")
        if any(hi <= lo for lo, hi in self.bounds):
            raise ConstructionError(f"grid extents must have positive measure: {self.bounds}")

    @classmethod
    def matching(cls, lattice, shape=None):
        """Grid covering the label box of ``lattice`` (periodic stays periodic)."""
        boundary = PERIODIC if lattice.periodic else CLAMPED
        return cls(lattice.dim, lattice.bounds, lattice.shape if shape is None else shape,
                   boundary)

    @property
    def periodic(self):
        return self.boundary == PERIODIC

    @property
    def lower(self):
        return np.array([b[0] for b in self.bounds])

    @property
    def upper(self):
        return np.array([b[1] for b in self.bounds])

    @property
    def lengths(self):
        return self.upper - self.lower

    @property
    def spacing(self):
        n = np.array(self.shape, dtype=float)
        return self.lengths / (n if self.periodic else n - 1)

    @property
    def cell_volume(self):
        return float(np.prod(self.spacing))

    @property
    def size(self):
        return int(np.prod(self.shape))

    def axes(self):
        return [lo + h * np.arange(n) for lo, h, n in zip(self.lower, self.spacing, self.shape)]

    def nodes(self):
        return np.stack(np.meshgrid(*self.axes(), indexing="ij"), axis=-1)

    def zeros(self, ncomp=None):
        return np.zeros(self.shape if ncomp is None else self.shape + (ncomp,))


@dataclass(eq=False)
class GridField:
    """Values on a :class:`Grid`; scalar (``shape``) or vector (``shape + (k,)``)."""

    grid: Grid
    values: np.ndarray
    units: str = ""

    def __post_init__(self):
        self.values = np.asarray(self.values)
        if self.values.shape[: self.grid.dim] != self.grid.shape:
            raise ConstructionError(f"values of shape {self.values.shape} do not live on grid "
                                    f"{self.grid.shape}")

    @property
    def is_vector(self):
        return self.values.ndim > self.grid.dim

    def integral(self):
        return grid_integral(self.grid, self.values)


def check_same_grid(*fields):
    grids = [f.grid for f in fields if f is not None]
    for g in grids[1:]:
        if g != grids[0]:
            raise GridMismatch(f"fields live on different grids: {grids[0]} vs {g}")
    return grids[0]


def grid_integral(grid, values):
    """Midpoint quadrature, ``sum(values) * dV`` over the spatial axes."""
    return np.sum(values, axis=tuple(range(grid.dim))) * grid.cell_volume


def diff(grid, f, axis):
    """Centred derivative along ``axis`` (one-sided 2nd order at clamped walls)."""
    h = grid.spacing[axis]
    if grid.periodic:
        return (np.roll(f, -1, axis=axis) - np.roll(f, 1, axis=axis)) / (2.0 * h)
    edge = 2 if grid.shape[axis] >= 3 else 1
    return np.gradient(f, h, axis=axis, edge_order=edge)


def gradient(grid, f):
    """Gradient as a trailing axis: scalar -> ``(..., dim)``, vector -> ``(..., k, dim)``."""
    return np.stack([diff(grid, f, a) for a in range(grid.dim)], axis=-1)


def divergence(grid, v):
    return sum(diff(grid, v[..., a], a) for a in range(grid.dim))


def curl(grid, v):
    """Scalar curl ``d1 v2 - d2 v1`` in 2D, vector curl in 3D."""
    if grid.dim == 2:
        return diff(grid, v[..., 1], 0) - diff(grid, v[..., 0], 1)
    if grid.dim == 3:
        return np.stack([
            diff(grid, v[..., 2], 1) - diff(grid, v[..., 1], 2),
            diff(grid, v[..., 0], 2) - diff(grid, v[..., 2], 0),
            diff(grid, v[..., 1], 0) - diff(grid, v[..., 0], 1),
        ], axis=-1)
    raise ValueError("curl needs dim 2 or 3")


def advective_derivative(grid, v, f):
    """``(v . grad) f`` for a scalar or vector field ``f``."""
    return sum(v[..., a, None] * diff(grid, f, a) if f.ndim > grid.dim
               else v[..., a] * diff(grid, f, a) for a in range(grid.dim))


def l2_norm(grid, f):
    """Discrete L2 norm ``sqrt(sum |f|^2 dV)``."""
    return float(np.sqrt(np.sum(np.abs(f) ** 2) * grid.cell_volume))


def wavenumbers(grid):
    """Angular wavenumber arrays, one per axis, for an FFT of a periodic grid."""
    ks = [2.0 * np.pi * np.fft.fftfreq(n, d=h) for n, h in zip(grid.shape, grid.spacing)]
    return np.meshgrid(*ks, indexing="ij")


def spectral_poisson(grid, source, with_gradient=False):
    """Periodic solution of ``-lap phi = source - mean(source)`` with zero mean.

    With ``with_gradient`` also returns ``grad phi`` (spectral derivative,
    Nyquist mode dropped) as a trailing vector axis.
    """
    if not grid.periodic:
        raise ConstructionError("spectral Poisson solve needs a periodic grid")
    K = wavenumbers(grid)
    k2 = sum(k * k for k in K)
    sk = np.fft.fftn(source - np.mean(source))
    phik = np.where(k2 > 0, sk / np.where(k2 > 0, k2, 1.0), 0.0)
    phi = np.real(np.fft.ifftn(phik))
    if not with_gradient:
        return phi
    grads = []
    for a, k in enumerate(K):
        kk = k.copy()
        if grid.shape[a] % 2 == 0:
            kk[np.isclose(np.abs(k), np.pi / grid.spacing[a])] = 0.0
        grads.append(np.real(np.fft.ifftn(1j * kk * phik)))
    return phi, np.stack(grads, axis=-1)
