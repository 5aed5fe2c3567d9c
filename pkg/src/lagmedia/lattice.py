"""Label lattice and the Lagrangian flow map ``xi -> x(xi, t)``.

The label domain is a box discretized by a uniform Cartesian lattice.  A
:class:`FlowMap` stores, per label, the current position ``x``, the canonical
momentum density ``p = m rho0 dx/dt`` and the initial number density
``rho0``.  Positions on periodic lattices are kept unwrapped so that the
displacement ``x - xi`` is a periodic field and can be differenced with
``np.roll``.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
from scipy import ndimage
from scipy.interpolate import NdBSpline, make_interp_spline
from scipy.spatial import cKDTree

from .errors import ConstructionError, FoldingError, InverseError, OutOfDomain

PERIODIC = "periodic"
FIXED_WALL = "fixed-wall"

NEWTON_TOL = 1e-10
NEWTON_MAX_ITER = 50


def _normalize_bounds(dim, extents):
    ext = np.asarray(extents, dtype=float)
    if ext.ndim == 1:
        if ext.size == 2 and dim == 1:
            ext = ext.reshape(1, 2)
        elif ext.size == dim:
            ext = np.stack([np.zeros(dim), ext], axis=1)
        else:
            raise ConstructionError(f"cannot interpret extents {extents!r} for dim={dim}")
    if ext.shape != (dim, 2):
        raise ConstructionError(f"extents must have shape ({dim}, 2), got {ext.shape}")
    return tuple((float(lo), float(hi)) for lo, hi in ext)


def _normalize_shape(dim, shape):
    shp = np.atleast_1d(np.asarray(shape, dtype=int))
    if shp.size == 1 and dim > 1:
        shp = np.repeat(shp, dim)
    if shp.size != dim:
        raise ConstructionError(f"shape {shape!r} does not match dim={dim}")
    return tuple(int(s) for s in shp)


@dataclass(frozen=True)
class LabelLattice:
    """Uniform lattice on the label box ``D``.

    Periodic lattices place ``n`` nodes at ``lo + i*L/n``; fixed-wall lattices
    place ``n`` nodes at ``lo + i*L/(n-1)`` so that both walls carry labels.
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
        if self.boundary not in (PERIODIC, FIXED_WALL):
            raise ConstructionError(f"unknown boundary {self.boundary!r}")
        if any(n < 2 for n in self.shape):
            raise ConstructionError(f"need at least 2 points per axis, got {self.shape}")
        if any(hi <= lo for lo, hi in self.bounds):
            raise ConstructionError(f"label extents must have positive measure: {self.bounds}")

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
        """Label coordinates, shape ``(*shape, dim)``."""
        return np.stack(np.meshgrid(*self.axes(), indexing="ij"), axis=-1)

    def wrap(self, xi):
        """Map labels back into the box (periodic lattices only)."""
        if not self.periodic:
            return np.asarray(xi, dtype=float)
        return self.lower + np.mod(np.asarray(xi, dtype=float) - self.lower, self.lengths)

    def to_index(self, xi):
        return (np.asarray(xi, dtype=float) - self.lower) / self.spacing


@dataclass(eq=False)
class FlowMap:
    """Discrete Lagrangian configuration.

    ``positions`` and ``momenta`` have shape ``(*lattice.shape, dim)``;
    ``rho0`` has shape ``lattice.shape``.  ``momenta`` is the label-space
    momentum density ``p = m rho0 dx/dt``.
    """

    lattice: LabelLattice
    positions: np.ndarray
    momenta: np.ndarray
    rho0: np.ndarray
    mass: float = 1.0
    time: float = 0.0

    def __post_init__(self):
        lat = self.lattice
        vshape = lat.shape + (lat.dim,)
        self.positions = np.array(self.positions, dtype=float)
        self.momenta = np.array(self.momenta, dtype=float)
        self.rho0 = np.broadcast_to(np.asarray(self.rho0, dtype=float), lat.shape).copy()
        if self.positions.shape != vshape or self.momenta.shape != vshape:
            raise ConstructionError(
                f"positions/momenta must have shape {vshape}, got "
                f"{self.positions.shape} and {self.momenta.shape}"
            )
        if not np.all(self.rho0 > 0) or not np.all(np.isfinite(self.rho0)):
            raise ConstructionError("rho0 must be finite and strictly positive")

    @property
    def dim(self):
        return self.lattice.dim

    def copy(self):
        return FlowMap(self.lattice, self.positions.copy(), self.momenta.copy(),
                       self.rho0.copy(), self.mass, self.time)

    def velocities(self):
        return self.momenta / (self.mass * self.rho0[..., None])

    def weights(self):
        """Number of particles carried by each label, ``rho0 * dV_xi``."""
        return self.rho0 * self.lattice.cell_volume

    def displacement(self):
        return self.positions - self.lattice.nodes()

    def total_momentum(self):
        return self.momenta.reshape(-1, self.dim).sum(axis=0) * self.lattice.cell_volume


# -- label-space finite differences ---------------------------------------

def label_diff(lattice, f, axis):
    """Second-order derivative of a lattice field along label ``axis``.

    Central differences with periodic wrap, or ``np.gradient`` with one-sided
    second-order stencils at fixed walls.
    """
    h = lattice.spacing[axis]
    if lattice.periodic:
        return (np.roll(f, -1, axis=axis) - np.roll(f, 1, axis=axis)) / (2.0 * h)
    edge = 2 if lattice.shape[axis] >= 3 else 1
    return np.gradient(f, h, axis=axis, edge_order=edge)


def deformation_field(fmap):
    """``A[..., j, k] = dx_j / dxi_k`` at every label."""
    lat = fmap.lattice
    A = np.empty(lat.shape + (lat.dim, lat.dim))
    if lat.periodic:
        disp = fmap.displacement()
        for k in range(lat.dim):
            A[..., :, k] = label_diff(lat, disp, k)
            A[..., k, k] += 1.0
    else:
        for k in range(lat.dim):
            A[..., :, k] = label_diff(lat, fmap.positions, k)
    return A


def deformation_matrix(fmap, label_index):
    """Deformation matrix ``A`` at a single label (tuple or int index)."""
    lat = fmap.lattice
    idx = tuple(np.atleast_1d(label_index).astype(int))
    if len(idx) != lat.dim:
        raise IndexError(f"label index {label_index!r} does not have {lat.dim} components")
    for i, n in zip(idx, lat.shape):
        if not (-n <= i < n):
            raise IndexError(f"label index {label_index!r} out of range for shape {lat.shape}")
    return deformation_field(fmap)[idx]


def _first_bad(det):
    bad = np.argwhere(~(det > 0))
    return tuple(int(i) for i in bad[0]) if len(bad) else None


def jacobian_density(fmap, A=None):
    """Density at each particle, ``rho0 / det A``.

    Raises :class:`FoldingError` naming the first label with ``det A <= 0``.
    """
    if A is None:
        A = deformation_field(fmap)
    det = np.linalg.det(A)
    bad = _first_bad(det)
    if bad is not None:
        raise FoldingError(f"det A = {det[bad]:.3e} <= 0 at label {bad}", label=bad)
    return fmap.rho0 / det


def build_lattice(dim, extents, shape, boundary=PERIODIC, rho0_fn=None, x0_fn=None,
                  v0_fn=None, m=1.0):
    """Create the ``t = 0`` flow map on a fresh label lattice.

    The callables receive the label coordinates (shape ``(*shape, dim)``) and
    return ``rho0`` (scalar per label), ``x0`` and ``v0`` (vectors per label).
    Defaults are unit density, the identity map and zero velocity.
    """
    lat = LabelLattice(dim, extents, shape, boundary)
    xi = lat.nodes()
    rho0 = np.ones(lat.shape) if rho0_fn is None else np.asarray(rho0_fn(xi), dtype=float)
    x0 = xi.copy() if x0_fn is None else np.asarray(x0_fn(xi), dtype=float)
    v0 = np.zeros_like(xi) if v0_fn is None else np.asarray(v0_fn(xi), dtype=float)
    rho0 = np.broadcast_to(rho0, lat.shape)
    if not np.all(np.isfinite(rho0)) or np.any(rho0 <= 0):
        raise ConstructionError("rho0 must be finite and strictly positive")
    x0 = np.broadcast_to(x0, xi.shape)
    v0 = np.broadcast_to(v0, xi.shape)
    fmap = FlowMap(lat, x0, m * rho0[..., None] * v0, rho0, mass=float(m), time=0.0)
    det = np.linalg.det(deformation_field(fmap))
    bad = _first_bad(det)
    if bad is not None:
        raise ConstructionError(f"initial map is not orientation preserving: det A = "
                                f"{det[bad]:.3e} at label {bad}")
    return fmap


# -- continuous interpolant and inverse map -------------------------------

def _bspline_taps(t, deriv):
    """Cubic B-spline weights of the four taps ``floor(u)-1 .. floor(u)+2``."""
    if deriv:
        return np.stack([-0.5 * (1 - t) ** 2, 1.5 * t * t - 2 * t,
                         -1.5 * t * t + t + 0.5, 0.5 * t * t], axis=-1)
    return np.stack([(1 - t) ** 3, 3 * t ** 3 - 6 * t * t + 4,
                     -3 * t ** 3 + 3 * t * t + 3 * t + 1, t ** 3], axis=-1) / 6.0


class _PeriodicSpline:
    """Periodic tensor cubic B-spline with analytic first derivatives."""

    def __init__(self, values, spacing):
        self.shape = values.shape[: len(spacing)]
        self.spacing = np.asarray(spacing, dtype=float)
        ncomp = values.shape[len(spacing):]
        flat = values.reshape(self.shape + (-1,))
        coeffs = [ndimage.spline_filter(flat[..., c], order=3, mode="grid-wrap")
                  for c in range(flat.shape[-1])]
        self.coeffs = np.stack(coeffs, axis=-1).reshape((-1, flat.shape[-1]))
        self.tail = ncomp

    def __call__(self, u, deriv_axis=None):
        """Evaluate at index coordinates ``u`` (``(N, dim)``)."""
        dim = len(self.shape)
        base = np.floor(u).astype(np.int64)
        t = u - base
        idx_axes, w_axes = [], []
        for a in range(dim):
            idx_axes.append(np.mod(base[:, a, None] + np.arange(-1, 3), self.shape[a]))
            w = _bspline_taps(t[:, a], deriv_axis == a)
            if deriv_axis == a:
                w = w / self.spacing[a]
            w_axes.append(w)
        out = np.zeros((len(u), self.coeffs.shape[1]))
        for combo in itertools.product(range(4), repeat=dim):
            flat = np.ravel_multi_index(tuple(idx_axes[a][:, c] for a, c in enumerate(combo)),
                                        self.shape)
            w = w_axes[0][:, combo[0]]
            for a in range(1, dim):
                w = w * w_axes[a][:, combo[a]]
            out += w[:, None] * self.coeffs[flat]
        return out.reshape((len(u),) + self.tail)


def _tensor_spline(axes, values):
    """Not-a-knot tensor B-spline through ``values[*grid, ...]``."""
    coeffs = values
    knots = []
    degree = min(3, min(len(a) for a in axes) - 1)
    for axis, nodes in enumerate(axes):
        spl = make_interp_spline(nodes, coeffs, k=degree, axis=axis)
        coeffs = spl.c
        if axis != 0:
            # make_interp_spline moves the interpolation axis to the front
            coeffs = np.moveaxis(coeffs, 0, axis)
        knots.append(spl.t)
    return NdBSpline(tuple(knots), coeffs, degree, extrapolate=True)


class LatticeSpline:
    """Cubic spline of a lattice field, evaluable with first label derivatives.

    Periodic lattices use a wrapped B-spline; fixed walls use a not-a-knot
    tensor spline that extrapolates slightly past the walls (needed while a
    Newton iteration approaches the boundary).
    """

    def __init__(self, lattice, values):
        self.lattice = lattice
        values = np.asarray(values, dtype=float)
        self.tail = values.shape[lattice.dim:]
        if lattice.periodic:
            self._impl = _PeriodicSpline(values, lattice.spacing)
        else:
            self._impl = _tensor_spline(lattice.axes(), values)

    def __call__(self, xi, deriv_axis=None):
        lat = self.lattice
        xi = np.atleast_2d(np.asarray(xi, dtype=float))
        if lat.periodic:
            return self._impl(lat.to_index(xi), deriv_axis)
        if deriv_axis is None:
            return self._impl(xi)
        nu = np.zeros(lat.dim, dtype=int)
        nu[deriv_axis] = 1
        return self._impl(xi, nu=nu)

    def gradient(self, xi):
        """Label gradient as a trailing axis, shape ``(N, *tail, dim)``."""
        return np.stack([self(xi, a) for a in range(self.lattice.dim)], axis=-1)


class MapInterpolant:
    """Continuous flow map ``x(xi)`` built from the lattice by cubic splines.

    The displacement ``x - xi`` is splined (it is periodic on periodic
    lattices) and ``A`` is the exact derivative of that spline, so Newton
    inversion converges quadratically.
    """

    def __init__(self, fmap):
        self.fmap = fmap
        self.lattice = fmap.lattice
        self._disp = LatticeSpline(fmap.lattice, fmap.displacement())
        self._fields = {}

    def position(self, xi):
        xi = np.atleast_2d(np.asarray(xi, dtype=float))
        return xi + self._disp(xi)

    def jacobian(self, xi):
        xi = np.atleast_2d(np.asarray(xi, dtype=float))
        return self._disp.gradient(xi) + np.eye(self.lattice.dim)

    def sample(self, values, xi, key=None):
        """Interpolate a lattice field at labels ``xi``; ``key`` caches the spline."""
        if key is not None and key in self._fields:
            spl = self._fields[key]
        else:
            spl = LatticeSpline(self.lattice, values)
            if key is not None:
                self._fields[key] = spl
        return spl(xi)


def inverse_map(fmap, x, tol=NEWTON_TOL, max_iter=NEWTON_MAX_ITER, interpolant=None):
    """Labels ``xi(x)`` of the particles currently at positions ``x``.

    Newton iteration on the interpolated forward map, seeded with the nearest
    lattice particle.  Returns an array of shape ``(N, dim)`` (or ``(dim,)``
    for a single point).
    """
    lat = fmap.lattice
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    if x.shape[1] != lat.dim:
        raise ValueError(f"positions must have {lat.dim} components")
    interp = interpolant or MapInterpolant(fmap)
    pos = fmap.positions.reshape(-1, lat.dim)
    nodes = lat.nodes().reshape(-1, lat.dim)
    if lat.periodic:
        L = lat.lengths
        tree = cKDTree(np.mod(pos - lat.lower, L), boxsize=L)
        _, nearest = tree.query(np.mod(x - lat.lower, L))
    else:
        tree = cKDTree(pos)
        _, nearest = tree.query(x)
    xi = nodes[nearest].copy()
    if lat.periodic:
        # seed label must be the image of x, not a periodic copy
        shift = np.round((x - pos[nearest]) / lat.lengths) * lat.lengths
        xi += shift
    atol = tol * max(1.0, float(np.max(np.abs(lat.bounds))))
    active = np.ones(len(x), dtype=bool)
    for _ in range(max_iter + 1):
        r = interp.position(xi[active]) - x[active]
        err = np.linalg.norm(r, axis=1)
        done = err < atol
        idx = np.flatnonzero(active)
        active[idx[done]] = False
        if not active.any():
            break
        todo = ~done
        step = np.linalg.solve(interp.jacobian(xi[idx[todo]]), r[todo][..., None])[..., 0]
        xi[idx[todo]] -= step
        if not lat.periodic:
            far = np.any((xi < lat.lower - lat.lengths) | (xi > lat.upper + lat.lengths), axis=1)
            if far.any():
                raise OutOfDomain(f"position {x[far][0]} is outside the image of the map")
    else:
        raise InverseError(f"Newton inversion did not converge in {max_iter} iterations "
                           f"for {int(active.sum())} point(s)")
    if lat.periodic:
        xi = lat.wrap(xi)
    else:
        slack = 1e-8 * lat.lengths
        out = np.any((xi < lat.lower - slack) | (xi > lat.upper + slack), axis=1)
        if out.any():
            raise OutOfDomain(f"position {x[out][0]} is outside the image of the map")
    return xi[0] if single else xi
