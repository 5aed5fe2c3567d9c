"""Self-gravitating gas: pairwise and grid gravity, virial diagnostics,
rotating static configurations and the static-energy bound functionals.

Conventions.  Every label (or particle) carries ``w`` constituents of mass
``m``.  The potential is ``U(x) = -int rho(y) / |x - y| dy`` so that
``lap U = 4 pi rho``; the acceleration of a constituent is
``x'' = -(gamma/m) grad U`` and the interaction energy is
``(gamma/2) int rho U = -(gamma/2) sum_{i != j} w_i w_j / |x_i - x_j|``.
The pair kernel is Plummer-softened, ``1/sqrt(r^2 + eps^2)``.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy import integrate as _quad
from scipy.interpolate import CubicSpline
from scipy.signal import fftconvolve
from scipy.spatial.distance import cdist

from .deposition import deposit_density, gather, scatter
from .dynamics import ForceModel
from .errors import ConstructionError, GridMismatch, OutOfDomain
from .grid import (CLAMPED, Grid, GridField, check_same_grid, diff, gradient, grid_integral,
                   spectral_poisson)
from .lattice import FlowMap

SOLVERS = ("direct", "spectral")
BOUNDARIES = ("open", "periodic")
LADYZHENSKAYA_CONSTANT = 48.0 ** (1.0 / 6.0)
_PAIR_BLOCK = 2_000_000


@dataclass(frozen=True)
class GravitySpec:
    """Gravitational constant, Plummer softening and solver choice.

    ``softening=None`` means one lattice (or grid) spacing when the input
    has one and zero for bare particle sets.
    """

    gamma: float = 1.0
    softening: float | None = None
    solver: str = "direct"
    boundary: str = "open"

    def __post_init__(self):
        if not self.gamma > 0:
            raise ConstructionError(f"gamma must be positive, got {self.gamma}")
        if self.softening is not None and not self.softening >= 0:
            raise ConstructionError(f"softening must be >= 0, got {self.softening}")
        if self.solver not in SOLVERS:
            raise ConstructionError(f"unknown solver {self.solver!r}; choose from {SOLVERS}")
        if self.boundary not in BOUNDARIES:
            raise ConstructionError(f"unknown boundary {self.boundary!r}")
        if self.solver == "spectral" and self.boundary != "periodic":
            raise ConstructionError("the spectral Poisson solver needs a periodic boundary")

    def eps(self, spacing=None):
        if self.softening is not None:
            return float(self.softening)
        return 0.0 if spacing is None else float(np.min(spacing))


@dataclass(eq=False)
class ParticleSet:
    """Point constituents: ``positions``/``velocities`` ``(N, d)``, counts ``weights`` ``(N,)``."""

    positions: np.ndarray
    velocities: np.ndarray
    weights: np.ndarray
    mass: float = 1.0
    time: float = 0.0

    def __post_init__(self):
        self.positions = np.atleast_2d(np.asarray(self.positions, dtype=float))
        self.velocities = np.atleast_2d(np.asarray(self.velocities, dtype=float))
        self.weights = np.asarray(self.weights, dtype=float).reshape(-1)
        n, d = self.positions.shape
        if self.velocities.shape != (n, d) or self.weights.shape != (n,):
            raise ConstructionError("positions, velocities and weights disagree in size")
        if np.any(self.weights < 0):
            raise ConstructionError("particle weights must be non-negative")

    @classmethod
    def from_flowmap(cls, fmap):
        d = fmap.dim
        return cls(fmap.positions.reshape(-1, d), fmap.velocities().reshape(-1, d),
                   fmap.weights().ravel(), fmap.mass, fmap.time)

    def to_flowmap(self, template):
        """Write positions and velocities back into a copy of ``template``."""
        out = template.copy()
        shape = template.positions.shape
        out.positions = self.positions.reshape(shape).copy()
        out.momenta = (self.velocities.reshape(shape) * template.mass
                       * template.rho0[..., None])
        out.time = self.time
        return out

    @property
    def dim(self):
        return self.positions.shape[1]

    def copy(self):
        return ParticleSet(self.positions.copy(), self.velocities.copy(),
                           self.weights.copy(), self.mass, self.time)

    def kinetic_energy(self):
        return float(0.5 * self.mass * np.sum(self.weights * np.sum(self.velocities ** 2, axis=1)))

    def total_momentum(self):
        return self.mass * np.sum(self.weights[:, None] * self.velocities, axis=0)


def _as_particles(state):
    if isinstance(state, ParticleSet):
        return state, None
    if isinstance(state, FlowMap):
        return ParticleSet.from_flowmap(state), state.lattice.spacing
    raise TypeError(f"expected ParticleSet or FlowMap, got {type(state).__name__}")


# -- direct summation -----------------------------------------------------

def _pair_sums(targets, sources, w, eps, threads=1, want="both"):
    """Softened sums over sources for every target point.

    Returns ``(phi, grad)`` with ``phi_i = -sum_j w_j / sqrt(r^2 + eps^2)``
    and ``grad_i = sum_j w_j (x_i - x_j) / (r^2 + eps^2)^{3/2}``.  Exactly
    coincident pairs are skipped, which removes the self term when
    ``eps = 0``; callers subtract ``w_i/eps`` for the softened self term.
    """
    nt, d = targets.shape
    rows = max(1, _PAIR_BLOCK // max(1, len(sources) * d))
    blocks = [slice(a, min(a + rows, nt)) for a in range(0, nt, rows)]

    def work(sl):
        t = targets[sl]
        r2 = cdist(t, sources, "sqeuclidean")
        if eps * eps == 0:
            # also covers softenings whose square underflows
            live = r2 > 0
            inv = np.where(live, 1.0 / np.sqrt(np.where(live, r2, 1.0)), 0.0)
        else:
            inv = 1.0 / np.sqrt(r2 + eps * eps)
        phi = -(inv @ w) if want != "grad" else None
        grad = None
        if want != "phi":
            # sum_j c_ij (x_i - x_j) = x_i sum_j c_ij - (c @ x)_i
            # coincident pairs exert no force; dropping them avoids 1/eps^3 overflow
            c = np.where(r2 > 0, inv * inv * inv, 0.0) * w
            grad = t * c.sum(axis=1)[:, None] - c @ sources
        return phi, grad

    threads = max(1, int(threads))
    if threads == 1 or len(blocks) == 1:
        parts = [work(b) for b in blocks]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(work, blocks))
    phi = np.concatenate([p[0] for p in parts]) if want != "grad" else None
    grad = np.concatenate([p[1] for p in parts]) if want != "phi" else None
    return phi, grad


def accelerations(state, spec, threads=1):
    """``x_i'' = -(gamma/m) sum_j w_j (x_i - x_j) / (r^2 + eps^2)^{3/2}`` (direct sum)."""
    ps, spacing = _as_particles(state)
    eps = spec.eps(spacing)
    _, g = _pair_sums(ps.positions, ps.positions, ps.weights, eps, threads, want="grad")
    return -(spec.gamma / ps.mass) * g


def potential_energy(state, spec, threads=1):
    """``-(gamma/2) sum_{i != j} w_i w_j / sqrt(r^2 + eps^2)``."""
    ps, spacing = _as_particles(state)
    eps = spec.eps(spacing)
    phi, _ = _pair_sums(ps.positions, ps.positions, ps.weights, eps, threads, want="phi")
    if eps * eps > 0:
        phi = phi + ps.weights / eps
    return float(0.5 * spec.gamma * np.sum(ps.weights * phi))


def total_energy(state, spec, threads=1):
    ps, _ = _as_particles(state)
    return ps.kinetic_energy() + potential_energy(state, spec, threads)


# -- grid potentials ------------------------------------------------------

def _face_integral(d, a, b):
    """``int_{[-a,a]x[-b,b]} dA / sqrt(d^2 + s^2 + t^2)``."""
    val, _ = _quad.dblquad(lambda t, s: 1.0 / math.sqrt(d * d + s * s + t * t),
                           0.0, a, 0.0, b, epsabs=1e-13, epsrel=1e-12)
    return 4.0 * val


def cell_average_inverse_distance(spacing):
    """Mean of ``1/r`` over a box cell centred on the origin.

    Splitting the box into pyramids over its faces gives
    ``int 1/r dV = 1/2 sum_faces d_f int_face dA / r``.
    """
    h = np.asarray(spacing, dtype=float) / 2.0
    total = 0.0
    for ax in range(3):
        other = [h[k] for k in range(3) if k != ax]
        total += 2.0 * 0.5 * h[ax] * _face_integral(h[ax], *other)
    return total / float(np.prod(2.0 * h))


def _require_3d(grid):
    if grid.dim != 3:
        raise ConstructionError("grid potentials use the 3D 1/r kernel and need a 3D grid")


def _direct_grid_potential(grid, rho, eps):
    """Zero-padded convolution with the softened kernel (an exact discrete direct sum)."""
    _require_3d(grid)
    h = grid.spacing
    offs = [h[a] * np.arange(-(n - 1), n) for a, n in enumerate(grid.shape)]
    X = np.meshgrid(*offs, indexing="ij")
    r2 = sum(x * x for x in X)
    if eps > 0:
        K = 1.0 / np.sqrt(r2 + eps * eps)
    else:
        with np.errstate(divide="ignore"):
            K = 1.0 / np.sqrt(r2)
        K[tuple(n - 1 for n in grid.shape)] = cell_average_inverse_distance(h)
    full = fftconvolve(rho, K, mode="full")
    sl = tuple(slice(n - 1, 2 * n - 1) for n in grid.shape)
    return -full[sl] * grid.cell_volume


def _spectral_potential(grid, rho, with_gradient=False):
    """Periodic solve of ``lap U = 4 pi (rho - mean rho)``."""
    return spectral_poisson(grid, -4.0 * np.pi * rho, with_gradient)


def gravitational_potential(source, spec, grid=None, threads=1, kernel="tsc"):
    """``U(x) = -int rho(y)/|x - y| dy`` on a grid (``gamma`` is not included).

    ``source`` is a density :class:`GridField`, a :class:`FlowMap` or a
    :class:`ParticleSet`; particle sources need ``grid``.  The direct solver
    sums the softened kernel (open boundary); the spectral solver inverts
    ``lap U = 4 pi (rho - mean)`` on a periodic grid.
    """
    if isinstance(source, GridField):
        grid = source.grid
        eps = spec.eps(grid.spacing) if spec.softening is not None else 0.0
        if spec.solver == "spectral":
            U = _spectral_potential(grid, source.values)
        else:
            U = _direct_grid_potential(grid, source.values, eps)
        return GridField(grid, U, "number/length")
    if grid is None:
        raise ConstructionError("particle sources need a target grid")
    ps, spacing = _as_particles(source)
    if spec.solver == "spectral":
        rho = scatter(grid, ps.positions, ps.weights, kernel) / grid.cell_volume
        return GridField(grid, _spectral_potential(grid, rho), "number/length")
    nodes = grid.nodes().reshape(-1, grid.dim)
    phi, _ = _pair_sums(nodes, ps.positions, ps.weights, spec.eps(spacing), threads, want="phi")
    return GridField(grid, phi.reshape(grid.shape), "number/length")


@dataclass
class SelfGravity(ForceModel):
    """Self-gravity as a :mod:`lagmedia.dynamics` force model.

    ``direct`` sums pairs over labels; ``spectral`` deposits the density on a
    periodic grid (``grid_shape``, default the lattice shape), solves for
    ``U`` and gathers ``grad U`` with the same kernel, which keeps the total
    momentum exact.
    """

    spec: GravitySpec
    threads: int = 1
    grid_shape: tuple | None = None
    kernel: str = "tsc"

    def _grid(self, fmap):
        if not fmap.lattice.periodic:
            raise ConstructionError("spectral self-gravity needs a periodic lattice")
        return Grid.matching(fmap.lattice, self.grid_shape)

    def force(self, fmap, A=None):
        if self.spec.solver == "direct":
            a = accelerations(fmap, self.spec, self.threads).reshape(fmap.positions.shape)
            return fmap.mass * fmap.rho0[..., None] * a
        grid = self._grid(fmap)
        rho = deposit_density(fmap, grid, self.kernel, self.threads)
        _, gU = _spectral_potential(grid, rho.values, with_gradient=True)
        g = gather(grid, gU, fmap.positions.reshape(-1, fmap.dim), self.kernel)
        return -self.spec.gamma * fmap.rho0[..., None] * g.reshape(fmap.positions.shape)

    def energy(self, fmap, A=None):
        if self.spec.solver == "direct":
            return potential_energy(fmap, self.spec, self.threads)
        grid = self._grid(fmap)
        rho = deposit_density(fmap, grid, self.kernel, self.threads).values
        U = _spectral_potential(grid, rho)
        return float(0.5 * self.spec.gamma * grid_integral(grid, rho * U))


# -- time stepping --------------------------------------------------------

def _kdk(ps, spec, dt, acc, threads):
    v_half = ps.velocities + 0.5 * dt * acc
    out = ps.copy()
    out.positions = ps.positions + dt * v_half
    acc_new = accelerations(out, spec, threads)
    out.velocities = v_half + 0.5 * dt * acc_new
    out.time = ps.time + dt
    return out, acc_new


def gravity_step(state, spec, dt, threads=1):
    """One kick-drift-kick step under direct-sum self-gravity.

    Labels are free: a non-periodic lattice boundary is a free surface in
    open space, not a wall.
    """
    ps, _ = _as_particles(state)
    if isinstance(state, FlowMap) and spec.softening is None:
        spec = GravitySpec(spec.gamma, float(np.min(state.lattice.spacing)),
                           spec.solver, spec.boundary)
    out, _ = _kdk(ps, spec, dt, accelerations(ps, spec, threads), threads)
    return out.to_flowmap(state) if isinstance(state, FlowMap) else out


def gravity_integrate(state, spec, dt, steps, observer=None, cadence=1, threads=1):
    """Leapfrog for ``steps`` steps with one force evaluation per step.

    ``observer(state, step)`` is called on the initial state and every
    ``cadence`` steps.  Returns the final state.
    """
    template = state if isinstance(state, FlowMap) else None
    if template is not None and spec.softening is None:
        spec = GravitySpec(spec.gamma, float(np.min(template.lattice.spacing)),
                           spec.solver, spec.boundary)
    ps, _ = _as_particles(state)
    wrap = (lambda p: p.to_flowmap(template)) if template is not None else (lambda p: p)
    acc = accelerations(ps, spec, threads)
    if observer is not None:
        observer(wrap(ps), 0)
    for n in range(1, steps + 1):
        ps, acc = _kdk(ps, spec, dt, acc, threads)
        if not np.all(np.isfinite(ps.positions)):
            raise OutOfDomain(f"non-finite positions after step {n}")
        if observer is not None and n % cadence == 0:
            observer(wrap(ps), n)
    return wrap(ps)


# -- orbits and equilibria --------------------------------------------------

def kepler_period(clump_weight, separation, gamma=1.0, m=1.0):
    """Circular period of two equal point clumps, ``2 pi sqrt(m d^3 / (2 gamma M))``."""
    return 2.0 * np.pi * np.sqrt(m * separation ** 3 / (2.0 * gamma * clump_weight))


def two_clump_state(clump_weight, separation, spec, m=1.0, dim=3):
    """Two equal point clumps on the circular orbit of the softened pair force."""
    if dim not in (2, 3):
        raise ConstructionError("two-clump orbits need dim 2 or 3")
    eps = spec.eps()
    d = float(separation)
    omega = np.sqrt(2.0 * spec.gamma * clump_weight * d / (m * (d * d + eps * eps) ** 1.5) / d)
    x = np.zeros((2, dim))
    v = np.zeros((2, dim))
    x[0, 0], x[1, 0] = -d / 2, d / 2
    v[0, 1], v[1, 1] = -omega * d / 2, omega * d / 2
    return ParticleSet(x, v, [clump_weight, clump_weight], m)


def orbital_period(times, separations):
    """Time for the separation vector to sweep its first full turn.

    Linear interpolation of the unwrapped polar angle; ``separations`` is
    ``(T, >=2)`` with the orbit in the first two coordinates.
    """
    s = np.asarray(separations)
    ang = np.unwrap(np.arctan2(s[:, 1], s[:, 0]))
    swept = np.abs(ang - ang[0])
    k = np.nonzero(swept >= 2.0 * np.pi)[0]
    if not len(k):
        raise ValueError("orbit did not complete a full turn")
    i = k[0]
    t0, t1 = times[i - 1], times[i]
    a0, a1 = swept[i - 1], swept[i]
    return float(t0 + (2.0 * np.pi - a0) * (t1 - t0) / (a1 - a0))


def ring_equilibrium(n, radius, ring_weight, spec, central_weight=0.0, m=1.0):
    """``n`` equal particles on a rigidly rotating ring, optionally with a central mass.

    The angular speed balances the radial force on every ring particle, so
    the density pattern is a rotating relative equilibrium; in the continuum
    limit the ring is a static configuration of the gravitating gas.
    """
    if n < 3:
        raise ConstructionError("a ring needs at least 3 particles")
    th = 2.0 * np.pi * np.arange(n) / n
    x = np.zeros((n, 3))
    x[:, 0], x[:, 1] = radius * np.cos(th), radius * np.sin(th)
    w = np.full(n, ring_weight / n)
    if central_weight > 0:
        x = np.vstack([x, np.zeros((1, 3))])
        w = np.append(w, central_weight)
    ps = ParticleSet(x, np.zeros_like(x), w, m)
    a = accelerations(ps, spec)
    a_in = -np.sum(a[0] * x[0]) / radius
    if not a_in > 0:
        raise ConstructionError("the net radial force on the ring is not attractive")
    omega = np.sqrt(a_in / radius)
    ps.velocities[:n, 0] = -omega * x[:n, 1]
    ps.velocities[:n, 1] = omega * x[:n, 0]
    return ps


class VirialResult(NamedTuple):
    kinetic: float
    potential: float
    residual: float
    relative: float

    @property
    def energy(self):
        return self.kinetic + self.potential


def _virial(T, U):
    res = 2.0 * T + U
    rel = abs(res) / abs(U) if U != 0 else (0.0 if res == 0 else np.inf)
    return VirialResult(float(T), float(U), float(res), float(rel))


def virial_residual(state, spec, v=None, m=1.0, threads=1):
    """``2T + U_pot`` with ``T = (m/2) int rho v^2`` and ``U_pot = (gamma/2) int rho U``.

    ``state`` is a :class:`ParticleSet`, a :class:`FlowMap` or a density
    :class:`GridField` (then ``v`` is its velocity field).  The identity is
    only meaningful for isolated matter, so periodic inputs are rejected.
    """
    if spec.boundary == "periodic":
        raise ConstructionError("the virial identity assumes isolated matter (open boundary)")
    if isinstance(state, GridField):
        grid = check_same_grid(state, v)
        if grid.periodic:
            raise ConstructionError("the virial identity assumes isolated matter")
        rho = state.values
        T = 0.5 * m * grid_integral(grid, rho * np.sum(v.values ** 2, axis=-1))
        U = gravitational_potential(state, spec).values
        return _virial(T, 0.5 * spec.gamma * grid_integral(grid, rho * U))
    if isinstance(state, FlowMap) and state.lattice.periodic:
        raise ConstructionError("the virial identity assumes isolated matter")
    ps, _ = _as_particles(state)
    return _virial(ps.kinetic_energy(), potential_energy(state, spec, threads))


# -- tornado profiles ------------------------------------------------------

@dataclass(eq=False)
class RadialProfile:
    r: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        self.r = np.asarray(self.r, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if self.r.ndim != 1 or self.r.shape != self.values.shape or len(self.r) < 2:
            raise ConstructionError("radial profile needs matching 1D r and values")
        if self.r[0] != 0.0 or np.any(np.diff(self.r) <= 0):
            raise ConstructionError("r must start at 0 and increase strictly")
        if not np.all(np.isfinite(self.values)):
            raise ConstructionError("profile values must be finite")


def _cumulative(r, f, method):
    if method == "trapezoid":
        return _quad.cumulative_trapezoid(f, r, initial=0.0)
    if method == "simpson":
        return _quad.cumulative_simpson(f, x=r, initial=0.0)
    raise ValueError(f"unknown quadrature {method!r}")


def enclosed_mass(rho, method="trapezoid"):
    """``M(r) = int_0^r s rho(s) ds`` (per unit length, divided by 2 pi)."""
    if np.any(rho.values < 0):
        raise OutOfDomain("density profile must be non-negative")
    M = _cumulative(rho.r, rho.r * rho.values, method)
    if not np.all(np.isfinite(M)):
        raise OutOfDomain("cumulative mass diverges on this profile")
    return M


def tornado_profile(rho, gamma=1.0, m=1.0, method="trapezoid"):
    """Rotation speed of the axisymmetric static column, ``v^2 = (4 pi gamma/m) M(r)``."""
    v2 = 4.0 * np.pi * gamma / m * enclosed_mass(rho, method)
    v2 = np.maximum(v2, 0.0)
    return RadialProfile(rho.r.copy(), np.sqrt(v2))


def tornado_closed_form(r, rho_c, gamma=1.0, m=1.0, sigma=None):
    """Closed-form ``v(r)`` for constant (``sigma=None``) or Gaussian core density."""
    r = np.asarray(r, dtype=float)
    if sigma is None:
        v2 = 2.0 * np.pi * gamma / m * rho_c * r * r
    else:
        v2 = 4.0 * np.pi * gamma / m * rho_c * sigma ** 2 * -np.expm1(-r * r / (2 * sigma ** 2))
    return np.sqrt(v2)


def column_potential(rho, method="trapezoid"):
    """``U(r)`` of the infinite column, ``U' = 4 pi M(r)/r`` with ``U(0) = 0``."""
    M = enclosed_mass(rho, method)
    r = rho.r
    dU = np.zeros_like(r)
    dU[1:] = 4.0 * np.pi * M[1:] / r[1:]
    return RadialProfile(r.copy(), _cumulative(r, dU, method))


def column_grid(n, half_width, height=None, nz=None):
    """Clamped 3D grid ``[-a, a]^2 x [-h/2, h/2]`` for column configurations."""
    height = half_width if height is None else height
    nz = max(3, n // 4) if nz is None else nz
    return Grid(3, [(-half_width, half_width)] * 2 + [(-height / 2, height / 2)],
                (n, n, nz), CLAMPED)


def _radius(grid):
    X = grid.nodes()
    return np.hypot(X[..., 0], X[..., 1]), X


def embed_tornado(rho, v, grid):
    """Place a column ``rho(r)``, ``v(r) phi_hat`` on a 3D grid.

    Beyond the last profile radius the density is zero and ``v^2`` keeps its
    final value, which is the exact continuation of the column equation.
    ``v`` is interpolated through the smooth ratio ``v^2/r^2``.
    """
    _require_3d(grid)
    if not np.allclose(rho.r, v.r):
        raise GridMismatch("density and velocity profiles use different radii")
    r_grid, X = _radius(grid)
    r = rho.r
    rmax = r[-1]
    inside = r_grid <= rmax
    rho_s = CubicSpline(r, rho.values, bc_type=((1, 0.0), "not-a-knot"))
    q = np.empty_like(r)
    q[1:] = v.values[1:] ** 2 / r[1:] ** 2
    # q is even in r: extrapolate in r^2 to the axis
    q[0] = q[1] if len(r) < 3 else (q[1] * r[2] ** 2 - q[2] * r[1] ** 2) / (r[2] ** 2 - r[1] ** 2)
    q_s = CubicSpline(r, q, bc_type=((1, 0.0), "not-a-knot"))
    rho_g = np.where(inside, rho_s(np.minimum(r_grid, rmax)), 0.0)
    safe = np.where(r_grid > 0, r_grid, 1.0)
    qg = np.where(inside, q_s(np.minimum(r_grid, rmax)), v.values[-1] ** 2 / safe ** 2)
    omega = np.sqrt(np.maximum(qg, 0.0))
    vel = np.stack([-omega * X[..., 1], omega * X[..., 0], np.zeros(grid.shape)], axis=-1)
    return GridField(grid, np.maximum(rho_g, 0.0), "number/volume"), GridField(grid, vel, "length/time")


def _advection(grid, v):
    return sum(v[..., a, None] * diff(grid, v, a) for a in range(grid.dim))


class StaticResiduals(NamedTuple):
    divergence: float
    continuity: float
    curl: float


def static_residuals(rho, v, spec, m=1.0, mask=None):
    """L2 norms of the three local static equations.

    ``div((v.grad)v) + 4 pi (gamma/m) rho``, ``div(rho v)`` and
    ``curl((v.grad)v)``; ``mask`` restricts the norms (e.g. away from
    one-sided wall stencils).
    """
    grid = check_same_grid(rho, v)
    _require_3d(grid)
    a = _advection(grid, v.values)
    r1 = sum(diff(grid, a[..., k], k) for k in range(3)) + 4.0 * np.pi * spec.gamma / m * rho.values
    flux = rho.values[..., None] * v.values
    r2 = sum(diff(grid, flux[..., k], k) for k in range(3))
    r3 = np.stack([diff(grid, a[..., 2], 1) - diff(grid, a[..., 1], 2),
                   diff(grid, a[..., 0], 2) - diff(grid, a[..., 2], 0),
                   diff(grid, a[..., 1], 0) - diff(grid, a[..., 0], 1)], axis=-1)
    w = np.ones(grid.shape) if mask is None else mask.astype(float)

    def norm(f):
        f2 = f * f if f.ndim == 3 else np.sum(f * f, axis=-1)
        return float(np.sqrt(np.sum(w * f2) * grid.cell_volume))

    return StaticResiduals(norm(r1), norm(r2), norm(r3))


# -- energy bound ---------------------------------------------------------

def _masked_integral(grid, f, mask):
    return grid_integral(grid, f if mask is None else np.where(mask, f, 0.0))


def static_energy_from_velocity(v, spec, m=1.0, mask=None):
    """``E_static = -(m^2 / (16 pi gamma)) int |(v.grad)v|^2``."""
    a = _advection(v.grid, v.values)
    return -m * m / (16.0 * np.pi * spec.gamma) * _masked_integral(
        v.grid, np.sum(a * a, axis=-1), mask)


def static_energy_from_potential(U, spec, mask=None):
    """``E_static = -(gamma / (16 pi)) int |grad U|^2``."""
    g = gradient(U.grid, U.values)
    return -spec.gamma / (16.0 * np.pi) * _masked_integral(U.grid, np.sum(g * g, axis=-1), mask)


def bound_rhs(rho, f, spec, mask=None):
    """``pi gamma (int rho f)^2 / int |grad f|^2``; raises on a constant ``f``."""
    grid = check_same_grid(rho, f)
    g = gradient(grid, f.values)
    den = _masked_integral(grid, np.sum(g * g, axis=-1), mask)
    if not den > 0:
        raise ValueError("trial function has zero gradient; the bound is degenerate")
    num = _masked_integral(grid, rho.values * f.values, mask)
    return float(np.pi * spec.gamma * num * num / den)


def energy_bound_ratio(rho, v, f, spec, m=1.0, mask=None):
    """``(-E_static) / (pi gamma (int rho f)^2 / int |grad f|^2)``.

    ``-E_static`` is taken from the velocity form.  A trial function with
    ``int rho f = 0`` gives ``inf`` (the bound holds trivially).
    """
    lhs = -static_energy_from_velocity(v, spec, m, mask)
    rhs = bound_rhs(rho, f, spec, mask)
    return float(np.inf) if rhs == 0 else float(lhs / rhs)


def cylinder_mask(grid, radius):
    r, _ = _radius(grid)
    return r < radius


def column_trial_potential(rho, grid, radius, method="trapezoid"):
    """Saturating trial function ``U(r) - U(R)`` inside ``r < R``, zero outside."""
    U = column_potential(rho, method)
    r_grid, _ = _radius(grid)
    # extend U beyond the profile with the vacuum column law U' = 4 pi M / r
    M_end = enclosed_mass(rho, method)[-1]
    r_end = rho.r[-1]
    Us = CubicSpline(U.r, U.values)

    def U_of(r):
        out = Us(np.minimum(r, r_end))
        far = r > r_end
        return np.where(far, U.values[-1] + 4 * np.pi * M_end * np.log(np.where(far, r, r_end) / r_end), out)

    f = np.where(r_grid < radius, U_of(r_grid) - U_of(np.array(radius)), 0.0)
    return GridField(grid, f, "number/length")


def random_trial_functions(grid, count, seed, radius, modes=4, amplitude_decay=1.0):
    """Fixed-seed smooth trial functions: random Fourier sums windowed by ``(1 - r^2/R^2)^2``."""
    rng = np.random.default_rng(seed)
    r_grid, X = _radius(grid)
    window = np.where(r_grid < radius, (1.0 - (r_grid / radius) ** 2) ** 2, 0.0)
    L = grid.lengths
    out = []
    for _ in range(count):
        f = np.full(grid.shape, rng.normal())
        for _ in range(modes):
            k = rng.integers(-2, 3, size=3) * 2.0 * np.pi / L
            amp = rng.normal() / (1.0 + np.linalg.norm(k * L / (2 * np.pi))) ** amplitude_decay
            f = f + amp * np.cos(np.tensordot(X, k, axes=([-1], [0])) + rng.uniform(0, 2 * np.pi))
        out.append(GridField(grid, window * f))
    return out


# -- norm inequalities ----------------------------------------------------

class LadyzhenskayaResult(NamedTuple):
    norm6: float
    bound: float
    margin: float
    J: float | None = None
    J_bound: float | None = None


def lp_norm(grid, f, p):
    return float(grid_integral(grid, np.abs(f) ** p) ** (1.0 / p))


def ladyzhenskaya_check(f, rho=None):
    """``||f||_6`` against ``48^{1/6} ||grad f||_2`` and, with ``rho``, ``|J|`` against
    ``48^{1/6} ||rho||_{6/5}`` where ``J = int rho f / ||grad f||_2``."""
    grid = f.grid
    g = gradient(grid, f.values)
    gnorm = float(np.sqrt(grid_integral(grid, np.sum(g * g, axis=-1))))
    n6 = lp_norm(grid, f.values, 6)
    bound = LADYZHENSKAYA_CONSTANT * gnorm
    if rho is None:
        return LadyzhenskayaResult(n6, bound, bound - n6)
    check_same_grid(f, rho)
    J = float(grid_integral(grid, rho.values * f.values) / gnorm) if gnorm > 0 else 0.0
    Jb = LADYZHENSKAYA_CONSTANT * lp_norm(grid, rho.values, 6.0 / 5.0)
    return LadyzhenskayaResult(n6, bound, bound - n6, J, Jb)


def gaussian_norms(s):
    """``||f||_6`` and ``||grad f||_2`` for ``f = exp(-r^2 / (2 s^2))`` in 3D."""
    return (np.pi / 3.0) ** 0.25 * np.sqrt(s), np.sqrt(1.5 * np.pi ** 1.5 * s)


def shafranov_functional(rho, v, V, m=1.0):
    """``int (rho v^2 + 3 p)`` for a non-gravitating barotropic gas.

    A decaying static configuration must make this vanish, so a strictly
    positive value rules the candidate out.
    """
    grid = check_same_grid(rho, v)
    p = V.pressure(rho.values, m)
    return float(grid_integral(grid, rho.values * np.sum(v.values ** 2, axis=-1) + 3.0 * p))


def field_energy_identity(rho, spec):
    """Both sides of ``int |grad U|^2 = 4 pi int int rho rho' / |x - y|`` on an open grid.

    The gradient side adds the monopole tail outside the box,
    ``M^2 int dOmega / r_box(Omega)``, taken about the centre of mass.
    Returns ``(gradient form, double-integral form)``.
    """
    grid = rho.grid
    U = gravitational_potential(rho, GravitySpec(spec.gamma, spec.softening, "direct", "open"))
    g = gradient(grid, U.values)
    inner = grid_integral(grid, np.sum(g * g, axis=-1))
    M = grid_integral(grid, rho.values)
    X = grid.nodes()
    c = np.array([grid_integral(grid, rho.values * X[..., a]) for a in range(3)]) / M
    # node sums cover the box grown by half a cell on every side
    lo, hi = grid.lower - 0.5 * grid.spacing - c, grid.upper + 0.5 * grid.spacing - c
    th = (np.arange(400) + 0.5) * np.pi / 400
    ph = (np.arange(800) + 0.5) * 2 * np.pi / 800
    T, P = np.meshgrid(th, ph, indexing="ij")
    n = np.stack([np.sin(T) * np.cos(P), np.sin(T) * np.sin(P), np.cos(T)], axis=-1)
    with np.errstate(divide="ignore"):
        reach = np.where(n > 0, hi / n, np.where(n < 0, lo / n, np.inf))
    rb = np.min(reach, axis=-1)
    tail = M * M * np.sum(np.sin(T) / rb) * (np.pi / 400) * (2 * np.pi / 800)
    double = -4.0 * np.pi * grid_integral(grid, rho.values * U.values)
    return float(inner + tail), float(double)


def column_helicity(r, z, alpha, beta, k):
    """Helicity ``2 pi k int d cos(alpha) ^ d beta`` over a meridional ``(r, z)`` grid.

    ``beta`` may wind by ``2 pi``; its differences are wrapped.  The 2-form
    is integrated with the orientation ``dr ^ dz``.
    """
    r = np.asarray(r, dtype=float)
    z = np.asarray(z, dtype=float)
    c = np.cos(alpha)
    dr, dz = r[1] - r[0], z[1] - z[0]

    def wrapped(f, axis, h):
        fw = np.exp(1j * f)
        return np.angle(np.roll(fw, -1, axis) * np.conj(np.roll(fw, 1, axis))) / (2 * h)

    cr, cz = np.gradient(c, dr, dz)
    br, bz = wrapped(beta, 0, dr), wrapped(beta, 1, dz)
    form = cr * bz - cz * br
    # the wrapped stencil is not valid on the outer rows; those lie where c is flat
    form[[0, -1], :] = 0.0
    form[:, [0, -1]] = 0.0
    return float(2.0 * np.pi * k * np.sum(form) * dr * dz)
