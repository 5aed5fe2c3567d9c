"""Fluid dynamics in terms of a complex doublet ``u = (u1, u2)`` on a grid.

The density and velocity are ``rho = |u1|^2 + |u2|^2`` and
``v = Im(conj(u) . grad u) / rho``; the Hamiltonian is
``int [m |Im(conj(u) grad u)|^2 / (2 rho) + V(rho)]``.  The doublet evolves by
``du/dt = -(i/m) dH/d(conj u)``, the sign that follows from the first-order
Lagrangian ``(i m/2)(conj(u) du/dt - c.c.) - H``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConstructionError, VacuumError
from .grid import GridField, diff, grid_integral

PAULI = np.array([[[0, 1], [1, 0]], [[0, -1j], [1j, 0]], [[1, 0], [0, -1]]], dtype=complex)
VACUUM_EPS = 1e-8


@dataclass(eq=False)
class ClebschDoublet:
    grid: object
    u: np.ndarray
    mass: float = 1.0

    def __post_init__(self):
        self.u = np.asarray(self.u, dtype=complex)
        if self.u.shape != self.grid.shape + (2,):
            raise ConstructionError(f"doublet must have shape {self.grid.shape + (2,)}")

    def density(self):
        return np.sum(np.abs(self.u) ** 2, axis=-1)

    def copy(self):
        return ClebschDoublet(self.grid, self.u.copy(), self.mass)


@dataclass(eq=False)
class ClebschAngles:
    """``rho`` and the angles of ``u = sqrt(rho) e^{i phi/2} (e^{-i psi/2} cos(a/2), e^{i psi/2} sin(a/2))``.

    ``phi = arg u1 + arg u2`` and ``psi = arg u2 - arg u1`` are kept unreduced
    so the reconstruction is exact node by node.  ``degenerate`` flags nodes
    where one component vanishes and ``psi`` carries no information.
    """

    rho: np.ndarray
    phi: np.ndarray
    psi: np.ndarray
    alpha: np.ndarray
    degenerate: np.ndarray


def _current(grid, u):
    """``j_a = Im(conj(u) . D_a u)`` for each axis, shape ``(*shape, dim)``."""
    return np.stack([np.sum(np.imag(np.conj(u) * diff(grid, u, a)), axis=-1)
                     for a in range(grid.dim)], axis=-1)


def project_euler(d):
    """Euler variables ``(rho, v, vacuum)`` of a doublet.

    The velocity divides the current by ``rho``; nodes with
    ``rho <= 1e-12 mean(rho)`` get ``v = 0`` and are flagged.
    """
    grid = d.grid
    rho = d.density()
    j = _current(grid, d.u)
    vacuum = ~(rho > 1e-12 * float(np.mean(rho)))
    safe = np.where(vacuum, 1.0, rho)
    v = np.where(vacuum[..., None], 0.0, j / safe[..., None])
    return GridField(grid, rho, "number/volume"), GridField(grid, v, "length/time"), vacuum


def c2_hamiltonian(d, V):
    """Doublet form ``int [-m (conj(u) du - d conj(u) u)^2 / (8 conj(u) u) + V]``.

    Evaluated with complex arithmetic exactly as written (the squared bracket
    is purely imaginary squared, hence negative).
    """
    grid, u = d.grid, d.u
    rho = d.density()
    bracket_sq = 0.0
    for a in range(grid.dim):
        du = diff(grid, u, a)
        b = np.sum(np.conj(u) * du - np.conj(du) * u, axis=-1)
        bracket_sq = bracket_sq + b * b
    dens = -d.mass * bracket_sq / (8.0 * _regularized(rho)) + V.V(rho)
    return float(np.real(grid_integral(grid, dens)))


def euler_hamiltonian(rho, v, V, m=1.0):
    """``int [m rho v^2 / 2 + V(rho)]`` from Euler fields."""
    dens = 0.5 * m * rho.values * np.sum(v.values ** 2, axis=-1) + V.V(rho.values)
    return float(grid_integral(rho.grid, dens))


def _regularized(rho):
    eps = VACUUM_EPS * float(np.mean(np.sqrt(rho)))
    return rho + eps * eps


def dH_dubar(d, V):
    """Exact gradient of the discrete Hamiltonian with respect to ``conj(u)``.

    With ``w_a = m j_a / rho`` and central differences ``D_a``
    (anti-self-adjoint on periodic grids):
    ``(1/2i) sum_a [w_a D_a u + D_a(w_a u)] + (V'(rho) - m |j|^2/(2 rho^2)) u``.
    """
    grid, u, m = d.grid, d.u, d.mass
    rho = d.density()
    rho_r = _regularized(rho)
    j = _current(grid, u)
    w = m * j / rho_r[..., None]
    kin = np.zeros_like(u)
    for a in range(grid.dim):
        wa = w[..., a, None]
        kin += wa * diff(grid, u, a) + diff(grid, wa * u, a)
    kin /= 2j
    pot = V.dV(rho) - m * np.sum(j * j, axis=-1) / (2.0 * rho_r ** 2)
    return kin + pot[..., None] * u


def c2_rhs(d, V):
    return -1j / d.mass * dH_dubar(d, V)


def c2_step(d, V, dt):
    """One classical RK4 step of ``du/dt = -(i/m) dH/d(conj u)``."""
    def f(u):
        return c2_rhs(ClebschDoublet(d.grid, u, d.mass), V)

    u = d.u
    k1 = f(u)
    k2 = f(u + 0.5 * dt * k1)
    k3 = f(u + 0.5 * dt * k2)
    k4 = f(u + dt * k3)
    return ClebschDoublet(d.grid, u + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4), d.mass)


def c2_integrate(d, V, dt, steps, observer=None, cadence=1):
    """Advance ``steps`` RK4 steps; ``observer(d, step)`` is called on cadence."""
    if observer:
        observer(d, 0)
    for n in range(1, steps + 1):
        d = c2_step(d, V, dt)
        if observer and n % cadence == 0:
            observer(d, n)
    return d


def u2_charges(d):
    """``t0 = int rho/2`` and ``t^a = int conj(u) sigma^a/2 u``."""
    grid, u = d.grid, d.u
    t0 = 0.5 * float(grid_integral(grid, d.density()))
    ta = [float(np.real(grid_integral(grid, np.einsum("...i,ij,...j->...", np.conj(u),
                                                       0.5 * s, u))))
          for s in PAULI]
    return np.array([t0] + ta)


def homogeneous_phase(u0, V, t, m=1.0):
    """Exact evolution of a uniform doublet: ``u0 exp(-i V'(rho0) t / m)``."""
    u0 = np.asarray(u0, dtype=complex)
    rho0 = float(np.sum(np.abs(u0) ** 2))
    return u0 * np.exp(-1j * float(V.dV(np.array(rho0))) * t / m)


# -- Clebsch angles -------------------------------------------------------

def extract_angles(d, degenerate_tol=1e-12):
    rho = d.density()
    if np.any(rho <= 0):
        raise VacuumError("angles are undefined where rho = 0")
    u1, u2 = d.u[..., 0], d.u[..., 1]
    a1, a2 = np.angle(u1), np.angle(u2)
    alpha = 2.0 * np.arctan2(np.abs(u2), np.abs(u1))
    small = degenerate_tol * np.sqrt(rho)
    degenerate = (np.abs(u1) < small) | (np.abs(u2) < small)
    return ClebschAngles(rho, a1 + a2, a2 - a1, alpha, degenerate)


def doublet_from_angles(grid, rho, phi, psi, alpha, m=1.0):
    amp = np.sqrt(rho) * np.exp(0.5j * phi)
    u = np.stack([amp * np.exp(-0.5j * psi) * np.cos(0.5 * alpha),
                  amp * np.exp(0.5j * psi) * np.sin(0.5 * alpha)], axis=-1)
    return ClebschDoublet(grid, u, m)


def _wrapped_diff(grid, angle, axis):
    """Central difference of an angle field, each half-step wrapped to (-pi, pi]."""
    h = grid.spacing[axis]
    fwd = np.angle(np.exp(1j * (np.roll(angle, -1, axis) - angle)))
    bwd = np.angle(np.exp(1j * (angle - np.roll(angle, 1, axis))))
    return (fwd + bwd) / (2.0 * h)


def velocity_from_angles(angles, grid):
    """``v = (grad phi - cos(alpha) grad psi)/2`` with wrapped angle differences.

    Written as ``cos^2(a/2) grad(arg u1) + sin^2(a/2) grad(arg u2)`` so that
    it stays finite where ``psi`` is degenerate.  Periodic grids only.
    """
    if not grid.periodic:
        raise ValueError("angle differentiation is implemented for periodic grids")
    a1 = 0.5 * (angles.phi - angles.psi)
    a2 = 0.5 * (angles.phi + angles.psi)
    c2 = np.cos(0.5 * angles.alpha) ** 2
    s2 = 1.0 - c2
    return np.stack([c2 * _wrapped_diff(grid, a1, a) + s2 * _wrapped_diff(grid, a2, a)
                     for a in range(grid.dim)], axis=-1)


# -- Hopf invariant -------------------------------------------------------

def unit_four_vector(d):
    """``F = (Re u1, Im u1, Re u2, Im u2) / |u|``."""
    rho = d.density()
    if np.any(rho <= 0):
        raise VacuumError("the unit four-vector is undefined where rho = 0")
    u = d.u / np.sqrt(rho)[..., None]
    return np.stack([u[..., 0].real, u[..., 0].imag, u[..., 1].real, u[..., 1].imag], axis=-1)


def hopf_invariant(d):
    """Degree of ``F: R^3 -> S^3``, ``(1/2 pi^2) int det[F, d1 F, d2 F, d3 F]``.

    The totally antisymmetric contraction ``eps_abcd eps_ijk F_a d_i F_b d_j F_c
    d_k F_d`` equals ``6 det[...]``, so this is that integral divided by
    ``12 pi^2``; the unit inverse stereographic map gives 1.
    """
    grid = d.grid
    if grid.dim != 3:
        raise ValueError("the Hopf invariant needs a 3D grid")
    F = unit_four_vector(d)
    M = np.stack([F] + [diff(grid, F, a) for a in range(3)], axis=-1)
    return float(grid_integral(grid, np.linalg.det(M))) / (2.0 * np.pi ** 2)


def hopf_configuration(grid, degree=1, scale=None, radius=None, center=None):
    """Doublet of Hopf degree ``degree`` (1 or 2) on a 3D box.

    The box interior ``r < R`` is stretched onto all of ``R^3`` by
    ``s = scale * r / (1 - (r/R)^2)`` and mapped to ``S^3`` by inverse
    stereographic projection; ``r >= R`` sits at the pole.  Degree 2 squares
    the unit quaternion.
    """
    if degree not in (1, 2):
        raise ValueError("degree must be 1 or 2")
    x = grid.nodes()
    c = grid.lower + 0.5 * grid.lengths if center is None else np.asarray(center, float)
    R = 0.5 * float(np.min(grid.lengths)) if radius is None else radius
    lam = 0.5 * R if scale is None else scale
    y = x - c
    r = np.linalg.norm(y, axis=-1)
    inside = r < R
    q = np.where(inside, 1.0 - (r / R) ** 2, 1.0)
    stretch = np.where(inside, 1.0 / (lam * q), 0.0)
    z = y * stretch[..., None]
    s2 = np.sum(z * z, axis=-1)
    F = np.concatenate([2.0 * z, (s2 - 1.0)[..., None]], axis=-1) / (s2 + 1.0)[..., None]
    F = np.where(inside[..., None], F, np.array([0.0, 0.0, 0.0, 1.0]))
    # orientation chosen so the unit map has degree +1
    F = F[..., [3, 0, 1, 2]]
    F[..., 1] = -F[..., 1]
    if degree == 2:
        F = _quaternion_square(F)
    u = np.stack([F[..., 0] + 1j * F[..., 1], F[..., 2] + 1j * F[..., 3]], axis=-1)
    return ClebschDoublet(grid, u)


def _quaternion_square(q):
    w, a, b, c = (q[..., k] for k in range(4))
    return np.stack([w * w - a * a - b * b - c * c, 2 * w * a, 2 * w * b, 2 * w * c], axis=-1)
