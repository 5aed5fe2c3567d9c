"""Lagrangian equations of motion: free, barotropic and externally forced flows.

The state is a :class:`~lagmedia.lattice.FlowMap`; forces are densities per
unit label volume so that ``dp/dt = F`` with ``p = m rho0 dx/dt``.

The internal energy is configured only through a density potential ``V(rho)``.
Its label-space form ``f(det A) = V(rho0/det A) det A / rho0`` is never stored:
the force needs only ``rho0 f'(det A) = V - rho V' = -m p``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import ConstructionError, FoldingError
from .lattice import deformation_field, jacobian_density, label_diff


# -- density potentials V(rho) --------------------------------------------

class DensityPotential:
    """Base class; subclasses provide ``V`` and its derivative ``dV``."""

    def V(self, rho):
        raise NotImplementedError

    def dV(self, rho):
        raise NotImplementedError

    def d2V(self, rho):
        raise NotImplementedError

    def pressure(self, rho, m=1.0):
        return (rho * self.dV(rho) - self.V(rho)) / m

    def dpressure(self, rho, m=1.0):
        """``dp/drho = rho V''/m``."""
        return rho * self.d2V(rho) / m


@dataclass(frozen=True)
class SoundPotential(DensityPotential):
    """``V = kappa/(2 rho_ref) (rho - rho_as)^2``; ``p(rho_as) = 0``."""

    kappa: float
    rho_ref: float = 1.0
    rho_as: float = 1.0

    def V(self, rho):
        return 0.5 * self.kappa / self.rho_ref * (rho - self.rho_as) ** 2

    def dV(self, rho):
        return self.kappa / self.rho_ref * (rho - self.rho_as)

    def d2V(self, rho):
        return np.full_like(np.asarray(rho, dtype=float), self.kappa / self.rho_ref)


@dataclass(frozen=True)
class PolytropicPotential(DensityPotential):
    """``V = K rho^Gamma / (Gamma - 1)`` giving ``p = K rho^Gamma / m``."""

    K: float
    gamma: float = 5.0 / 3.0

    def __post_init__(self):
        if self.gamma == 1.0:
            raise ConstructionError("polytropic index must differ from 1")

    def V(self, rho):
        return self.K * rho ** self.gamma / (self.gamma - 1.0)

    def dV(self, rho):
        return self.K * self.gamma * rho ** (self.gamma - 1.0) / (self.gamma - 1.0)

    def d2V(self, rho):
        return self.K * self.gamma * rho ** (self.gamma - 2.0)


@dataclass(frozen=True)
class QuadraticPotential(DensityPotential):
    """``V = a rho^2``, ``p = a rho^2 / m``."""

    a: float

    def V(self, rho):
        return self.a * rho ** 2

    def dV(self, rho):
        return 2.0 * self.a * rho

    def d2V(self, rho):
        return np.full_like(np.asarray(rho, dtype=float), 2.0 * self.a)


@dataclass(frozen=True)
class LinearPotential(DensityPotential):
    """``V = c rho``: a constant energy per particle, no pressure."""

    c: float

    def V(self, rho):
        return self.c * rho

    def dV(self, rho):
        return np.full_like(np.asarray(rho, dtype=float), self.c)

    def d2V(self, rho):
        return np.zeros_like(np.asarray(rho, dtype=float))


@dataclass(frozen=True)
class ZeroPotential(DensityPotential):
    def V(self, rho):
        return np.zeros_like(np.asarray(rho, dtype=float))

    dV = d2V = V


def pressure_of_density(rho, V, m=1.0):
    """Barotropic pressure ``p = (rho^2/m) d(V/rho)/drho``.

    Accepts an array or a :class:`~lagmedia.grid.GridField` (returned as a
    field on the same grid).
    """
    from .grid import GridField

    if isinstance(rho, GridField):
        return GridField(rho.grid, pressure_of_density(rho.values, V, m), "pressure")
    r = np.asarray(rho, dtype=float)
    if np.any(r <= 0):
        raise ValueError("pressure needs strictly positive density")
    return V.pressure(r, m)


# -- external potentials U(x) ---------------------------------------------

@dataclass(frozen=True)
class HarmonicPotential:
    """``U = omega^2 |x - center|^2 / 2``."""

    omega: float
    center: tuple = ()

    def _shift(self, x):
        c = np.asarray(self.center, dtype=float) if len(self.center) else 0.0
        return x - c

    def U(self, x):
        return 0.5 * self.omega ** 2 * np.sum(self._shift(x) ** 2, axis=-1)

    def grad(self, x):
        return self.omega ** 2 * self._shift(x)


@dataclass(frozen=True)
class UniformFieldPotential:
    """``U = g . x``: constant force ``-g`` per particle."""

    g: tuple

    def U(self, x):
        return x @ np.asarray(self.g, dtype=float)

    def grad(self, x):
        return np.broadcast_to(np.asarray(self.g, dtype=float), x.shape)


@dataclass(frozen=True)
class ConstantPotential:
    c: float = 0.0

    def U(self, x):
        return np.full(x.shape[:-1], float(self.c))

    def grad(self, x):
        return np.zeros_like(x)


# -- force models ---------------------------------------------------------

class ForceModel:
    """Interface: ``force(fmap, A)`` density per label volume, ``energy(fmap, A)``."""

    needs_deformation = False

    def force(self, fmap, A=None):
        raise NotImplementedError

    def energy(self, fmap, A=None):
        raise NotImplementedError


class Free(ForceModel):
    def force(self, fmap, A=None):
        return np.zeros_like(fmap.positions)

    def energy(self, fmap, A=None):
        return 0.0


def _cofactor_inv(A):
    """Determinant and inverse of stacked 1x1, 2x2 or 3x3 matrices in closed form.

    Batched LAPACK calls dominate the force cost on small matrices; the
    adjugate formula is several times faster and exact to roundoff.
    """
    d = A.shape[-1]
    if d == 1:
        det = A[..., 0, 0]
        return det, 1.0 / det[..., None, None]
    if d == 2:
        a, b, c, e = A[..., 0, 0], A[..., 0, 1], A[..., 1, 0], A[..., 1, 1]
        det = a * e - b * c
        adj = np.stack([np.stack([e, -b], -1), np.stack([-c, a], -1)], -2)
    else:
        c0 = np.cross(A[..., 1, :], A[..., 2, :])
        c1 = np.cross(A[..., 2, :], A[..., 0, :])
        c2 = np.cross(A[..., 0, :], A[..., 1, :])
        det = np.einsum("...i,...i->...", A[..., 0, :], c0)
        adj = np.stack([c0, c1, c2], -1)
    safe = np.where(det > 0, det, 1.0)
    return det, adj / safe[..., None, None]


def _inv_and_det(A):
    det, inv = _cofactor_inv(A)
    bad = np.argwhere(~(det > 0))
    if len(bad):
        label = tuple(int(i) for i in bad[0])
        raise FoldingError(f"det A = {det[label]:.3e} <= 0 at label {label}", label=label)
    return inv, det


def _divergence_rows(lattice, P):
    """``F_j = sum_k D_k P[..., j, k]`` with label-lattice differences."""
    return sum(label_diff(lattice, P[..., :, k], k) for k in range(lattice.dim))


@dataclass
class Barotropic(ForceModel):
    """Internal energy ``sum V(rho) det A dV_xi`` with optional ``lambda |grad rho|^2``.

    On periodic lattices the force is the exact gradient of the discrete
    energy (central differences are anti-self-adjoint), which is what keeps
    the leapfrog energy error bounded.  The dispersive term is included in
    the same way; its accuracy as a continuum force is only second order.
    """

    potential: DensityPotential
    dispersion: float = 0.0
    needs_deformation = True

    def _stress(self, fmap, A):
        Ainv, det = _inv_and_det(A)
        rho = fmap.rho0 / det
        V = self.potential
        # rho0 f'(D) D (A^-1)^T : stress whose label divergence is the force
        rho0_fp = V.V(rho) - rho * V.dV(rho)
        P = (rho0_fp * det)[..., None, None] * np.swapaxes(Ainv, -1, -2)
        if self.dispersion:
            P = P + self._dispersion_stress(fmap, Ainv, det, rho)
        return P

    def _dispersion_stress(self, fmap, Ainv, det, rho):
        lat = fmap.lattice
        lam = self.dispersion
        AinvT = np.swapaxes(Ainv, -1, -2)
        g = np.stack([label_diff(lat, rho, k) for k in range(lat.dim)], axis=-1)
        G = np.einsum("...ab,...b->...a", AinvT, g)
        AiG = np.einsum("...ab,...b->...a", Ainv, G)
        G2 = np.sum(G * G, axis=-1)
        P = lam * (det * G2)[..., None, None] * AinvT
        P = P - 2.0 * lam * det[..., None, None] * G[..., :, None] * AiG[..., None, :]
        h = 2.0 * lam * det[..., None] * AiG
        s = -sum(label_diff(lat, h[..., k], k) for k in range(lat.dim))
        return P - (s * rho)[..., None, None] * AinvT

    def force(self, fmap, A=None):
        if A is None:
            A = deformation_field(fmap)
        F = _divergence_rows(fmap.lattice, self._stress(fmap, A))
        return F

    def energy(self, fmap, A=None):
        if A is None:
            A = deformation_field(fmap)
        rho = jacobian_density(fmap, A)
        det = fmap.rho0 / rho
        e = self.potential.V(rho) * det
        if self.dispersion:
            lat = fmap.lattice
            g = np.stack([label_diff(lat, rho, k) for k in range(lat.dim)], axis=-1)
            G = np.einsum("...ba,...b->...a", np.linalg.inv(A), g)
            e = e + self.dispersion * det * np.sum(G * G, axis=-1)
        return float(np.sum(e) * fmap.lattice.cell_volume)


@dataclass
class External(ForceModel):
    """Per-particle potential energy ``U(x)``: ``F = -rho0 grad U``."""

    potential: object

    def force(self, fmap, A=None):
        return -fmap.rho0[..., None] * self.potential.grad(fmap.positions)

    def energy(self, fmap, A=None):
        return float(np.sum(fmap.rho0 * self.potential.U(fmap.positions))
                     * fmap.lattice.cell_volume)


@dataclass
class Composite(ForceModel):
    terms: list = field(default_factory=list)

    @property
    def needs_deformation(self):
        return any(t.needs_deformation for t in self.terms)

    def force(self, fmap, A=None):
        if A is None and self.needs_deformation:
            A = deformation_field(fmap)
        F = np.zeros_like(fmap.positions)
        for t in self.terms:
            F = F + t.force(fmap, A)
        return F

    def energy(self, fmap, A=None):
        if A is None and self.needs_deformation:
            A = deformation_field(fmap)
        return float(sum(t.energy(fmap, A) for t in self.terms))


def barotropic_force(fmap, V, dispersion=0.0):
    return Barotropic(V, dispersion).force(fmap)


def external_force(fmap, U):
    return External(U).force(fmap)


def kinetic_energy(fmap):
    p2 = np.sum(fmap.momenta ** 2, axis=-1)
    return float(np.sum(p2 / (2.0 * fmap.mass * fmap.rho0)) * fmap.lattice.cell_volume)


def total_energy(fmap, model):
    """``H = sum p^2/(2 m rho0) dV_xi`` plus the potential terms of ``model``."""
    return kinetic_energy(fmap) + model.energy(fmap)


# -- time stepping --------------------------------------------------------

def _wall_mask(lattice):
    """Boolean ``(*shape, dim)``: normal components of wall labels."""
    mask = np.zeros(lattice.shape + (lattice.dim,), dtype=bool)
    if lattice.periodic:
        return mask
    for a in range(lattice.dim):
        sl = [slice(None)] * lattice.dim
        for end in (0, -1):
            sl[a] = end
            mask[tuple(sl) + (a,)] = True
    return mask


def _constrain(fmap, F):
    if not fmap.lattice.periodic:
        F = np.where(_wall_mask(fmap.lattice), 0.0, F)
    return F


def step_free(fmap, dt):
    """Exact free streaming: ``x += p/(m rho0) dt``."""
    out = fmap.copy()
    out.positions = fmap.positions + fmap.velocities() * dt
    out.time = fmap.time + dt
    return out


@dataclass(frozen=True)
class IntegratorSpec:
    dt: float
    steps: int
    scheme: str = "leapfrog"
    record_every: int | None = None

    def __post_init__(self):
        if not self.dt > 0:
            raise ConstructionError(f"dt must be positive, got {self.dt}")
        if self.steps < 0:
            raise ConstructionError("steps must be non-negative")
        if self.scheme not in ("leapfrog", "rk4"):
            raise ConstructionError(f"unknown scheme {self.scheme!r}")


@dataclass
class Observer:
    """Read-only callback ``fn(fmap, step)`` called every ``cadence`` steps."""

    fn: Callable
    cadence: int = 1


class Leapfrog:
    """Kick-drift-kick with the end-of-step force reused for the next kick."""

    def __init__(self, model):
        self.model = model
        self._F = None
        self._for = None

    def force(self, fmap):
        return _constrain(fmap, self.model.force(fmap))

    def step(self, fmap, dt):
        F = self._F if self._for is fmap else self.force(fmap)
        p_half = fmap.momenta + 0.5 * dt * F
        out = fmap.copy()
        out.momenta = p_half
        out.positions = fmap.positions + p_half / (fmap.mass * fmap.rho0[..., None]) * dt
        F_new = self.force(out)
        out.momenta = p_half + 0.5 * dt * F_new
        out.time = fmap.time + dt
        self._F, self._for = F_new, out
        return out


class RK4:
    def __init__(self, model):
        self.model = model

    def step(self, fmap, dt):
        inv_m = 1.0 / (fmap.mass * fmap.rho0[..., None])

        def rhs(x, p):
            trial = fmap.copy()
            trial.positions, trial.momenta = x, p
            return p * inv_m, _constrain(trial, self.model.force(trial))

        x0, p0 = fmap.positions, fmap.momenta
        k1x, k1p = rhs(x0, p0)
        k2x, k2p = rhs(x0 + 0.5 * dt * k1x, p0 + 0.5 * dt * k1p)
        k3x, k3p = rhs(x0 + 0.5 * dt * k2x, p0 + 0.5 * dt * k2p)
        k4x, k4p = rhs(x0 + dt * k3x, p0 + dt * k3p)
        out = fmap.copy()
        out.positions = x0 + dt / 6.0 * (k1x + 2 * k2x + 2 * k3x + k4x)
        out.momenta = p0 + dt / 6.0 * (k1p + 2 * k2p + 2 * k3p + k4p)
        out.time = fmap.time + dt
        return out


def make_stepper(model, scheme="leapfrog"):
    return Leapfrog(model) if scheme == "leapfrog" else RK4(model)


def integrate(fmap, model, spec, observers=()):
    """Advance ``fmap`` for ``spec.steps`` steps.

    Returns the list of recorded snapshots: the initial state, every
    ``record_every``-th state and the final state.  A
    :class:`~lagmedia.errors.FoldingError` aborts the run with
    ``last_valid`` set to the last good snapshot.
    """
    stepper = make_stepper(model, spec.scheme)
    traj = [fmap]
    for obs in observers:
        obs.fn(fmap, 0)
    state = fmap
    for n in range(1, spec.steps + 1):
        try:
            state_new = stepper.step(state, spec.dt)
        except FoldingError as err:
            err.last_valid = state
            raise
        state = state_new
        if spec.record_every and n % spec.record_every == 0 and n != spec.steps:
            traj.append(state)
        for obs in observers:
            if n % obs.cadence == 0:
                obs.fn(state, n)
    if spec.steps:
        traj.append(state)
    return traj


def harmonic_period(omega, m=1.0):
    """Orbit period under ``U = omega^2 |x|^2/2``: ``m x'' = -omega^2 x``."""
    return 2.0 * np.pi * np.sqrt(m) / omega


def sound_speed(V, rho, m=1.0):
    """Linear sound speed ``sqrt(dp/drho)`` of the barotropic closure."""
    return np.sqrt(V.dpressure(np.asarray(rho, dtype=float), m))
