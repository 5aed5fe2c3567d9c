"""Two-species electrostatic plasma on Lagrangian lattices.

Heaviside-Lorentz units: the charge density is ``rho_q = e (rho_ion - rho_el)``,
the potential solves ``-lap Phi = rho_q`` and the Coulomb energy is
``(1/2) int rho_q Phi = (e^2/2) int int (rho_el - rho_ion) G (rho_el - rho_ion)``
with ``G = 1/(4 pi |x - y|)``.  Electrons carry charge ``-e`` and mass
``electrons.mass``, ions ``+e`` and ``ions.mass``.  The cold plasma frequency
in this convention is ``omega_p^2 = e^2 n0 / m``.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .deposition import gather, kernel_stencil_gradient, scatter
from .dynamics import Barotropic, kinetic_energy
from .errors import ConstructionError, FoldingError
from .gravity import _pair_sums
from .grid import Grid, GridField, grid_integral, spectral_poisson, wavenumbers
from .invariants import circulation

NEUTRALITY_TOL = 1e-10


@dataclass(frozen=True)
class FieldSolver:
    """``spectral`` on a periodic grid or softened ``direct`` pair sums (3D kernel).

    The spectral forces come in two flavours.  ``energy`` differentiates the
    deposited Coulomb energy with respect to the particle positions, so the
    discrete Hamiltonian is exactly the one the forces derive from.
    ``momentum`` gathers the spectral field gradient with the deposition
    kernel; the total force then vanishes identically.
    """

    kind: str = "spectral"
    grid: Grid | None = None
    kernel: str = "tsc"
    softening: float = 0.0
    scheme: str = "energy"

    def __post_init__(self):
        if self.kind not in ("spectral", "direct"):
            raise ConstructionError(f"unknown field solver {self.kind!r}")
        if self.kind == "spectral" and (self.grid is None or not self.grid.periodic):
            raise ConstructionError("the spectral field solver needs a periodic grid")
        if self.softening < 0:
            raise ConstructionError("softening must be non-negative")
        if self.scheme not in ("energy", "momentum"):
            raise ConstructionError(f"unknown force scheme {self.scheme!r}")


@dataclass(eq=False)
class PlasmaState:
    """Electron and ion flow maps sharing one spatial domain.

    ``mobile_ions=False`` freezes the ions into a neutralizing background.
    Global neutrality is checked at construction unless ``neutral=False``.
    """

    electrons: object
    ions: object
    e: float = 1.0
    solver: FieldSolver = None
    mobile_ions: bool = True
    neutral: bool = True

    def __post_init__(self):
        el, ion = self.electrons, self.ions
        if el.dim != ion.dim or el.lattice.bounds != ion.lattice.bounds:
            raise ConstructionError("electrons and ions must share the spatial domain")
        if self.solver is None:
            self.solver = FieldSolver("spectral", Grid.matching(el.lattice))
        if self.solver.kind == "spectral" and self.solver.grid.dim != el.dim:
            raise ConstructionError("field grid dimension differs from the species")
        if self.neutral:
            n_el = float(np.sum(el.weights()))
            n_ion = float(np.sum(ion.weights()))
            if abs(n_el - n_ion) > NEUTRALITY_TOL * max(n_el, n_ion):
                raise ConstructionError(f"plasma is not neutral: {n_el} electrons, {n_ion} ions")

    def species(self):
        """``(flow map, charge)`` pairs."""
        return ((self.electrons, -self.e), (self.ions, self.e))

    def copy(self):
        return PlasmaState(self.electrons.copy(), self.ions.copy(), self.e, self.solver,
                           self.mobile_ions, False)

    @property
    def time(self):
        return self.electrons.time

    def total_momentum(self):
        return self.electrons.total_momentum() + self.ions.total_momentum()


def _flat(fmap):
    return fmap.positions.reshape(-1, fmap.dim)


def charge_density(state):
    """``rho_q = e (rho_ion - rho_el)`` deposited on the solver grid."""
    grid = state.solver.grid
    q = np.zeros(grid.shape)
    for fmap, charge in state.species():
        q = q + charge * scatter(grid, _flat(fmap), fmap.weights().ravel(), state.solver.kernel)
    return GridField(grid, q / grid.cell_volume, "charge/volume")


def electrostatic_potential(state):
    """``Phi`` with ``-lap Phi = rho_q`` (periodic, zero mean)."""
    rq = charge_density(state)
    return GridField(rq.grid, spectral_poisson(rq.grid, rq.values), "charge/length")


def _direct_charges(state):
    xs, qs = [], []
    for fmap, charge in state.species():
        xs.append(_flat(fmap))
        qs.append(charge * fmap.weights().ravel())
    return np.concatenate(xs), np.concatenate(qs)


def coulomb_energy(state):
    """``H_Col = (1/2) int rho_q Phi``.

    The direct solver sums ``q_i q_j G(x_i - x_j)`` over distinct pairs with
    ``G = 1/(4 pi sqrt(r^2 + eps^2))``.
    """
    if state.solver.kind == "direct":
        x, q = _direct_charges(state)
        eps = state.solver.softening
        phi, _ = _pair_sums(x, x, q, eps, want="phi")
        if eps * eps > 0:
            phi = phi + q / eps
        return float(-np.sum(q * phi) / (8.0 * np.pi))
    rq = charge_density(state)
    phi = spectral_poisson(rq.grid, rq.values)
    return float(0.5 * grid_integral(rq.grid, rq.values * phi))


def pair_coulomb_energy(q1, q2, d, softening=0.0):
    """Interaction energy of two point charges, ``q1 q2 / (4 pi sqrt(d^2 + eps^2))``."""
    return q1 * q2 / (4.0 * np.pi * np.sqrt(d * d + softening * softening))


def electric_forces(state):
    """Force densities per label volume, ``-q rho0 grad Phi(x)``, for each species."""
    forces = []
    if state.solver.kind == "direct":
        x, q = _direct_charges(state)
        _, g = _pair_sums(x, x, q, state.solver.softening, want="grad")
        # force on charge i is q_i/(4 pi) sum_j q_j (x_i - x_j)/r^3
        start = 0
        for fmap, charge in state.species():
            n = fmap.lattice.size
            gi = g[start:start + n].reshape(fmap.positions.shape)
            forces.append(charge * fmap.rho0[..., None] * gi / (4.0 * np.pi))
            start += n
        return forces
    rq = charge_density(state)
    grid = rq.grid
    if state.solver.scheme == "energy":
        phi = spectral_poisson(grid, rq.values).ravel()
        for fmap, charge in state.species():
            idx, dw = kernel_stencil_gradient(grid, _flat(fmap), state.solver.kernel)
            g = np.einsum("nk,nka->na", phi[idx], dw)
            forces.append(-charge * fmap.rho0[..., None] * g.reshape(fmap.positions.shape))
        return forces
    _, gphi = spectral_poisson(grid, rq.values, with_gradient=True)
    for fmap, charge in state.species():
        g = gather(grid, gphi, _flat(fmap), state.solver.kernel)
        forces.append(-charge * fmap.rho0[..., None] * g.reshape(fmap.positions.shape))
    return forces


class PlasmaEnergy(NamedTuple):
    """Terms of the plasma Hamiltonian; the transverse-field terms are structurally zero."""

    kinetic_el: float
    kinetic_ion: float
    internal_el: float
    internal_ion: float
    coulomb: float
    transverse_field: float = 0.0
    transverse_coupling: float = 0.0

    @property
    def total(self):
        return float(sum(self))


def plasma_energy(state, V_el=None, V_ion=None):
    """All terms of the electrostatic Hamiltonian."""
    int_el = Barotropic(V_el).energy(state.electrons) if V_el is not None else 0.0
    int_ion = Barotropic(V_ion).energy(state.ions) if V_ion is not None else 0.0
    return PlasmaEnergy(kinetic_energy(state.electrons), kinetic_energy(state.ions),
                        int_el, int_ion, coulomb_energy(state))


def plasma_hamiltonian(state, V_el=None, V_ion=None):
    """Kinetic plus internal energies of both species plus the Coulomb energy."""
    return plasma_energy(state, V_el, V_ion).total


def _species_forces(state, V_el, V_ion):
    F_el, F_ion = electric_forces(state)
    if V_el is not None:
        F_el = F_el + Barotropic(V_el).force(state.electrons)
    if V_ion is not None and state.mobile_ions:
        F_ion = F_ion + Barotropic(V_ion).force(state.ions)
    return F_el, F_ion


def _drift(fmap, dt):
    out = fmap.copy()
    out.positions = fmap.positions + fmap.velocities() * dt
    out.time = fmap.time + dt
    return out


def _kick(fmap, F, dt):
    fmap.momenta = fmap.momenta + dt * F


def electrostatic_step(state, dt, V_el=None, V_ion=None, forces=None):
    """Kick-drift-kick of both species in lock-step.

    Returns ``(new state, forces at the new time)`` so callers can reuse the
    end-of-step forces.  Immobile ions are neither kicked nor drifted.
    """
    F_el, F_ion = forces if forces is not None else _species_forces(state, V_el, V_ion)
    el = state.electrons.copy()
    ion = state.ions.copy()
    _kick(el, F_el, 0.5 * dt)
    el = _drift(el, dt)
    if state.mobile_ions:
        _kick(ion, F_ion, 0.5 * dt)
        ion = _drift(ion, dt)
    else:
        ion.time = ion.time + dt
    out = PlasmaState(el, ion, state.e, state.solver, state.mobile_ions, False)
    F_el, F_ion = _species_forces(out, V_el, V_ion)
    _kick(out.electrons, F_el, 0.5 * dt)
    if state.mobile_ions:
        _kick(out.ions, F_ion, 0.5 * dt)
    return out, (F_el, F_ion)


def plasma_integrate(state, dt, steps, V_el=None, V_ion=None, observer=None, cadence=1):
    """Advance ``steps`` electrostatic steps; ``observer(state, n)`` every ``cadence``.

    A :class:`FoldingError` raised by an internal-energy force carries the
    last good state in ``last_valid``.
    """
    forces = None
    if observer is not None:
        observer(state, 0)
    for n in range(1, steps + 1):
        try:
            new, forces = electrostatic_step(state, dt, V_el, V_ion, forces)
        except FoldingError as err:
            err.last_valid = state
            raise
        state = new
        if observer is not None and n % cadence == 0:
            observer(state, n)
    return state


def plasma_frequency(n0, e=1.0, m=1.0):
    """Cold plasma frequency ``sqrt(e^2 n0 / m)``."""
    return float(np.sqrt(e * e * n0 / m))


def oscillation_frequency(times, signal):
    """Angular frequency from the mean spacing of interpolated zero crossings."""
    t = np.asarray(times, dtype=float)
    s = np.asarray(signal, dtype=float)
    s = s - 0.5 * (s.max() + s.min())
    idx = np.nonzero(np.signbit(s[:-1]) != np.signbit(s[1:]))[0]
    if len(idx) < 3:
        raise ValueError("signal has fewer than three zero crossings")
    tc = t[idx] - s[idx] * (t[idx + 1] - t[idx]) / (s[idx + 1] - s[idx])
    half = np.mean(np.diff(tc))
    return float(np.pi / half)


def total_circulation(state, loop_el, loop_ion, coherence_tol=None):
    """``m Gamma_el + M Gamma_ion`` over co-located electron and ion material loops.

    Each loop is advected with its own species.  When ``coherence_tol`` is
    given and the two loops drift further apart than that (maximum marker
    distance), a warning is issued: the common-contour premise no longer holds.
    """
    el, ion = state.electrons, state.ions
    if coherence_tol is not None:
        gap = np.max(np.linalg.norm(loop_el.positions(el) - loop_ion.positions(ion), axis=-1))
        if gap > coherence_tol:
            warnings.warn(f"electron and ion loops separated by {gap:.3g} > {coherence_tol:.3g}",
                          RuntimeWarning, stacklevel=2)
    return float(el.mass * circulation(el, loop_el) + ion.mass * circulation(ion, loop_ion))


def debye_screening(grid, charge, temperature, n0, e=1.0, width=None, tol=1e-12, max_iter=200):
    """Potential of a smeared test charge with and without warm-electron response.

    The electrons settle into the hydrostatic balance of an isothermal
    fluid, ``n = n0 exp(e Phi / T)``, over a fixed neutralizing ion
    background; the nonlinear Poisson equation is solved by a preconditioned
    fixed-point iteration.  Returns ``(r, screened/vacuum ratio)`` along the
    first grid axis from the charge (placed at the grid centre), keeping
    radii up to a quarter of the box.
    """
    if not grid.periodic:
        raise ConstructionError("screening is computed on a periodic grid")
    X = grid.nodes()
    c = grid.lower + 0.5 * grid.lengths
    r2 = np.sum((X - c) ** 2, axis=-1)
    width = 1.5 * float(np.max(grid.spacing)) if width is None else width
    blob = np.exp(-r2 / (2.0 * width ** 2))
    source = charge * blob / grid_integral(grid, blob)
    vacuum = spectral_poisson(grid, source)
    kd2 = e * e * n0 / temperature
    K = wavenumbers(grid)
    k2 = sum(k * k for k in K)
    sk = np.fft.fftn(source)
    phi = np.real(np.fft.ifftn(sk / (k2 + kd2)))
    for _ in range(max_iter):
        rhs = source + e * n0 * (1.0 - np.exp(e * phi / temperature)) + kd2 * phi
        new = np.real(np.fft.ifftn(np.fft.fftn(rhs) / (k2 + kd2)))
        done = np.max(np.abs(new - phi)) <= tol * np.max(np.abs(new))
        phi = new
        if done:
            break
    # the constant mode only fixes the gauge; compare zero-mean potentials
    phi = phi - np.mean(phi)
    centre = tuple(int(round((ci - lo) / h)) for ci, lo, h in
                   zip(c, grid.lower, grid.spacing))
    line = (slice(centre[0], None),) + centre[1:]
    r = grid.spacing[0] * np.arange(grid.shape[0] - centre[0])
    vac = vacuum[line]
    # beyond a quarter box the periodic images dominate the vacuum potential
    keep = (r <= 0.25 * grid.lengths[0]) & (vac > 0)
    return r[keep], phi[line][keep] / vac[keep]


def uniform_ions(electrons, mass):
    """Ion flow map at rest on the electron lattice with the same ``rho0``."""
    ion = electrons.copy()
    ion.positions = electrons.lattice.nodes().astype(float)
    ion.momenta = np.zeros_like(electrons.momenta)
    ion.mass = float(mass)
    return ion

