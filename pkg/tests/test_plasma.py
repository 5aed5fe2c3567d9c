import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lagmedia.dynamics import SoundPotential
from lagmedia.errors import ConstructionError
from lagmedia.grid import CLAMPED, Grid
from lagmedia.invariants import MaterialLoop
from lagmedia.lattice import build_lattice
from lagmedia.plasma import (FieldSolver, PlasmaState, charge_density, coulomb_energy,
                             debye_screening, electric_forces, electrostatic_step,
                             oscillation_frequency, pair_coulomb_energy, plasma_energy,
                             plasma_frequency, plasma_integrate, total_circulation,
                             uniform_ions)

TP = 2 * np.pi


def langmuir(n=32, amp=0.01, scheme="energy", kernel="tsc"):
    el = build_lattice(1, [0, 1], n, x0_fn=lambda xi: xi + amp / TP * np.sin(TP * xi))
    solver = FieldSolver("spectral", Grid(1, [0, 1], n), kernel, 0.0, scheme)
    return PlasmaState(el, uniform_ions(el, 100.0), 1.0, solver, mobile_ions=False)


def test_validation():
    el = build_lattice(1, [0, 1], 8)
    with pytest.raises(ConstructionError):
        PlasmaState(el, build_lattice(1, [0, 2], 8))
    with pytest.raises(ConstructionError):
        PlasmaState(el, build_lattice(1, [0, 1], 8, rho0_fn=lambda xi: np.full(xi.shape[:-1], 2.0)))
    with pytest.raises(ConstructionError):
        FieldSolver("spectral", Grid(1, [0, 1], 8, CLAMPED))
    with pytest.raises(ConstructionError):
        FieldSolver("multigrid")


def test_neutral_uniform_plasma_is_force_free():
    el = build_lattice(2, [(0, 1), (0, 1)], 8)
    state = PlasmaState(el, uniform_ions(el, 10.0))
    np.testing.assert_allclose(charge_density(state).values, 0.0, atol=1e-13)
    for F in electric_forces(state):
        np.testing.assert_allclose(F, 0.0, atol=1e-12)
    assert coulomb_energy(state) == pytest.approx(0.0, abs=1e-20)


def test_direct_solver_matches_pair_sum():
    el = build_lattice(3, [(0, 1)] * 3, 2, "fixed-wall", x0_fn=lambda xi: xi + 0.1)
    ion = uniform_ions(el, 5.0)
    state = PlasmaState(el, ion, 2.0, FieldSolver("direct", softening=0.05))
    x = np.concatenate([el.positions.reshape(-1, 3), ion.positions.reshape(-1, 3)])
    q = np.concatenate([-2.0 * el.weights().ravel(), 2.0 * ion.weights().ravel()])
    total = sum(pair_coulomb_energy(q[i], q[j], np.linalg.norm(x[i] - x[j]), 0.05)
                for i in range(16) for j in range(i + 1, 16))
    assert coulomb_energy(state) == pytest.approx(total, rel=1e-12)
    F_el, F_ion = electric_forces(state)
    np.testing.assert_allclose(F_el.sum(axis=(0, 1, 2)) + F_ion.sum(axis=(0, 1, 2)), 0.0, atol=1e-12)


@pytest.mark.parametrize("kernel", ["cic", "tsc"])
def test_energy_scheme_force_is_energy_gradient(kernel):
    state = langmuir(16, amp=0.2, kernel=kernel)
    F_el, _ = electric_forces(state)
    dv = state.electrons.lattice.cell_volume
    for i in (1, 5, 11):
        h = 1e-6
        s = state.copy(); s.electrons.positions[i, 0] += h
        e_p = coulomb_energy(s)
        s.electrons.positions[i, 0] -= 2 * h
        e_m = coulomb_energy(s)
        assert F_el[i, 0] * dv == pytest.approx(-(e_p - e_m) / (2 * h), rel=1e-5, abs=1e-10)


def test_momentum_scheme_total_force_vanishes():
    el = build_lattice(2, [(0, 1), (0, 1)], 12, x0_fn=lambda xi: xi + 0.03 * np.sin(TP * xi[..., ::-1]))
    solver = FieldSolver("spectral", Grid(2, [(0, 1), (0, 1)], 12), "tsc", 0.0, "momentum")
    state = PlasmaState(el, uniform_ions(el, 4.0), 1.0, solver)
    F_el, F_ion = electric_forces(state)
    np.testing.assert_allclose(F_el.sum(axis=(0, 1)) + F_ion.sum(axis=(0, 1)), 0.0, atol=1e-12)


def test_langmuir_oscillation():
    state = langmuir(32)
    wp = plasma_frequency(1.0)
    dt = TP / wp / 100
    times, sig = [], []

    def obs(s, k):
        times.append(s.time)
        sig.append(s.electrons.displacement()[8, 0])

    out = plasma_integrate(state, dt, 250, observer=obs)
    assert oscillation_frequency(np.array(times), np.array(sig)) == pytest.approx(wp, rel=0.02)
    # frozen ions never move
    np.testing.assert_array_equal(out.ions.positions, state.ions.positions)
    np.testing.assert_array_equal(out.ions.momenta, 0.0)


def test_energy_conserved_and_terms():
    state = langmuir(32)
    e0 = plasma_energy(state)
    assert e0.transverse_field == 0.0 and e0.transverse_coupling == 0.0
    s, forces = state, None
    for _ in range(200):
        s, forces = electrostatic_step(s, 0.005, forces=forces)
    assert plasma_energy(s).total == pytest.approx(e0.total, rel=1e-4)


@pytest.mark.parametrize("n0, e, m, w", [(1.0, 1.0, 1.0, 1.0), (4.0, 1.0, 1.0, 2.0), (1.0, 3.0, 9.0, 1.0)])
def test_plasma_frequency(n0, e, m, w):
    assert plasma_frequency(n0, e, m) == pytest.approx(w)


@settings(max_examples=20, deadline=None)
@given(st.floats(0.5, 5.0), st.floats(0.0, 3.0))
def test_oscillation_frequency_of_a_sine(w, phase):
    t = np.linspace(0, 20, 4001)
    assert oscillation_frequency(t, 0.3 + np.sin(w * t + phase)) == pytest.approx(w, rel=2e-3)


def test_debye_ratio_monotone_and_bounded():
    g = Grid(3, [(0, 8)] * 3, 32)
    r_cold, cold = debye_screening(g, 0.1, 1.0, 1.0)
    assert np.all(np.diff(cold) < 0) and cold.max() < 1
    _, hot = debye_screening(g, 0.1, 1e9, 1.0)
    np.testing.assert_allclose(hot, 1.0, atol=1e-6)


def test_circulation_coherence_warning():
    v0 = lambda xi: 0.1 * np.stack([np.sin(TP * xi[..., 1]), 0 * xi[..., 0]], -1)
    el = build_lattice(2, [(0, 1), (0, 1)], 16, v0_fn=v0)
    ion = build_lattice(2, [(0, 1), (0, 1)], 16, m=10.0, v0_fn=v0,
                        x0_fn=lambda xi: xi + 0.05)
    state = PlasmaState(el, ion)
    loop = MaterialLoop.circle((0.5, 0.5), 0.2, 32)
    with pytest.warns(RuntimeWarning):
        total_circulation(state, loop, loop, coherence_tol=0.01)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        total_circulation(state, loop, loop, coherence_tol=1.0)


def test_internal_pressure_enters_both_species():
    el = build_lattice(1, [0, 1], 32, x0_fn=lambda xi: xi + 0.01 * np.sin(TP * xi))
    ion = build_lattice(1, [0, 1], 32, m=10.0, x0_fn=lambda xi: xi + 0.01 * np.sin(TP * xi))
    state = PlasmaState(el, ion)
    V = SoundPotential(1.0)
    for F in electric_forces(state):
        np.testing.assert_allclose(F, 0.0, atol=1e-12)
    out, _ = electrostatic_step(state, 1e-3, V, V)
    # co-located species: only pressure acts, and it is the same on both lattices
    dp_el = out.electrons.momenta - state.electrons.momenta
    dp_ion = out.ions.momenta - state.ions.momenta
    assert np.max(np.abs(dp_el)) > 0
    np.testing.assert_allclose(dp_el, dp_ion, rtol=1e-3, atol=1e-12)
