import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lagmedia.c2 import (ClebschDoublet, c2_hamiltonian, c2_integrate, dH_dubar,
                         doublet_from_angles, euler_hamiltonian, extract_angles,
                         homogeneous_phase, hopf_configuration, hopf_invariant, project_euler,
                         u2_charges, velocity_from_angles)
from lagmedia.dynamics import PolytropicPotential, SoundPotential
from lagmedia.errors import ConstructionError, VacuumError
from lagmedia.grid import Grid

TP = 2 * np.pi
SOUND = SoundPotential(1.0)


def smooth_doublet(n=16, seed=0, dim=2, m=1.0):
    g = Grid(dim, [(0, 1)] * dim, n)
    X = g.nodes()
    rng = np.random.default_rng(seed)
    c = rng.normal(size=(4, dim))
    ph = [TP * (X @ np.round(c[k])) + 0.3 * np.sin(TP * X[..., 0] + k) for k in range(2)]
    amp = [1 + 0.2 * np.cos(TP * X @ c[2]), 0.5 + 0.1 * np.sin(TP * X @ c[3])]
    return ClebschDoublet(g, np.stack([a * np.exp(1j * p) for a, p in zip(amp, ph)], -1), m)


def test_plane_wave_velocity():
    n, k = 32, 3
    g = Grid(1, [0, 1], n)
    x = g.nodes()[..., 0]
    d = ClebschDoublet(g, np.stack([2.0 * np.exp(1j * TP * k * x), 0 * x], -1))
    rho, v, vac = project_euler(d)
    h = 1.0 / n
    np.testing.assert_allclose(rho.values, 4.0)
    np.testing.assert_allclose(v.values, np.sin(TP * k * h) / h, rtol=1e-12)
    assert not vac.any()
    ang = extract_angles(d)
    np.testing.assert_allclose(velocity_from_angles(ang, g), TP * k, rtol=1e-12)


@pytest.mark.parametrize("seed", range(3))
def test_hamiltonian_routes_agree(seed):
    d = smooth_doublet(seed=seed, m=1.7)
    V = PolytropicPotential(0.8, 1.5)
    rho, v, _ = project_euler(d)
    h1, h2 = c2_hamiltonian(d, V), euler_hamiltonian(rho, v, V, m=1.7)
    assert h1 == pytest.approx(h2, rel=1e-12)


def test_gradient_matches_finite_differences():
    d = smooth_doublet(8, seed=1)
    G = dH_dubar(d, SOUND)
    dv = d.grid.cell_volume
    rng = np.random.default_rng(5)
    for _ in range(4):
        idx = tuple(rng.integers(0, 8, size=2)) + (int(rng.integers(2)),)
        for direction in (1.0, 1j):
            eps = 1e-6
            up, um = d.copy(), d.copy()
            up.u[idx] += eps * direction
            um.u[idx] -= eps * direction
            fd = (c2_hamiltonian(up, SOUND) - c2_hamiltonian(um, SOUND)) / (2 * eps)
            assert fd == pytest.approx(2 * np.real(np.conj(direction) * G[idx]) * dv,
                                       rel=1e-6, abs=1e-9)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2 ** 31 - 1))
def test_angle_round_trip(seed):
    d = smooth_doublet(8, seed)
    a = extract_angles(d)
    back = doublet_from_angles(d.grid, a.rho, a.phi, a.psi, a.alpha)
    np.testing.assert_allclose(back.u, d.u, atol=1e-12)
    assert not a.degenerate.any()


def test_angles_need_nonzero_density():
    g = Grid(1, [0, 1], 4)
    with pytest.raises(VacuumError):
        extract_angles(ClebschDoublet(g, np.zeros((4, 2))))
    with pytest.raises(ConstructionError):
        ClebschDoublet(g, np.zeros((4, 3)))


def test_homogeneous_phase():
    g = Grid(2, [(0, 1), (0, 1)], 4)
    u0 = np.array([0.6 + 0.2j, -0.3 + 0.9j])
    V = SoundPotential(2.0)
    d = ClebschDoublet(g, np.broadcast_to(u0, (4, 4, 2)))
    out = c2_integrate(d, V, 0.01, 100)
    np.testing.assert_allclose(out.u, np.broadcast_to(homogeneous_phase(u0, V, 1.0), (4, 4, 2)),
                               atol=1e-10)


def test_charges_and_energy_conserved():
    d = smooth_doublet(16, seed=2)
    V = SoundPotential(1.0, 1.0, 0.0)
    q0, e0 = u2_charges(d), c2_hamiltonian(d, V)
    seen = []
    out = c2_integrate(d, V, 2e-4, 50, observer=lambda s, n: seen.append(n), cadence=25)
    assert seen == [0, 25, 50]
    np.testing.assert_allclose(u2_charges(out), q0, rtol=1e-9)
    assert c2_hamiltonian(out, V) == pytest.approx(e0, rel=1e-6)


def test_hopf_degrees():
    g = Grid(3, [(-1, 1)] * 3, 32)
    q1 = hopf_invariant(hopf_configuration(g, 1))
    q2 = hopf_invariant(hopf_configuration(g, 2))
    assert q1 == pytest.approx(1.0, abs=0.05)
    assert q2 == pytest.approx(2.0, abs=0.2)
    const = ClebschDoublet(g, np.broadcast_to([1.0 + 0j, 0.5j], g.shape + (2,)))
    assert hopf_invariant(const) == pytest.approx(0.0, abs=1e-14)
    with pytest.raises(ValueError):
        hopf_configuration(g, 3)
