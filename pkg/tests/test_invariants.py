import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lagmedia.errors import VacuumError
from lagmedia.grid import CLAMPED, Grid, GridField, gradient
from lagmedia.invariants import (MaterialLoop, canonical_fields, casimir_In,
                                 casimir_In_lagrangian, circulation, helicity,
                                 helicity_lagrangian, k_integrals, label_curl,
                                 lagrangian_current, loop_integral, vorticity_vector)
from lagmedia.lattice import FIXED_WALL, build_lattice

TP = 2 * np.pi


def rotation(omega=0.5, n=21, m=1.0):
    return build_lattice(2, [(-1, 1), (-1, 1)], n, FIXED_WALL, m=m,
                         v0_fn=lambda xi: omega * np.stack([-xi[..., 1], xi[..., 0]], -1))


def test_rigid_rotation_circulation_and_vorticity():
    om, r, n = 0.5, 0.6, 64
    f = rotation(om, m=2.0)
    c = circulation(f, MaterialLoop.circle([0, 0], r, n))
    # exact for the inscribed polygon; approaches 2 pi omega r^2
    assert c == pytest.approx(om * n * r * r * np.sin(TP / n), rel=1e-12)
    assert c == pytest.approx(TP * om * r * r, rel=2e-3)
    np.testing.assert_allclose(vorticity_vector(f), 2 * 2.0 * om, rtol=1e-12)


@pytest.mark.parametrize("n", [1, 2, 3])
def test_rigid_rotation_casimirs(n):
    om = 0.5
    g = Grid(2, [(-1, 1), (-1, 1)], 9, CLAMPED)
    X = g.nodes()
    rho = GridField(g, np.ones(g.shape))
    v = GridField(g, om * np.stack([-X[..., 1], X[..., 0]], -1))
    area = rho.integral()
    assert casimir_In(rho, v, n) == pytest.approx((2 * om) ** n * area, rel=1e-12)
    f = rotation(om)
    assert casimir_In_lagrangian(f, n) == pytest.approx((2 * om) ** n * f.weights().sum(), rel=1e-12)


def test_casimir_vacuum_and_dimension_errors():
    g = Grid(2, [(0, 1), (0, 1)], 8)
    X = g.nodes()
    v = GridField(g, np.stack([np.sin(TP * X[..., 1]), 0 * X[..., 0]], -1))
    rho = np.ones(g.shape)
    rho[2, 1] = 0.0
    with pytest.raises(VacuumError):
        casimir_In(GridField(g, rho), v, 2)
    assert casimir_In(GridField(g, np.ones(g.shape)), v, 0) == pytest.approx(1.0)


def test_beltrami_discrete_helicity():
    n = 16
    g = Grid(3, [(0, TP)] * 3, n)
    X = g.nodes()
    x, y, z = X[..., 0], X[..., 1], X[..., 2]
    v = np.stack([np.sin(z) + np.cos(y), np.sin(x) + np.cos(z), np.sin(y) + np.cos(x)], -1)
    h = TP / n
    # centred differences scale curl v = v by sin(h)/h
    assert helicity(GridField(g, v)) == pytest.approx(3 * TP ** 3 * np.sin(h) / h, rel=1e-12)

    m = 2.0
    f = build_lattice(3, [(0, TP)] * 3, n, m=m,
                      v0_fn=lambda xi: np.stack([np.sin(xi[..., 2]) + np.cos(xi[..., 1]),
                                                 np.sin(xi[..., 0]) + np.cos(xi[..., 2]),
                                                 np.sin(xi[..., 1]) + np.cos(xi[..., 0])], -1))
    assert helicity_lagrangian(f) == pytest.approx(m * m * helicity(GridField(g, v)), rel=1e-12)
    np.testing.assert_allclose(k_integrals(f, 1), 0.0, atol=1e-10)
    K2 = k_integrals(f, 2)
    np.testing.assert_allclose(K2, K2.T)


def test_k_integral_errors():
    with pytest.raises(ValueError):
        k_integrals(rotation(), 1)
    with pytest.raises(ValueError):
        k_integrals(build_lattice(3, [(0, 1)] * 3, 4), 3)
    with pytest.raises(ValueError):
        vorticity_vector(build_lattice(1, [0, 1], 8))


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2 ** 31 - 1))
def test_gradient_currents_have_no_vorticity(seed):
    rng = np.random.default_rng(seed)
    a = rng.normal(size=4)
    f = build_lattice(2, [(0, 1), (0, 1)], 12)
    X = f.lattice.nodes()
    phi = a[0] * np.sin(TP * X[..., 0] + a[1]) * np.cos(TP * X[..., 1] + a[2]) + a[3] * np.cos(TP * X[..., 1])
    f.momenta = gradient(Grid(2, [(0, 1), (0, 1)], 12), phi)
    np.testing.assert_allclose(vorticity_vector(f), 0.0, atol=1e-12)
    np.testing.assert_allclose(label_curl(f.lattice, lagrangian_current(f)), 0.0, atol=1e-12)


def test_loop_validation_and_polygon_integral():
    with pytest.raises(ValueError):
        MaterialLoop(np.zeros((5, 2)))
    lab = MaterialLoop.circle([0.5, 0.5], 0.2, 10).labels
    assert len(MaterialLoop(np.vstack([lab, lab[:1]]))) == 10
    sq = np.array([[0, 0], [1, 0], [1, 1], [0, 1]], dtype=float)
    v = np.stack([-sq[:, 1], sq[:, 0]], -1)
    assert loop_integral(sq, v) == pytest.approx(2.0)


def test_canonical_identities_for_doubling_map():
    f = build_lattice(2, [(0, 1), (0, 1)], 12, FIXED_WALL, x0_fn=lambda xi: 2 * xi,
                      v0_fn=lambda xi: np.stack([xi[..., 1], -xi[..., 0] ** 2], -1))
    g = Grid(2, [(0.3, 1.7), (0.3, 1.7)], 6, CLAMPED)
    cf = canonical_fields(f, g, l_route="exact")
    np.testing.assert_allclose(cf.grad_xi.values, np.broadcast_to(0.5 * np.eye(2), g.shape + (2, 2)),
                               atol=1e-8)
    np.testing.assert_allclose(cf.rho.values, 0.25, rtol=1e-8)
    assert cf.reconstruction_residual() < 1e-8
    assert cf.metric_residual() < 1e-8
    assert cf.inverse_residual() < 1e-8
