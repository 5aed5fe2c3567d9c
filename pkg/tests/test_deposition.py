import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lagmedia.deposition import (continuity_residual, deposit_density, deposit_momentum,
                                 gather, kernel_stencil, scatter)
from lagmedia.errors import OutOfDomain
from lagmedia.grid import CLAMPED, Grid, GridField
from lagmedia.lattice import FIXED_WALL, build_lattice, jacobian_density

TP = 2 * np.pi


@pytest.mark.parametrize("kernel", ["cic", "tsc"])
@pytest.mark.parametrize("threads", [1, 3])
def test_mass_conserved(kernel, threads):
    f = build_lattice(2, [(0, 1), (0, 1)], 20,
                      x0_fn=lambda xi: xi + 0.05 * np.sin(TP * xi[..., ::-1]),
                      rho0_fn=lambda xi: 1 + 0.3 * np.cos(TP * xi[..., 0]))
    rho = deposit_density(f, Grid(2, [(0, 1), (0, 1)], 16), kernel, threads)
    assert rho.integral() == pytest.approx(f.weights().sum(), rel=1e-13)


@pytest.mark.parametrize("kernel", ["cic", "tsc"])
def test_identity_gives_unit_density(kernel):
    f = build_lattice(2, [(0, 1), (0, 1)], 16)
    rho = deposit_density(f, Grid(2, [(0, 1), (0, 1)], 16), kernel)
    np.testing.assert_allclose(rho.values, 1.0, rtol=1e-13)


def test_doubling_halves_density():
    f = build_lattice(1, [0, 1], 129, FIXED_WALL, x0_fn=lambda xi: 2 * xi)
    rho = deposit_density(f, Grid(1, [0, 2], 33, CLAMPED), "cic").values
    # interior nodes; wall nodes only see half a kernel
    np.testing.assert_allclose(rho[1:-1], 0.5, rtol=1e-12)
    np.testing.assert_allclose(jacobian_density(f), 0.5, rtol=1e-12)


def test_single_label_spreads_its_weight():
    g = Grid(1, [0, 1], 10)
    q = scatter(g, np.array([[0.23]]), np.array([2.0]), "cic")
    assert q.sum() == pytest.approx(2.0)
    np.testing.assert_allclose(q[[2, 3]], [2.0 * 0.7, 2.0 * 0.3])


def test_uniform_velocity_and_rigid_rotation():
    f = build_lattice(2, [(0, 1), (0, 1)], 24,
                      v0_fn=lambda xi: np.broadcast_to([0.3, -0.1], xi.shape))
    dep = deposit_momentum(f, Grid(2, [(0, 1), (0, 1)], 12), "tsc")
    np.testing.assert_allclose(dep.v.values, np.broadcast_to([0.3, -0.1], (12, 12, 2)), atol=1e-13)
    assert not dep.vacuum.any()

    om = 0.7
    r = build_lattice(2, [(-1, 1), (-1, 1)], 41, FIXED_WALL,
                      v0_fn=lambda xi: om * np.stack([-xi[..., 1], xi[..., 0]], -1))
    g = Grid(2, [(-1, 1), (-1, 1)], 21, CLAMPED)
    dep = deposit_momentum(r, g, "cic")
    X = g.nodes()
    # linear fields are reproduced exactly away from the walls
    exact = om * np.stack([-X[..., 1], X[..., 0]], -1)
    np.testing.assert_allclose(dep.v.values[1:-1, 1:-1], exact[1:-1, 1:-1], atol=1e-12)


def test_vacuum_cells_have_zero_velocity():
    f = build_lattice(1, [0, 0.2], 8, FIXED_WALL,
                      v0_fn=lambda xi: np.ones(xi.shape))
    dep = deposit_momentum(f, Grid(1, [0, 1], 21, CLAMPED), "cic")
    assert dep.vacuum[-1] and dep.v.values[-1, 0] == 0.0
    assert not dep.vacuum[0]


def test_out_of_domain():
    with pytest.raises(OutOfDomain):
        kernel_stencil(Grid(1, [0, 1], 8, CLAMPED), np.array([[1.5]]))


def test_continuity_residual_vanishes_for_exact_data():
    g = Grid(1, [0, 1], 64)
    x = g.nodes()[..., 0]
    c, dt = 0.4, 1e-3
    rho = [GridField(g, 1 + 0.1 * np.sin(TP * (x - c * t))) for t in (-dt, 0, dt)]
    v = GridField(g, np.full((64, 1), c))
    res, _ = continuity_residual(rho, v, dt)
    assert res < 1e-3


def test_corrupted_density_is_detected():
    g = Grid(1, [0, 1], 64)
    x = g.nodes()[..., 0]
    rho = [GridField(g, 1 + 0.1 * np.sin(TP * x)) for _ in range(3)]
    rho[2] = GridField(g, rho[2].values * 1.01)
    res, _ = continuity_residual(rho, GridField(g, np.zeros((64, 1))), 1e-3)
    assert res > 1.0


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(0.0, 0.999), min_size=1, max_size=20), st.sampled_from(["cic", "tsc"]))
def test_scatter_gather_are_transposes(xs, kernel):
    g = Grid(1, [0, 1], 12)
    x = np.array(xs)[:, None]
    rng = np.random.default_rng(len(xs))
    q, field = rng.normal(size=len(xs)), rng.normal(size=12)
    lhs = np.dot(scatter(g, x, q, kernel), field)
    rhs = np.dot(q, gather(g, field, x, kernel))
    assert lhs == pytest.approx(rhs, rel=1e-12, abs=1e-12)
    assert scatter(g, x, q, kernel).sum() == pytest.approx(q.sum(), abs=1e-12)
