"""Conserved functionals of the relabeling symmetry and canonical field identities.

Label-space objects (``J``, ``R``, ``K``) are computed on the lattice with the
same central differences as the dynamics.  ``R`` is evaluated in the product
form ``eps_kl D_k p_m D_l x_m``; since lattice central differences commute,
this is a consistent discretization of ``curl_xi J`` and it is conserved
exactly by free streaming when ``rho0`` is uniform.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .deposition import deposit_momentum
from .errors import VacuumError
from .grid import GridField, curl, grid_integral
from .lattice import MapInterpolant, deformation_field, inverse_map, label_diff

MIN_MARKERS = 8


def lagrangian_current(fmap, A=None):
    """``J_k = p_m dx_m/dxi_k`` at every label."""
    if A is None:
        A = deformation_field(fmap)
    return np.einsum("...m,...mk->...k", fmap.momenta, A)


def vorticity_vector(fmap, A=None):
    """Label-space curl of ``J``: scalar field in 2D, vector field in 3D."""
    lat = fmap.lattice
    if lat.dim == 1:
        raise ValueError("vorticity needs a 2D or 3D lattice")
    if A is None:
        A = deformation_field(fmap)
    # Dp[..., m, k] = D_k p_m
    Dp = np.stack([label_diff(lat, fmap.momenta, k) for k in range(lat.dim)], axis=-1)
    # M[..., k, l] = D_k p_m A_ml
    M = np.einsum("...mk,...ml->...kl", Dp, A)
    if lat.dim == 2:
        return M[..., 0, 1] - M[..., 1, 0]
    return np.stack([M[..., 1, 2] - M[..., 2, 1],
                     M[..., 2, 0] - M[..., 0, 2],
                     M[..., 0, 1] - M[..., 1, 0]], axis=-1)


def label_curl(lattice, J):
    """Plain label-lattice curl of a vector field (used for the modulo-gradient check)."""
    d = lambda f, k: label_diff(lattice, f, k)
    if lattice.dim == 2:
        return d(J[..., 1], 0) - d(J[..., 0], 1)
    return np.stack([d(J[..., 2], 1) - d(J[..., 1], 2),
                     d(J[..., 0], 2) - d(J[..., 2], 0),
                     d(J[..., 1], 0) - d(J[..., 0], 1)], axis=-1)


# -- material loops -------------------------------------------------------

@dataclass(eq=False)
class MaterialLoop:
    """Closed loop of marker labels ``xi(s)``; the closing segment is implicit."""

    labels: np.ndarray

    def __post_init__(self):
        lab = np.atleast_2d(np.asarray(self.labels, dtype=float))
        if len(lab) > 1 and np.allclose(lab[0], lab[-1]):
            lab = lab[:-1]
        if len(lab) < MIN_MARKERS:
            raise ValueError(f"a material loop needs at least {MIN_MARKERS} markers")
        self.labels = lab

    @classmethod
    def circle(cls, center, radius, n_markers=64, plane=(0, 1)):
        """Circle of labels in the plane spanned by label axes ``plane``."""
        center = np.asarray(center, dtype=float)
        s = 2.0 * np.pi * np.arange(n_markers) / n_markers
        lab = np.repeat(center[None, :], n_markers, axis=0)
        lab[:, plane[0]] += radius * np.cos(s)
        lab[:, plane[1]] += radius * np.sin(s)
        return cls(lab)

    def __len__(self):
        return len(self.labels)

    def positions(self, fmap, interp=None):
        interp = interp or MapInterpolant(fmap)
        return interp.position(self.labels)


def loop_integral(x, v):
    """Trapezoid ``sum (v_i + v_{i+1})/2 . (x_{i+1} - x_i)`` around a closed polygon."""
    dx = np.roll(x, -1, axis=0) - x
    vm = 0.5 * (v + np.roll(v, -1, axis=0))
    return float(np.sum(vm * dx))


def circulation(fmap, loop, interp=None):
    """Circulation of ``v = p/(m rho0)`` around the advected material loop."""
    interp = interp or MapInterpolant(fmap)
    x = interp.position(loop.labels)
    v = interp.sample(fmap.velocities(), loop.labels, key="velocity")
    return loop_integral(x, v)


# -- two-dimensional Casimirs ---------------------------------------------

def casimir_In(rho, v, n):
    """``I_n = int rho^(1-n) (d1 v2 - d2 v1)^n`` on a 2D grid.

    Raises :class:`VacuumError` if a vacuum node carries vorticity.
    """
    grid = rho.grid
    if grid.dim != 2:
        raise ValueError("the I_n Casimirs are defined in two dimensions")
    if n == 0:
        return float(grid_integral(grid, rho.values))
    w = curl(grid, v.values)
    r = rho.values
    vac = ~(r > 1e-12 * float(np.mean(r)))
    wscale = float(np.max(np.abs(w))) if w.size else 0.0
    if np.any(vac & (np.abs(w) > 1e-12 * max(wscale, 1e-300))):
        raise VacuumError("vacuum nodes inside the vorticity support")
    safe = np.where(vac, 1.0, r)
    dens = np.where(vac, 0.0, safe ** (1 - n) * w ** n)
    return float(grid_integral(grid, dens))


def casimir_scale(rho, v, n):
    """``int rho^(1-n) |omega|^n``: positive normalization for drift of ``I_n``."""
    grid = rho.grid
    w = np.abs(curl(grid, v.values))
    r = np.where(rho.values > 0, rho.values, 1.0)
    return float(grid_integral(grid, r ** (1 - n) * w ** n))


def casimir_In_lagrangian(fmap, n, A=None):
    """Label-space form ``sum rho0^(1-2n) (R/m)^n dV_xi`` (2D).

    Equals :func:`casimir_In` for uniform ``rho0``, where ``R = m rho0 det A omega``.
    """
    R = vorticity_vector(fmap, A)
    return float(np.sum(fmap.rho0 ** (1 - 2 * n) * (R / fmap.mass) ** n)
                 * fmap.lattice.cell_volume)


# -- three-dimensional integrals ------------------------------------------

def k_integrals(fmap, order, A=None):
    """``K_j = sum R_j dV_xi`` (order 1) or ``K_jk = sum R_j R_k dV_xi`` (order 2)."""
    if fmap.dim != 3:
        raise ValueError("K integrals are defined for three-dimensional lattices")
    R = vorticity_vector(fmap, A).reshape(-1, 3)
    dv = fmap.lattice.cell_volume
    if order == 1:
        return R.sum(axis=0) * dv
    if order == 2:
        return R.T @ R * dv
    raise ValueError("K integrals are implemented for orders 1 and 2")


def helicity(v):
    """Grid helicity ``sum v . curl v dV`` with centred differences."""
    if v.grid.dim != 3:
        raise ValueError("helicity needs a 3D field")
    return float(grid_integral(v.grid, np.sum(v.values * curl(v.grid, v.values), axis=-1)))


def helicity_lagrangian(fmap, A=None):
    """Label-space helicity ``sum J . R dV_xi``.

    For ``rho0 = 1`` this equals ``m^2`` times the helicity of the velocity.
    """
    if fmap.dim != 3:
        raise ValueError("helicity needs a 3D lattice")
    if A is None:
        A = deformation_field(fmap)
    J = lagrangian_current(fmap, A)
    R = vorticity_vector(fmap, A)
    return float(np.sum(J * R) * fmap.lattice.cell_volume)


# -- Eulerian fields from the inverse map ---------------------------------

def _wrap_delta(lattice, d):
    if lattice.periodic:
        L = lattice.lengths
        d = d - L * np.round(d / L)
    return d


def inverse_gradient(fmap, x, interp=None, rel_step=1e-5):
    """``a[j, r] = d xi_j / d x_r`` by 4th-order differences of the inverse map.

    Each point is inverted at ``x +- delta e_r`` and ``x +- 2 delta e_r``;
    the result is independent of the spline Jacobian and so tests the
    inverse-function identity ``A a = 1``.
    """
    lat = fmap.lattice
    interp = interp or MapInterpolant(fmap)
    x = np.atleast_2d(x)
    delta = rel_step * float(np.min(lat.lengths))
    cols = []
    for r in range(lat.dim):
        e = np.zeros(lat.dim)
        e[r] = delta
        xi = {s: inverse_map(fmap, x + s * e, tol=1e-14, interpolant=interp)
              for s in (-2, -1, 1, 2)}
        d1 = _wrap_delta(lat, xi[1] - xi[-1])
        d2 = _wrap_delta(lat, xi[2] - xi[-2])
        cols.append((8.0 * d1 - d2) / (12.0 * delta))
    return np.stack(cols, axis=-1)


def sample_fields(fmap, grid, interp=None):
    """Eulerian ``(rho, v)`` sampled through the inverse map.

    ``rho(x) = rho0(xi(x))/det A(xi(x))`` and ``v(x) = p/(m rho0)`` at
    ``xi(x)``, both with the cubic map interpolant.  This is a smooth,
    noise-free alternative to kernel deposition.
    """
    interp = interp or MapInterpolant(fmap)
    x = grid.nodes().reshape(-1, grid.dim)
    xi = inverse_map(fmap, x, interpolant=interp)
    A = interp.jacobian(xi)
    rho0 = interp.sample(fmap.rho0, xi, key="rho0")
    rho = rho0 / np.linalg.det(A)
    v = interp.sample(fmap.velocities(), xi, key="velocity")
    return (GridField(grid, rho.reshape(grid.shape), "number/volume"),
            GridField(grid, v.reshape(grid.shape + (grid.dim,)), "length/time"))


@dataclass(eq=False)
class CanonicalFields:
    """Eulerian canonical set on a grid.

    ``xi`` are the labels at the nodes, ``grad_xi`` is ``d xi/dx`` from the
    differentiated inverse map, ``A`` the spline deformation matrix at
    ``xi(x)``, ``l`` the momentum field, ``pi = -A^T l`` and ``g = A^T A``.
    ``rho`` is ``rho0(xi(x)) det(d xi/dx)``.
    """

    grid: object
    xi: GridField
    grad_xi: GridField
    A: GridField
    l: GridField
    pi: GridField
    g: GridField
    rho: GridField
    rho0: GridField

    def reconstruction_residual(self):
        """Max of ``|l + (grad xi)^T pi|`` relative to ``max |l|``."""
        rec = np.einsum("...kj,...k->...j", self.grad_xi.values, self.pi.values)
        scale = max(float(np.max(np.abs(self.l.values))), 1e-300)
        return float(np.max(np.abs(self.l.values + rec))) / scale

    def metric_residual(self):
        """Max of ``|det g rho^2 / rho0^2 - 1|`` (``det g = 1/rho^2`` when ``rho0 = 1``)."""
        detg = np.linalg.det(self.g.values)
        return float(np.max(np.abs(detg * self.rho.values ** 2 / self.rho0.values ** 2 - 1.0)))

    def inverse_residual(self):
        """Max of ``|A grad_xi - 1|`` (inverse-function identity)."""
        dim = self.grid.dim
        prod = np.einsum("...jk,...kl->...jl", self.A.values, self.grad_xi.values)
        return float(np.max(np.abs(prod - np.eye(dim))))


def canonical_fields(fmap, grid, l_route="deposit", kernel="tsc"):
    """Build :class:`CanonicalFields` of ``fmap`` on ``grid``.

    ``l_route="deposit"`` deposits ``l = sum p dV_xi W``; ``"exact"`` uses
    ``l = rho(x) p(xi(x))`` with the interpolated map.
    """
    interp = MapInterpolant(fmap)
    x = grid.nodes().reshape(-1, grid.dim)
    xi = inverse_map(fmap, x, interpolant=interp)
    A = interp.jacobian(xi)
    a = inverse_gradient(fmap, x, interp)
    rho0 = interp.sample(fmap.rho0, xi, key="rho0")
    rho = rho0 * np.linalg.det(a)
    if l_route == "deposit":
        l = fmap.mass * deposit_momentum(fmap, grid, kernel).rho_v.values.reshape(-1, grid.dim)
    elif l_route == "exact":
        l = rho[:, None] * interp.sample(fmap.momenta, xi, key="momenta")
    else:
        raise ValueError(f"unknown l_route {l_route!r}")
    pi = -np.einsum("...jm,...j->...m", A, l)
    g = np.einsum("...mj,...mk->...jk", A, A)
    vs = grid.shape + (grid.dim,)
    ms = grid.shape + (grid.dim, grid.dim)
    return CanonicalFields(
        grid,
        GridField(grid, xi.reshape(vs), "length"),
        GridField(grid, a.reshape(ms)),
        GridField(grid, A.reshape(ms)),
        GridField(grid, l.reshape(vs), "momentum/volume"),
        GridField(grid, pi.reshape(vs), "momentum/volume"),
        GridField(grid, g.reshape(ms)),
        GridField(grid, rho.reshape(grid.shape), "number/volume"),
        GridField(grid, rho0.reshape(grid.shape), "number/volume"),
    )
