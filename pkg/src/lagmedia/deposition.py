"""Kernel deposition of Lagrangian data onto grids and the Eulerian residuals.

The delta function ``delta(x - x(xi))`` is replaced by a partition-of-unity
kernel: cloud-in-cell (multilinear, default) or triangular-shaped cloud
(quadratic B-spline).  Every label carries ``rho0 * dV_xi`` particles, so the
deposited mass equals the label-space mass to roundoff.
"""
from __future__ import annotations

import itertools
from concurrent.futures import ThreadPoolExecutor
from typing import NamedTuple

import numpy as np

from .errors import OutOfDomain
from .grid import GridField, check_same_grid, diff, divergence, l2_norm

KERNELS = ("cic", "tsc")
VACUUM_FRACTION = 1e-12


def _axis_stencil(u, n, periodic, kernel):
    """Node indices and weights along one axis for index coordinates ``u``."""
    if kernel == "cic":
        i0 = np.floor(u).astype(np.int64)
        if not periodic:
            i0 = np.clip(i0, 0, n - 2)
        f = u - i0
        idx = np.stack([i0, i0 + 1], axis=1)
        w = np.stack([1.0 - f, f], axis=1)
    elif kernel == "tsc":
        ic = np.rint(u).astype(np.int64)
        d = u - ic
        idx = np.stack([ic - 1, ic, ic + 1], axis=1)
        w = np.stack([0.5 * (0.5 - d) ** 2, 0.75 - d * d, 0.5 * (0.5 + d) ** 2], axis=1)
    else:
        raise ValueError(f"unknown kernel {kernel!r}; choose from {KERNELS}")
    if periodic:
        idx = np.mod(idx, n)
    else:
        # weight falling beyond a clamped wall is folded back onto the wall node
        idx = np.clip(idx, 0, n - 1)
    return idx, w


def _axis_stencil_slope(u, n, periodic, kernel):
    """Derivatives of the axis weights with respect to ``u``."""
    if kernel == "cic":
        one = np.ones_like(u)
        return np.stack([-one, one], axis=1)
    d = u - np.rint(u)
    return np.stack([d - 0.5, -2.0 * d, 0.5 + d], axis=1)


def _prepare(grid, x):
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if grid.periodic:
        x = grid.lower + np.mod(x - grid.lower, grid.lengths)
    else:
        tol = 1e-12 * grid.lengths
        bad = np.any((x < grid.lower - tol) | (x > grid.upper + tol), axis=1)
        if bad.any():
            raise OutOfDomain(f"particle at {x[bad][0]} lies outside the clamped grid")
    return x, (x - grid.lower) / grid.spacing


def kernel_stencil_gradient(grid, x, kernel="cic"):
    """Flat node indices ``(N, k**dim)`` and weight gradients ``(N, k**dim, dim)``.

    ``grad[i, c, a]`` is the derivative of the weight of node ``c`` with
    respect to coordinate ``a`` of particle ``i``.
    """
    x, u = _prepare(grid, x)
    per_axis = [_axis_stencil(u[:, a], grid.shape[a], grid.periodic, kernel)
                for a in range(grid.dim)]
    slopes = [_axis_stencil_slope(u[:, a], grid.shape[a], grid.periodic, kernel)
              / grid.spacing[a] for a in range(grid.dim)]
    k = per_axis[0][0].shape[1]
    cols_i, cols_g = [], []
    for combo in itertools.product(range(k), repeat=grid.dim):
        multi = tuple(per_axis[a][0][:, c] for a, c in enumerate(combo))
        cols_i.append(np.ravel_multi_index(multi, grid.shape))
        g = []
        for b in range(grid.dim):
            w = np.ones(len(x))
            for a, c in enumerate(combo):
                w = w * (slopes[a][:, c] if a == b else per_axis[a][1][:, c])
            g.append(w)
        cols_g.append(np.stack(g, axis=1))
    return np.stack(cols_i, axis=1), np.stack(cols_g, axis=1)


def kernel_stencil(grid, x, kernel="cic"):
    """Flat node indices and weights, each of shape ``(N, k**dim)``.

    Raises :class:`OutOfDomain` if a point lies outside a clamped grid.
    """
    x, u = _prepare(grid, x)
    per_axis = [_axis_stencil(u[:, a], grid.shape[a], grid.periodic, kernel)
                for a in range(grid.dim)]
    k = per_axis[0][0].shape[1]
    cols_i, cols_w = [], []
    for combo in itertools.product(range(k), repeat=grid.dim):
        multi = tuple(per_axis[a][0][:, c] for a, c in enumerate(combo))
        cols_i.append(np.ravel_multi_index(multi, grid.shape))
        w = np.ones(len(x))
        for a, c in enumerate(combo):
            w = w * per_axis[a][1][:, c]
        cols_w.append(w)
    return np.stack(cols_i, axis=1), np.stack(cols_w, axis=1)


def scatter(grid, x, q, kernel="cic", threads=1, stencil=None):
    """Accumulate per-particle quantities ``q`` (``(N,)`` or ``(N, k)``) onto nodes.

    Returns the sum of kernel-weighted charges per node (not divided by the
    cell volume).  Particles are split into ``threads`` contiguous chunks whose
    partial grids are added in chunk order, so the result is reproducible for
    a fixed thread count.
    """
    idx, w = stencil if stencil is not None else kernel_stencil(grid, x, kernel)
    q = np.asarray(q, dtype=float)
    vector = q.ndim == 2
    qq = q if vector else q[:, None]

    def accumulate(sl):
        out = np.empty((grid.size, qq.shape[1]))
        ii = idx[sl].ravel()
        for c in range(qq.shape[1]):
            out[:, c] = np.bincount(ii, weights=(w[sl] * qq[sl, c, None]).ravel(),
                                    minlength=grid.size)
        return out

    n = len(qq)
    threads = max(1, int(threads))
    if threads == 1 or n < 2 * threads:
        total = accumulate(slice(None))
    else:
        edges = np.linspace(0, n, threads + 1).astype(int)
        slices = [slice(a, b) for a, b in zip(edges[:-1], edges[1:])]
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(accumulate, slices))
        total = parts[0]
        for part in parts[1:]:
            total = total + part
    total = total.reshape(grid.shape + (qq.shape[1],))
    return total if vector else total[..., 0]


def gather(grid, values, x, kernel="cic", stencil=None):
    """Interpolate node values to points with the deposition kernel (transpose of scatter)."""
    idx, w = stencil if stencil is not None else kernel_stencil(grid, x, kernel)
    vals = np.asarray(values)
    flat = vals.reshape((grid.size,) + vals.shape[grid.dim:])
    if flat.ndim == 1:
        return np.sum(flat[idx] * w, axis=1)
    return np.einsum("nk,nkc->nc", w, flat[idx])


def _flat_positions(fmap):
    return fmap.positions.reshape(-1, fmap.dim)


def deposit_density(fmap, grid, kernel="cic", threads=1):
    """Number density ``rho(x) = sum rho0 dV_xi W(x - x(xi)) / dV_grid``."""
    w = fmap.weights().ravel()
    rho = scatter(grid, _flat_positions(fmap), w, kernel, threads) / grid.cell_volume
    return GridField(grid, rho, "number/volume")


class MomentumDeposit(NamedTuple):
    rho_v: GridField
    v: GridField
    vacuum: np.ndarray
    rho: GridField


def deposit_momentum(fmap, grid, kernel="cic", threads=1, rho=None):
    """Deposit the flux ``rho v = sum (p/m) dV_xi W`` and derive ``v``.

    ``v = rho v / rho`` where ``rho`` exceeds ``1e-12 * mean(rho)``; elsewhere
    ``v = 0`` and the node is flagged in ``vacuum``.
    """
    x = _flat_positions(fmap)
    stencil = kernel_stencil(grid, x, kernel)
    if rho is None:
        w = fmap.weights().ravel()
        rho = GridField(grid, scatter(grid, x, w, kernel, threads, stencil) / grid.cell_volume,
                        "number/volume")
    q = fmap.momenta.reshape(-1, fmap.dim) * fmap.lattice.cell_volume / fmap.mass
    rho_v = scatter(grid, x, q, kernel, threads, stencil) / grid.cell_volume
    v, vacuum = velocity_from_flux(rho.values, rho_v)
    return MomentumDeposit(GridField(grid, rho_v, "number*length/(volume*time)"),
                           GridField(grid, v, "length/time"), vacuum, rho)


def velocity_from_flux(rho, rho_v):
    floor = VACUUM_FRACTION * float(np.mean(rho))
    vacuum = ~(rho > floor)
    safe = np.where(vacuum, 1.0, rho)
    v = np.where(vacuum[..., None], 0.0, rho_v / safe[..., None])
    return v, vacuum


def continuity_residual(rho_series, v, dt):
    """``d rho/dt + div(rho v)`` at the middle snapshot.

    ``rho_series`` holds the densities at ``t - dt``, ``t``, ``t + dt`` and
    ``v`` the velocity at ``t``.  Returns ``(L2 norm, residual field)``.
    """
    r_m, r_0, r_p = rho_series
    grid = check_same_grid(r_m, r_0, r_p, v)
    res = (r_p.values - r_m.values) / (2.0 * dt) + divergence(grid, r_0.values[..., None] * v.values)
    return l2_norm(grid, res), GridField(grid, res, "number/(volume*time)")


def euler_residual(v_series, rho, p, dt):
    """``rho (dv/dt + (v . grad) v) + grad p`` at the middle snapshot.

    ``p`` is the barotropic pressure ``(rho^2/m) d(V/rho)/d rho`` evaluated on
    the grid density (``p = 0`` for free flow).  Returns ``(L2 norm, field)``.
    """
    v_m, v_0, v_p = v_series
    grid = check_same_grid(v_m, v_0, v_p, rho, p)
    vt = (v_p.values - v_m.values) / (2.0 * dt)
    v = v_0.values
    adv = sum(v[..., a, None] * diff(grid, v, a) for a in range(grid.dim))
    gp = np.stack([diff(grid, p.values, a) for a in range(grid.dim)], axis=-1)
    res = rho.values[..., None] * (vt + adv) + gp
    return l2_norm(grid, res), GridField(grid, res, "force/volume")
