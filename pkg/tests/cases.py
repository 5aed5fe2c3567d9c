"""Reference runs shared by the acceptance gates and a few module tests.

Each function returns plain numbers; results are cached so that criteria
sharing a run (circulation, vorticity and Casimirs) pay for it once.
"""
from functools import lru_cache

import numpy as np

from lagmedia import c2, gravity, invariants, plasma
from lagmedia.deposition import (continuity_residual, deposit_density, deposit_momentum,
                                 euler_residual)
from lagmedia.dynamics import (Barotropic, IntegratorSpec, Observer, SoundPotential,
                               integrate, pressure_of_density, step_free, total_energy)
from lagmedia.grid import Grid, GridField
from lagmedia.lattice import build_lattice

TP = 2 * np.pi
SOUND = SoundPotential(1.0, 1.0, 1.0)


def orders(errors):
    e = np.asarray(errors, dtype=float)
    return np.log2(e[:-1] / e[1:])


# -- residual convergence -------------------------------------------------

def expansion_residual(n, t0=0.3, sigma=0.1):
    """Continuity residual of a free-streaming Gaussian blob, ``v0 = (xi - 1/2)/2``."""
    g = Grid(1, [(-0.5, 1.5)], n, "clamped")
    f = build_lattice(1, [0, 1], n * n, "fixed-wall",
                      rho0_fn=lambda xi: np.exp(-(xi[..., 0] - 0.5) ** 2 / (2 * sigma ** 2)),
                      v0_fn=lambda xi: 0.5 * (xi - 0.5))
    dt = 0.5 * g.spacing[0]
    snaps = [step_free(f, t) for t in (t0 - dt, t0, t0 + dt)]
    rhos = [deposit_density(s, g, "tsc") for s in snaps]
    v = deposit_momentum(snaps[1], g, "tsc", rho=rhos[1]).v
    return continuity_residual(rhos, v, dt)[0]


def expansion_euler_residual(n, t0=0.3, sigma=0.1):
    g = Grid(1, [(-0.5, 1.5)], n, "clamped")
    f = build_lattice(1, [0, 1], n * n, "fixed-wall",
                      rho0_fn=lambda xi: np.exp(-(xi[..., 0] - 0.5) ** 2 / (2 * sigma ** 2)),
                      v0_fn=lambda xi: 0.5 * (xi - 0.5))
    dt = 0.5 * g.spacing[0]
    snaps = [step_free(f, t) for t in (t0 - dt, t0, t0 + dt)]
    deps = [deposit_momentum(s, g, "tsc") for s in snaps]
    # only nodes well inside the blob carry a meaningful velocity
    rho = deps[1].rho
    mask = rho.values > 1e-3 * rho.values.max()
    p = GridField(g, np.zeros(g.shape))
    _, res = euler_residual([d.v for d in deps], rho, p, dt)
    return float(np.sqrt(np.sum(res.values[mask] ** 2) * g.cell_volume))


@lru_cache(maxsize=None)
def sound_wave_residuals(n, amp=0.01, T=1 / 16, ny=2):
    """Continuity and Euler residuals of a barotropic plane sound wave in 2D.

    Labels are ``n^2`` per axis along the wave (TSC aliasing floor below the
    grid error) and aligned with grid rows across it.
    """
    g = Grid(2, [(0, 1), (0, 1)], (n, ny))
    nl = n * n
    f = build_lattice(
        2, [(0, 1), (0, 1)], (nl, ny),
        x0_fn=lambda xi: xi + np.stack([amp / TP * np.sin(TP * xi[..., 0]), 0 * xi[..., 0]], -1),
        v0_fn=lambda xi: np.stack([amp * np.sin(TP * xi[..., 0]), 0 * xi[..., 0]], -1))
    dres = 0.5 * g.spacing[0]
    sub = int(np.ceil(dres * nl))
    nblocks = int(round(T / dres))
    snaps = {}

    def keep(s, k):
        if k % sub == 0 and k // sub >= nblocks - 2:
            snaps[k // sub] = s

    integrate(f, Barotropic(SOUND), IntegratorSpec(dres / sub, nblocks * sub), [Observer(keep)])
    s = [snaps[nblocks - 2], snaps[nblocks - 1], snaps[nblocks]]
    rhos = [deposit_density(x, g, "tsc") for x in s]
    deps = [deposit_momentum(x, g, "tsc", rho=r) for x, r in zip(s, rhos)]
    cont = continuity_residual(rhos, deps[1].v, dres)[0]
    p = GridField(g, pressure_of_density(rhos[1].values, SOUND, 1.0))
    eul = euler_residual([d.v for d in deps], rhos[1], p, dres)[0]
    return cont, eul


# -- 2D barotropic vortex -------------------------------------------------

def vortex_map(n, a=0.02, b=0.002):
    def v0(xi):
        x, y = TP * xi[..., 0], TP * xi[..., 1]
        return np.stack([a * np.sin(x) * np.cos(y), -a * np.cos(x) * np.sin(y)], -1)

    def x0(xi):
        return xi + b * np.stack([np.sin(TP * xi[..., 1]), np.sin(TP * xi[..., 0])], -1)

    return build_lattice(2, [(0, 1), (0, 1)], (n, n), x0_fn=x0, v0_fn=v0)


@lru_cache(maxsize=None)
def vortex_run(n=64, steps=1000, markers=64):
    """Circulation, vorticity, Casimir and energy drifts of a barotropic vortex run."""
    f = vortex_map(n)
    model = Barotropic(SOUND)
    loop = invariants.MaterialLoop.circle((0.25, 0.25), 0.15, markers)
    grid = Grid(2, [(0, 1), (0, 1)], (32, 32))
    T0 = invariants.circulation(f, loop)
    R0 = invariants.vorticity_vector(f)
    rho, v = invariants.sample_fields(f, grid)
    I0 = [invariants.casimir_In(rho, v, k) for k in (1, 2, 3)]
    S0 = [invariants.casimir_scale(rho, v, k) for k in (1, 2, 3)]
    E0 = total_energy(f, model)
    f1 = integrate(f, model, IntegratorSpec(0.2 / n, steps))[-1]
    rho, v = invariants.sample_fields(f1, grid)
    I1 = [invariants.casimir_In(rho, v, k) for k in (1, 2, 3)]
    R1 = invariants.vorticity_vector(f1)
    return {
        "circulation": abs(invariants.circulation(f1, loop) - T0) / abs(T0),
        "vorticity": float(np.max(np.abs(R1 - R0)) / np.max(np.abs(R0))),
        "casimir": [abs(a - b) / s for a, b, s in zip(I0, I1, S0)],
        "energy": abs(total_energy(f1, model) - E0) / abs(E0),
    }


def free_vorticity_drift(n=48, time=0.3):
    """Pointwise drift of the label vorticity under exact free streaming (uniform rho0)."""
    def v0(xi):
        x, y = TP * xi[..., 0], TP * xi[..., 1]
        return 0.05 * np.stack([np.sin(y) + 0.3 * np.cos(x + y), np.sin(x) - 0.2 * np.cos(y)], -1)

    f = build_lattice(2, [(0, 1), (0, 1)], (n, n), v0_fn=v0)
    R0 = invariants.vorticity_vector(f)
    R1 = invariants.vorticity_vector(step_free(f, time))
    return float(np.max(np.abs(R1 - R0)))


@lru_cache(maxsize=None)
def beltrami_helicity_drift(n=24, steps=300, a=0.02):
    def v0(xi):
        x, y, z = (TP * xi[..., i] for i in range(3))
        return a * np.stack([np.sin(z) + np.cos(y), np.sin(x) + np.cos(z), np.sin(y) + np.cos(x)], -1)

    f = build_lattice(3, [(0, 1)] * 3, (n,) * 3, v0_fn=v0)
    g = Grid(3, [(0, 1)] * 3, (n,) * 3)
    Q0 = invariants.helicity(invariants.sample_fields(f, g)[1])
    f1 = integrate(f, Barotropic(SOUND), IntegratorSpec(0.2 / n, steps))[-1]
    Q1 = invariants.helicity(invariants.sample_fields(f1, g)[1])
    return abs(Q1 - Q0) / abs(Q0)


def k_integral_drift(n=16, time=0.3):
    """Relative drift of the second-order K integrals in 3D free flow."""
    def v0(xi):
        x, y, z = (TP * xi[..., i] for i in range(3))
        return 0.05 * np.stack([np.sin(z) + np.cos(y), np.sin(x) + np.cos(z), np.sin(y) + np.cos(x)], -1)

    f = build_lattice(3, [(0, 1)] * 3, (n,) * 3, v0_fn=v0)
    K0 = invariants.k_integrals(f, 2)
    K1 = invariants.k_integrals(step_free(f, time), 2)
    return float(np.max(np.abs(K1 - K0)) / np.max(np.abs(K0)))


def random_smooth_map(dim, n, seed, amp=0.03, modes=3):
    rng = np.random.default_rng(seed)
    coef = rng.normal(size=(modes, dim, dim)) * amp / modes
    ph = rng.uniform(0, TP, (modes, dim, dim))

    def x0(xi):
        d = np.zeros_like(xi)
        for k in range(modes):
            for j in range(dim):
                for l in range(dim):
                    d[..., j] += coef[k, j, l] * np.sin(TP * (k + 1) * xi[..., l] + ph[k, j, l])
        return xi + d

    def v0(xi):
        return np.sin(TP * xi[..., ::-1])

    return build_lattice(dim, [(0, 1)] * dim, (n,) * dim, x0_fn=x0, v0_fn=v0)


def canonical_residuals(dim, n, gn, seed):
    f = random_smooth_map(dim, n, seed)
    cf = invariants.canonical_fields(f, Grid(dim, [(0, 1)] * dim, (gn,) * dim))
    return cf.reconstruction_residual(), cf.metric_residual()


# -- C2 doublets ----------------------------------------------------------

def gentle_doublet(n, seed=None):
    g = Grid(2, [(0, 1), (0, 1)], (n, n))
    x = g.nodes()
    X, Y = TP * x[..., 0], TP * x[..., 1]
    if seed is None:
        c = np.array([0.1, 0.02, 0.01, 0.03, 0.3])
    else:
        c = np.random.default_rng(seed).uniform(0.5, 1.5, 5) * [0.1, 0.02, 0.01, 0.03, 0.3]
    rho = 1 + c[0] * np.sin(X) * np.cos(Y)
    phi = c[1] * np.sin(Y) + c[2] * np.cos(X)
    psi = c[3] * np.sin(X + Y)
    alpha = 1.0 + c[4] * np.cos(X)
    return c2.doublet_from_angles(g, rho, phi, psi, alpha)


def random_doublet(n, seed):
    """Smooth random doublet from a few Fourier modes per component."""
    rng = np.random.default_rng(seed)
    g = Grid(2, [(0, 1), (0, 1)], (n, n))
    x = g.nodes()
    u = np.zeros(g.shape + (2,), dtype=complex)
    u[..., 0] = 1.0
    for _ in range(4):
        k = rng.integers(-2, 3, size=2)
        amp = (rng.normal(size=2) + 1j * rng.normal(size=2)) * 0.1
        u += amp * np.exp(1j * TP * (x @ k))[..., None]
    return c2.ClebschDoublet(g, u)


def c2_continuity_residual(n, T=0.2):
    d = gentle_doublet(n)
    dt = 0.25 / n
    steps = int(round(T / dt))
    d = c2.c2_integrate(d, SOUND, dt, steps - 1)
    s = [d, c2.c2_step(d, SOUND, dt)]
    s.append(c2.c2_step(s[-1], SOUND, dt))
    pr = [c2.project_euler(x) for x in s]
    return continuity_residual([p[0] for p in pr], pr[1][1], dt)[0]


def c2_charge_drift(n=32, dt=0.002, steps=500):
    d = gentle_doublet(n)
    q0 = c2.u2_charges(d)
    q1 = c2.u2_charges(c2.c2_integrate(d, SOUND, dt, steps))
    return float(np.max(np.abs(q1 - q0)) / abs(q0[0]))


def hopf_degree(n, degree=1):
    g = Grid(3, [(-1, 1)] * 3, (n,) * 3)
    return c2.hopf_invariant(c2.hopf_configuration(g, degree))


# -- gravity --------------------------------------------------------------

@lru_cache(maxsize=None)
def kepler_run(per_period=1000, periods=1.5):
    spec = gravity.GravitySpec(1.0, 0.0)
    state = gravity.two_clump_state(1.0, 1.0, spec)
    T = gravity.kepler_period(1.0, 1.0)
    dt = T / per_period
    times, seps, energies = [], [], []

    def obs(s, n):
        times.append(s.time)
        seps.append(s.positions[1] - s.positions[0])
        energies.append(gravity.total_energy(s, spec))

    gravity.gravity_integrate(state, spec, dt, int(periods * per_period), obs)
    period = gravity.orbital_period(np.array(times), np.array(seps))
    vir = gravity.virial_residual(state, spec).relative
    e = np.array(energies)
    return {"period_error": abs(period - T) / T, "virial": vir,
            "energy_drift": float(np.max(np.abs(e - e[0])) / abs(e[0]))}


def ring_candidate():
    spec = gravity.GravitySpec(1.0, 0.0)
    state = gravity.ring_equilibrium(16, 1.0, 1.0, spec, central_weight=10.0)
    vir = gravity.virial_residual(state, spec)
    return vir.relative, vir.energy


def tornado_quadrature_errors(nodes=2001, r_max=5.0):
    r = np.linspace(0, r_max, nodes)
    out = {}
    for label, rho, sigma in (("constant", np.full_like(r, 0.7), None),
                              ("gaussian", 1.3 * np.exp(-r * r / (2 * 0.8 ** 2)), 0.8)):
        prof = gravity.RadialProfile(r, rho)
        v = gravity.tornado_profile(prof, 1.0, 1.0, "simpson").values
        rc = rho[0]
        exact = gravity.tornado_closed_form(r, rc, 1.0, 1.0, sigma)
        out[label] = float(np.max(np.abs(v ** 2 - exact ** 2)) / np.max(exact ** 2))
    return out


@lru_cache(maxsize=None)
def tornado_box(n, trials=32, seed=7, radius=1.8):
    spec = gravity.GravitySpec(1.0, 0.0)
    r = np.linspace(0, 3.0, 3001)
    rho_p = gravity.RadialProfile(r, np.exp(-r * r / (2 * 0.5 ** 2)))
    v_p = gravity.tornado_profile(rho_p, 1.0, 1.0, "simpson")
    grid = gravity.column_grid(n, 2.0, 1.0, 5)
    rho, v = gravity.embed_tornado(rho_p, v_p, grid)
    mask = gravity.cylinder_mask(grid, radius)
    U = gravity.column_trial_potential(rho_p, grid, radius, "simpson")
    sat = gravity.energy_bound_ratio(rho, v, U, spec, 1.0, mask)
    ratios, margins = [], []
    for f in gravity.random_trial_functions(grid, trials, seed, radius):
        ratios.append(gravity.energy_bound_ratio(rho, v, f, spec, 1.0, mask))
        margins.append(gravity.ladyzhenskaya_check(f, rho).margin)
    e_static = gravity.static_energy_from_velocity(v, spec, 1.0, mask)
    return {"saturation": sat, "ratios": np.array(ratios), "margins": np.array(margins),
            "e_static": e_static}


# -- plasma ---------------------------------------------------------------

def langmuir_state(n=64, amp=0.01):
    el = build_lattice(1, [0, 1], n,
                       x0_fn=lambda xi: xi + amp / TP * np.sin(TP * xi))
    ion = plasma.uniform_ions(el, 1836.0)
    return plasma.PlasmaState(el, ion, 1.0, mobile_ions=False)


def langmuir_frequency_error(n=64, per_period=200, periods=3.5):
    s = langmuir_state(n)
    wp = plasma.plasma_frequency(1.0, 1.0, 1.0)
    dt = TP / wp / per_period
    times, sig = [], []

    def obs(state, k):
        times.append(state.time)
        sig.append(state.electrons.displacement()[n // 4, 0])

    plasma.plasma_integrate(s, dt, int(periods * per_period), observer=obs)
    w = plasma.oscillation_frequency(np.array(times), np.array(sig))
    return abs(w - wp) / wp


def langmuir_energy_drift(n=64, per_period=2000, steps=1000):
    s = langmuir_state(n)
    dt = TP / plasma.plasma_frequency(1.0) / per_period
    H = []
    plasma.plasma_integrate(s, dt, steps, observer=lambda st, k: H.append(plasma.plasma_hamiltonian(st)))
    H = np.array(H)
    return float(np.max(np.abs(H - H[0])) / abs(H[0]))


@lru_cache(maxsize=None)
def plasma_circulation_drift(n=64, a=0.02, b=0.002, steps=1000):
    def v0(xi):
        x, y = TP * xi[..., 0], TP * xi[..., 1]
        return np.stack([a * np.sin(x) * np.cos(y), -a * np.cos(x) * np.sin(y)], -1)

    el = build_lattice(2, [(0, 1), (0, 1)], (n, n), v0_fn=v0,
                       x0_fn=lambda xi: xi + b * np.sin(TP * xi))
    ion = build_lattice(2, [(0, 1), (0, 1)], (n, n), v0_fn=v0, m=10.0)
    state = plasma.PlasmaState(el, ion, 1.0)
    loop = invariants.MaterialLoop.circle((0.25, 0.25), 0.15, 64)
    V0 = plasma.total_circulation(state, loop, loop)
    H0 = plasma.plasma_hamiltonian(state, SOUND, SOUND)
    final = plasma.plasma_integrate(state, 0.2 / n, steps, SOUND, SOUND)
    return (abs(plasma.total_circulation(final, loop, loop) - V0) / abs(V0),
            abs(plasma.plasma_hamiltonian(final, SOUND, SOUND) - H0) / abs(H0))


def shafranov_candidates():
    """Shafranov functional on decaying barotropic candidates (tornado columns)."""
    vals = []
    r = np.linspace(0, 4.0, 2001)
    V = SoundPotential(1.0, 1.0, 0.0)
    for sigma in (0.5, 0.8):
        rho_p = gravity.RadialProfile(r, np.exp(-r * r / (2 * sigma ** 2)))
        v_p = gravity.tornado_profile(rho_p, 1.0, 1.0, "simpson")
        grid = gravity.column_grid(24, 3.0, 1.0, 5)
        rho, v = gravity.embed_tornado(rho_p, v_p, grid)
        vals.append(gravity.shafranov_functional(rho, v, V, 1.0))
    return vals
