"""Scenario execution: initial-condition presets, diagnostics tables, gates, artifacts.

Outputs are written with fixed float formatting and sorted keys, so the same
scenario, seed and thread count reproduce every artifact byte for byte.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import c2, dynamics, gravity, invariants, io, plasma
from .errors import ConfigError, ConstructionError
from .grid import Grid
from .lattice import build_lattice, deformation_field
from .scenario import Scenario, load_scenario

EXIT_OK, EXIT_GATE, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3


@dataclass
class RunResult:
    status: int
    out_dir: Path
    artifacts: list = field(default_factory=list)
    gates: list = field(default_factory=list)


# -- configuration helpers ------------------------------------------------

def make_potential(cfg):
    if cfg is None or cfg.kind == "zero":
        return dynamics.ZeroPotential()
    if cfg.kind == "sound":
        return dynamics.SoundPotential(cfg.kappa, cfg.rho_ref, cfg.rho_as)
    if cfg.kind == "polytropic":
        return dynamics.PolytropicPotential(cfg.K, cfg.gamma)
    return dynamics.QuadraticPotential(cfg.a)


def make_force(sc):
    if sc.force.kind == "free":
        return dynamics.Free()
    return dynamics.Barotropic(make_potential(sc.force.potential), sc.force.dispersion)


def _param(params, key, default):
    val = params.get(key, default)
    return val


def _noise(sc, shape, scale):
    amp = float(sc.initial.params.get("noise", 0.0))
    if not amp:
        return 0.0
    rng = np.random.default_rng(sc.seed)
    return amp * scale * rng.standard_normal(shape)


def _label_setup(sc):
    geo = sc.geometry
    return geo.dim, [tuple(e) for e in geo.extents], tuple(geo.shape), geo.boundary


def fluid_initial(sc):
    """Flow map for the ``fluid`` presets: uniform, expansion, sound-wave, vortex, beltrami."""
    dim, ext, shape, boundary = _label_setup(sc)
    p = sc.initial.params
    tag = sc.initial.tag
    lo = np.array([e[0] for e in ext])
    L = np.array([e[1] - e[0] for e in ext])
    rho0 = float(_param(p, "rho0", 1.0))
    h = float(np.min(L / np.array(shape)))
    noise = _noise(sc, shape + (dim,), h)

    def frac(X):
        return (X - lo) / L

    if tag == "uniform":
        vel = np.asarray(_param(p, "velocity", [0.0] * dim), dtype=float)
        x0, v0 = (lambda X: X + noise), (lambda X: np.broadcast_to(vel, X.shape))
    elif tag == "expansion":
        rate = float(_param(p, "rate", 0.1))
        c = lo + 0.5 * L
        x0, v0 = (lambda X: X + noise), (lambda X: rate * (X - c))
    elif tag == "sound-wave":
        amp = float(_param(p, "amplitude", 1e-3))
        mode = int(_param(p, "mode", 1))
        k = 2.0 * np.pi * mode / L[0]
        V = make_potential(sc.force.potential)
        c_s = float(np.sqrt(V.dpressure(np.array(rho0), sc.mass)))
        trav = float(_param(p, "traveling", 1.0))

        def x0(X):
            out = X + noise
            out[..., 0] = out[..., 0] + amp / k * np.sin(k * (X[..., 0] - lo[0]))
            return out

        def v0(X):
            out = np.zeros_like(X)
            out[..., 0] = -trav * c_s * amp * np.sin(k * (X[..., 0] - lo[0]))
            return out
    elif tag == "vortex":
        if dim != 2:
            raise ConfigError("the 'vortex' preset is two-dimensional")
        amp = float(_param(p, "amplitude", 0.02))
        b = float(_param(p, "displacement", 0.0))

        def x0(X):
            return X + b * L * np.sin(2 * np.pi * frac(X)) + noise

        def v0(X):
            s = 2 * np.pi * frac(X)
            return amp * np.stack([np.sin(s[..., 0]) * np.cos(s[..., 1]),
                                   -np.cos(s[..., 0]) * np.sin(s[..., 1])], axis=-1)
    elif tag == "beltrami":
        if dim != 3:
            raise ConfigError("the 'beltrami' preset is three-dimensional")
        amp = float(_param(p, "amplitude", 0.02))
        x0 = lambda X: X + noise

        def v0(X):
            s = 2 * np.pi * frac(X)
            return amp * np.stack([np.sin(s[..., 2]) + np.cos(s[..., 1]),
                                   np.sin(s[..., 0]) + np.cos(s[..., 2]),
                                   np.sin(s[..., 1]) + np.cos(s[..., 0])], axis=-1)
    else:
        raise ConfigError(f"unknown fluid initial condition {tag!r}")
    return build_lattice(dim, ext, shape, boundary, lambda X: np.full(X.shape[:-1], rho0),
                         x0, v0, sc.mass)


def gravity_spec(sc):
    g = sc.gravity
    return gravity.GravitySpec(g.gamma, g.softening, g.solver, g.boundary)


def gravity_initial(sc):
    p = sc.initial.params
    spec = gravity_spec(sc)
    tag = sc.initial.tag
    if tag == "two-clump":
        return gravity.two_clump_state(float(_param(p, "clump_weight", 1.0)),
                                       float(_param(p, "separation", 1.0)), spec, sc.mass,
                                       int(_param(p, "dim", 3)))
    if tag == "ring":
        return gravity.ring_equilibrium(int(_param(p, "n", 16)), float(_param(p, "radius", 1.0)),
                                        float(_param(p, "ring_weight", 1.0)), spec,
                                        float(_param(p, "central_weight", 0.0)), sc.mass)
    if tag == "blob":
        if sc.geometry is None:
            raise ConfigError("the 'blob' preset needs 'geometry'")
        dim, ext, shape, boundary = _label_setup(sc)
        omega = float(_param(p, "omega", 0.0))

        def v0(X):
            out = np.zeros_like(X)
            out[..., 0], out[..., 1] = -omega * X[..., 1], omega * X[..., 0]
            return out
        return build_lattice(dim, ext, shape, boundary, None, None, v0, sc.mass)
    raise ConfigError(f"unknown gravity initial condition {tag!r}")


def plasma_initial(sc):
    dim, ext, shape, boundary = _label_setup(sc)
    if boundary != "periodic":
        raise ConfigError("plasma scenarios use periodic geometry")
    p = sc.initial.params
    cfg = sc.plasma
    lo = np.array([e[0] for e in ext])
    L = np.array([e[1] - e[0] for e in ext])
    tag = sc.initial.tag
    if tag == "langmuir":
        amp = float(_param(p, "amplitude", 0.01))
        k = 2 * np.pi * int(_param(p, "mode", 1)) / L[0]

        def x0(X):
            out = X.copy()
            out[..., 0] += amp / k * np.sin(k * (X[..., 0] - lo[0]))
            return out
        el = build_lattice(dim, ext, shape, boundary, None, x0, None, sc.mass)
        ion = plasma.uniform_ions(el, cfg.ion_mass)
    elif tag == "vortex":
        if dim != 2:
            raise ConfigError("the plasma 'vortex' preset is two-dimensional")
        amp = float(_param(p, "amplitude", 0.02))
        b = float(_param(p, "displacement", 0.0))

        def v0(X):
            s = 2 * np.pi * (X - lo) / L
            return amp * np.stack([np.sin(s[..., 0]) * np.cos(s[..., 1]),
                                   -np.cos(s[..., 0]) * np.sin(s[..., 1])], axis=-1)
        el = build_lattice(dim, ext, shape, boundary, None,
                           lambda X: X + b * L * np.sin(2 * np.pi * (X - lo) / L), v0, sc.mass)
        ion = build_lattice(dim, ext, shape, boundary, None, None, v0, cfg.ion_mass)
    else:
        raise ConfigError(f"unknown plasma initial condition {tag!r}")
    grid = Grid.matching(el.lattice)
    solver = plasma.FieldSolver("spectral", grid, cfg.kernel, 0.0, cfg.scheme)
    return plasma.PlasmaState(el, ion, cfg.e, solver, cfg.mobile_ions)


def c2_initial(sc):
    dim, ext, shape, boundary = _label_setup(sc)
    grid = Grid(dim, ext, shape, "periodic" if boundary == "periodic" else "clamped")
    p = sc.initial.params
    if sc.initial.tag == "hopf":
        d = c2.hopf_configuration(grid, int(_param(p, "degree", 1)))
        return c2.ClebschDoublet(grid, d.u, sc.mass)
    if sc.initial.tag != "waves":
        raise ConfigError(f"unknown c2 initial condition {sc.initial.tag!r}")
    amp = float(_param(p, "amplitude", 0.1))
    X = (grid.nodes() - grid.lower) / grid.lengths
    s = 2 * np.pi * X
    c0 = np.cos(s[..., 0])
    s1 = np.sin(s[..., 1]) if dim > 1 else np.zeros(grid.shape)
    rho = 1.0 + amp * np.sin(s[..., 0]) * (np.cos(s[..., 1]) if dim > 1 else 1.0)
    phi = 0.2 * amp * s1 + 0.1 * amp * c0
    psi = 0.3 * amp * np.sin(s.sum(axis=-1))
    alpha = 1.0 + 3.0 * amp * c0
    return c2.doublet_from_angles(grid, rho, phi, psi, alpha, sc.mass)


# -- diagnostics ----------------------------------------------------------

UNITS = {"time": "time", "energy": "energy", "kinetic": "energy", "potential": "energy",
         "hamiltonian": "energy", "coulomb": "energy", "circulation": "length^2/time",
         "virial": "1", "mass": "number", "min_det": "1"}


def _unit(name):
    if name.startswith("momentum_"):
        return "mass*length/time"
    if name.startswith("charge_"):
        return "number"
    return UNITS.get(name, "1")


class Recorder:
    def __init__(self, names):
        self.names = ["time"] + list(names)
        self.rows = []

    def add(self, values):
        self.rows.append([values[n] for n in self.names])

    def columns(self):
        data = np.array(self.rows, dtype=float).reshape(len(self.rows), len(self.names))
        return {f"{n}[{_unit(n)}]": data[:, j] for j, n in enumerate(self.names)}

    def series(self, name):
        j = self.names.index(name)
        return np.array([r[j] for r in self.rows], dtype=float)


def _expand(names, dim):
    out = []
    for n in names:
        if n == "momentum":
            out.extend(f"momentum_{a}" for a in range(dim))
        elif n == "charges":
            out.extend(f"charge_{a}" for a in range(4))
        else:
            out.append(n)
    return out


def _check_names(names, allowed, module):
    bad = [n for n in names if n not in allowed]
    if bad:
        raise ConfigError(f"diagnostics {bad} are not available for module {module!r}; "
                          f"choose from {sorted(allowed)}")


def _loop(sc):
    lc = sc.diagnostics.loop
    return None if lc is None else invariants.MaterialLoop.circle(lc.center, lc.radius, lc.markers)


def _run_fluid(sc, threads):
    fmap = fluid_initial(sc)
    model = make_force(sc)
    names = sc.diagnostics.names
    _check_names(names, {"energy", "momentum", "circulation", "min_det", "mass"}, "fluid")
    loop = _loop(sc)
    if "circulation" in names and loop is None:
        raise ConfigError("the circulation diagnostic needs 'diagnostics.loop'")
    rec = Recorder(_expand(names, fmap.dim))

    def observe(state, n):
        vals = {"time": state.time}
        if "energy" in names:
            vals["energy"] = dynamics.total_energy(state, model)
        if "momentum" in names:
            for a, pa in enumerate(state.total_momentum()):
                vals[f"momentum_{a}"] = pa
        if "circulation" in names:
            vals["circulation"] = invariants.circulation(state, loop)
        if "min_det" in names:
            vals["min_det"] = float(np.min(np.linalg.det(deformation_field(state))))
        if "mass" in names:
            vals["mass"] = float(np.sum(state.weights()))
        rec.add(vals)

    ic = sc.integrator
    spec = dynamics.IntegratorSpec(ic.dt, ic.steps, ic.scheme)
    traj = dynamics.integrate(fmap, model, spec,
                              [dynamics.Observer(observe, sc.diagnostics.cadence)])
    return rec, traj[-1]


def _run_gravity(sc, threads):
    state = gravity_initial(sc)
    spec = gravity_spec(sc)
    names = sc.diagnostics.names
    _check_names(names, {"energy", "kinetic", "potential", "momentum", "virial"}, "gravity")
    dim = state.dim
    rec = Recorder(_expand(names, dim))

    def observe(s, n):
        ps, _ = gravity._as_particles(s)
        vals = {"time": ps.time}
        T = ps.kinetic_energy()
        U = gravity.potential_energy(s, spec, threads)
        vals.update(energy=T + U, kinetic=T, potential=U)
        if "momentum" in names:
            for a, pa in enumerate(ps.total_momentum()):
                vals[f"momentum_{a}"] = pa
        if "virial" in names:
            vals["virial"] = gravity.virial_residual(s, spec, threads=threads).relative
        rec.add(vals)

    ic = sc.integrator
    final = gravity.gravity_integrate(state, spec, ic.dt, ic.steps, observe,
                                      sc.diagnostics.cadence, threads)
    return rec, final


def _run_plasma(sc, threads):
    state = plasma_initial(sc)
    V_el = make_potential(sc.force.potential) if sc.force.kind == "barotropic" else None
    V_ion = make_potential(sc.plasma.ion_potential) if sc.plasma.ion_potential else None
    names = sc.diagnostics.names
    _check_names(names, {"hamiltonian", "coulomb", "momentum", "circulation"}, "plasma")
    loop = _loop(sc)
    if "circulation" in names and loop is None:
        raise ConfigError("the circulation diagnostic needs 'diagnostics.loop'")
    rec = Recorder(_expand(names, state.electrons.dim))

    def observe(s, n):
        en = plasma.plasma_energy(s, V_el, V_ion)
        vals = {"time": s.time, "hamiltonian": en.total, "coulomb": en.coulomb}
        if "momentum" in names:
            for a, pa in enumerate(s.total_momentum()):
                vals[f"momentum_{a}"] = pa
        if "circulation" in names:
            vals["circulation"] = plasma.total_circulation(s, loop, loop)
        rec.add(vals)

    ic = sc.integrator
    final = plasma.plasma_integrate(state, ic.dt, ic.steps, V_el, V_ion, observe,
                                    sc.diagnostics.cadence)
    return rec, final


def _run_c2(sc, threads):
    d = c2_initial(sc)
    V = make_potential(sc.force.potential)
    names = sc.diagnostics.names
    _check_names(names, {"hamiltonian", "charges", "mass"}, "c2")
    rec = Recorder(_expand(names, d.grid.dim))
    dt = sc.integrator.dt

    def observe(s, n):
        vals = {"time": n * dt, "hamiltonian": c2.c2_hamiltonian(s, V)}
        q = c2.u2_charges(s)
        for a in range(4):
            vals[f"charge_{a}"] = q[a]
        vals["mass"] = 2.0 * q[0]
        rec.add(vals)

    final = c2.c2_integrate(d, V, dt, sc.integrator.steps, observe, sc.diagnostics.cadence)
    return rec, final


def _profile(sc):
    pc = sc.profile
    if pc.csv is not None:
        return io.read_radial_profile(pc.csv, pc.column)
    r = np.linspace(0.0, pc.r_max, pc.nodes)
    if pc.kind == "constant":
        return gravity.RadialProfile(r, np.full_like(r, pc.rho_c))
    return gravity.RadialProfile(r, pc.rho_c * np.exp(-r * r / (2 * pc.sigma ** 2)))


def _closed_form(sc, r):
    pc = sc.profile
    if pc.csv is not None:
        return None
    sigma = None if pc.kind == "constant" else pc.sigma
    return gravity.tornado_closed_form(r, pc.rho_c, sc.gravity.gamma, sc.mass, sigma)


# -- gates and artifacts --------------------------------------------------

def _drift(series):
    s = np.asarray(series, dtype=float)
    ref = abs(s[0])
    dev = float(np.max(np.abs(s - s[0])))
    return dev / ref if ref > 0 else dev


def evaluate_gates(sc, rec=None, extra=None):
    """Gate value per configured name: relative drift of a diagnostics column,
    or a scalar from ``extra``.  A gate passes when ``value <= tolerance``."""
    out = []
    extra = extra or {}
    for name in sorted(sc.gates):
        tol = sc.gates[name]
        if name in extra:
            val = float(extra[name])
        elif rec is not None and name in rec.names:
            val = _drift(rec.series(name))
        else:
            raise ConfigError(f"gate {name!r} does not match any diagnostic")
        out.append({"name": name, "value": val, "tolerance": tol, "pass": bool(val <= tol)})
    return out


def _save_snapshot(sc, state, out):
    kind = sc.output.snapshot
    if kind == "none":
        return []
    if isinstance(state, c2.ClebschDoublet):
        path = out / ("final_doublet.csv" if kind == "csv" else "final_doublet.bin")
        (io.write_doublet_csv if kind == "csv" else io.write_doublet_binary)(state, path)
        return [path]
    if isinstance(state, plasma.PlasmaState):
        maps = [("electrons", state.electrons), ("ions", state.ions)]
    elif isinstance(state, gravity.ParticleSet):
        cols = {f"x_{a}[length]": state.positions[:, a] for a in range(state.dim)}
        cols.update({f"v_{a}[length/time]": state.velocities[:, a] for a in range(state.dim)})
        cols["weight[number]"] = state.weights
        path = out / "final_particles.csv"
        io.write_table(path, cols)
        return [path]
    else:
        maps = [("flowmap", state)]
    paths = []
    for label, fmap in maps:
        path = out / f"final_{label}.{'csv' if kind == 'csv' else 'bin'}"
        (io.write_snapshot_csv if kind == "csv" else io.write_snapshot_binary)(fmap, path)
        paths.append(path)
    return paths


def _write_summary(sc, out, status, gates, artifacts, extra=None):
    summary = {"name": sc.name, "module": sc.module, "status": status, "gates": gates,
               "artifacts": sorted(p.name for p in artifacts)}
    if extra:
        summary["results"] = {k: float(v) for k, v in sorted(extra.items())}
    path = out / "summary.json"
    path.write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return path


def _run_static(sc, out):
    rho = _profile(sc)
    v = gravity.tornado_profile(rho, sc.gravity.gamma, sc.mass, sc.profile.quadrature)
    cols = {"r[length]": rho.r, "rho[number/volume]": rho.values, "v[length/time]": v.values}
    extra = {}
    closed = _closed_form(sc, rho.r)
    if closed is not None:
        cols["v_closed[length/time]"] = closed
        extra["closed_form"] = float(np.max(np.abs(v.values - closed)))
    path = io.write_table(out / "profile.csv", cols)
    arts = [path]
    if sc.output.figures:
        from .plotting import plot_profile
        arts.append(plot_profile(rho.r, {"v": v.values, **({"closed form": closed} if closed is not None else {})},
                                 out / "profile.png", ylabel="v(r)"))
    return arts, extra


def _run_bound(sc, out):
    rho_p = _profile(sc)
    b = sc.bound
    spec = gravity.GravitySpec(sc.gravity.gamma, 0.0)
    v_p = gravity.tornado_profile(rho_p, spec.gamma, sc.mass, sc.profile.quadrature)
    grid = gravity.column_grid(b.grid, b.half_width, b.height, b.nz)
    rho, v = gravity.embed_tornado(rho_p, v_p, grid)
    mask = gravity.cylinder_mask(grid, b.radius)
    trials = gravity.random_trial_functions(grid, b.trials, sc.seed, b.radius, b.modes)
    ratios, margins, J, Jb = [], [], [], []
    for f in trials:
        ratios.append(gravity.energy_bound_ratio(rho, v, f, spec, sc.mass, mask))
        lc = gravity.ladyzhenskaya_check(f, rho)
        margins.append(lc.margin)
        J.append(lc.J)
        Jb.append(lc.J_bound)
    sat = gravity.column_trial_potential(rho_p, grid, b.radius, sc.profile.quadrature)
    sat_ratio = gravity.energy_bound_ratio(rho, v, sat, spec, sc.mass, mask)
    res = gravity.static_residuals(rho, v, spec, sc.mass, mask)
    cols = {"trial[index]": np.arange(len(trials)), "ratio[1]": ratios,
            "ladyzhenskaya_margin[1]": margins, "J[1]": J, "J_bound[1]": Jb}
    arts = [io.write_table(out / "bound.csv", cols)]
    e_static = gravity.static_energy_from_velocity(v, spec, sc.mass, mask)
    extra = {"bound": max(0.0, 1.0 - min(ratios)), "saturation": abs(sat_ratio - 1.0),
             "ladyzhenskaya": max(0.0, -min(margins)), "e_static": e_static,
             "residual_divergence": res.divergence, "residual_continuity": res.continuity,
             "residual_curl": res.curl, "min_ratio": min(ratios), "saturation_ratio": sat_ratio}
    if sc.output.figures:
        from .plotting import plot_ratios
        arts.append(plot_ratios(ratios, sat_ratio, out / "bound.png"))
    return arts, extra


RUNNERS = {"fluid": _run_fluid, "gravity": _run_gravity, "plasma": _run_plasma, "c2": _run_c2}


def run_scenario(scenario, out_dir=None, threads=None, seed=None):
    """Run a scenario (path or :class:`Scenario`) and write its artifacts.

    Returns a :class:`RunResult` whose ``status`` is 0 (ok) or 1 (a gate
    failed).  Configuration problems raise :class:`ConfigError`; numerical
    failures propagate, with the artifacts written so far kept on disk.
    """
    sc = scenario if isinstance(scenario, Scenario) else load_scenario(scenario)
    if seed is not None:
        sc = sc.model_copy(update={"seed": int(seed)})
    threads = sc.threads if threads is None else int(threads)
    out = Path(out_dir if out_dir is not None else sc.output.dir)
    out.mkdir(parents=True, exist_ok=True)
    artifacts, extra, rec = [], {}, None
    if sc.module in RUNNERS:
        rec, final = RUNNERS[sc.module](sc, threads)
        path = io.write_table(out / "diagnostics.csv", rec.columns())
        artifacts.append(path)
        artifacts.extend(_save_snapshot(sc, final, out))
        if sc.output.figures:
            from .plotting import plot_diagnostics
            artifacts.append(plot_diagnostics(path, out / "diagnostics.png"))
    elif sc.module == "static-solve":
        artifacts, extra = _run_static(sc, out)
    else:
        artifacts, extra = _run_bound(sc, out)
    gates = evaluate_gates(sc, rec, extra)
    status = EXIT_OK if all(g["pass"] for g in gates) else EXIT_GATE
    artifacts.append(_write_summary(sc, out, status, gates, artifacts, extra))
    return RunResult(status, out, artifacts, gates)


def diagnose_snapshot(path, out_path, model=None):
    """One-row diagnostics table for a saved flow map."""
    fmap = io.read_snapshot(path)
    model = model or dynamics.Free()
    A = deformation_field(fmap)
    det = np.linalg.det(A)
    if not np.all(det > 0):
        raise ConstructionError("snapshot map is folded")
    cols = {"time[time]": [fmap.time],
            "energy[energy]": [dynamics.total_energy(fmap, model)],
            "mass[number]": [float(np.sum(fmap.weights()))],
            "min_det[1]": [float(np.min(det))], "max_det[1]": [float(np.max(det))]}
    for a, pa in enumerate(fmap.total_momentum()):
        cols[f"momentum_{a}[mass*length/time]"] = [pa]
    return io.write_table(out_path, cols)
