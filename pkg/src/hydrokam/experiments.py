"""Manifest-driven experiment runners and the invariant check suite.

Every experiment is a pure function of (manifest, code version): all
randomness flows from the manifest seed through labeled sub-seeds, sweep cells
are aggregated in sorted key order, and outputs are written atomically.
"""

from __future__ import annotations

import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import __version__
from .cell import (
    CellSpec,
    GroundStateConfig,
    corrector_check,
    corrector_field,
    effective_H_closed,
    effective_H_variational,
    gradient_flow_residual,
    ground_state_energy,
    heps_convergence,
    limit_hamiltonian,
    macro_assembly,
)
from .control import (
    ConstantFunctional,
    OptimizerConfig,
    action,
    adjoint_gradient,
    finite_difference_gradient,
    linear_functional,
    optimize_value,
    quasi_potential_path,
    resolvent,
    terminal_objective,
)
from .diffusion import (
    SolverConfig,
    SpaceTimeControl,
    contraction_test,
    diagnostics,
    diffusive_limit_sweep,
    eps_cauchy_increments,
    solve_controlled,
    well_prepared_flux,
)
from .functionals import (
    barH_apply,
    entropy,
    fisher,
    fisher_variational_sup,
    hamiltonian_H,
    psi_by_quadrature,
    regularized_potential,
    variational_sup_check,
)
from .manifest import ExperimentManifest, RunRecord, seed_split
from .oracles import h_minus1_sup_oracle, w1_grid_lp
from .particles import (
    KineticParams,
    default_theta,
    empirical_fields,
    hydro_sweep,
    init_ensemble,
    save_checkpoint,
    simulate,
    step_particles,
)
from .random_fields import random_control_values, random_density, random_field
from .reporting import line_figure, scatter_figure, snapshot_figure, write_csv, write_json
from .torus import (
    GridDensity,
    GridField,
    h_minus1_dist,
    h_minus1_norm,
    make_grid,
    mollify,
    uniform_density,
)


def worker_count() -> int:
    try:
        return max(1, int(os.environ.get("HYDROKAM_WORKERS", "1")))
    except ValueError:
        return 1


def _pool_map(fn, items, workers: int):
    if workers <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, items))


def build_initial(grid, spec: dict | None, rng) -> GridDensity:
    if spec is None or spec.get("kind") == "uniform":
        return uniform_density(grid)
    if spec["kind"] == "cosine":
        a, mode = spec["amplitude"], spec["mode"]
        return GridDensity(grid, 1.0 + a * np.cos(2 * np.pi * mode * grid.nodes))
    return random_density(grid, rng, modes=spec["modes"], amplitude=spec["amplitude"])


# ---------------------------------------------------------------------------
# Per-kind runners: each returns (files, summary) with files already written
# ---------------------------------------------------------------------------

def _out(outdir, name):
    return os.path.join(outdir, name)


def run_metrics(man: ExperimentManifest, outdir: str):
    p = man.params
    grid = make_grid(p["M"])
    seeds = seed_split(man.seed, [f"pair{i}" for i in range(p["pairs"])])
    rows = []
    upper_worst = lower_worst = np.inf
    const = 2.0 / np.sqrt(np.pi)
    w1s, h1s = [], []
    for i in range(p["pairs"]):
        rng = np.random.default_rng(seeds[f"pair{i}"])
        rho = random_density(grid, rng, modes=p["modes"], amplitude=p["amplitude"])
        gam = random_density(grid, rng, modes=p["modes"], amplitude=p["amplitude"])
        from .torus import w1_circle

        w1 = w1_circle(rho, gam)
        h1 = h_minus1_dist(rho, gam)
        upper_worst = min(upper_worst, h1 - w1)
        lower_worst = min(lower_worst, const * np.sqrt(w1) - h1)
        rows.append((i, w1, h1))
        w1s.append(w1)
        h1s.append(h1)
    files = [_out(outdir, "metric_pairs.csv")]
    if man.emit["csv"]:
        write_csv(files[0], ("pair", "w1", "h_minus1"), rows)
    summary = {"upper_worst_margin": upper_worst, "lower_worst_margin": lower_worst,
               "pairs": p["pairs"], "M": p["M"],
               "passed": bool(upper_worst >= -1e-9 and lower_worst >= -1e-9)}
    if man.emit["json"]:
        path = _out(outdir, "metrics_summary.json")
        write_json(path, summary)
        files.append(path)
    if man.emit["svg"]:
        path = _out(outdir, "metric_sandwich.svg")
        scatter_figure(path, w1s, h1s, "transport distance", "dual Dirichlet distance",
                       "metric sandwich on random density pairs",
                       guides={"lower: y = x": lambda v: v,
                               "upper: y = (2/sqrt(pi)) sqrt(x)": lambda v: const * np.sqrt(v)})
        files.append(path)
    return files, summary


def run_pde(man: ExperimentManifest, outdir: str):
    p = man.params
    grid = make_grid(p["M"])
    rng = np.random.default_rng(seed_split(man.seed, ["init", "control"])["init"])
    rho0 = build_initial(grid, p["initial"], rng)
    cfg = SolverConfig(eps_reg=p["eps_reg"], dt=p["dt"], M=p["M"],
                       record_every=p["record_every"])
    if p["control_blocks"] > 0:
        crng = np.random.default_rng(seed_split(man.seed, ["init", "control"])["control"])
        ctl = SpaceTimeControl(grid, p["control_blocks"],
                               random_control_values(p["control_blocks"], grid, crng,
                                                     amplitude=p["control_amplitude"]))
    else:
        ctl = SpaceTimeControl.zero(grid)
    traj = solve_controlled(rho0, ctl, p["T"], cfg)
    diag = diagnostics(traj, ctl, rho0, cfg)

    files = []
    if man.emit["csv"]:
        path = _out(outdir, "snapshots.csv")
        rows = [(t, x, s.values[i]) for t, s in zip(traj.times, traj.states)
                for i, x in enumerate(grid.nodes)]
        write_csv(path, ("t", "x", "rho"), rows)
        files.append(path)
    summary = {
        "mass_drift": float(np.max(np.abs(diag.mass - 1.0))),
        "entropy_initial": float(diag.entropy[0]),
        "entropy_final": float(diag.entropy[-1]),
        "min_rho": float(np.min(diag.min_rho)),
        "margins": {k: diag.worst(k) for k in diag.margins},
        "action": (lambda a: None if a.is_infinite else a.value)(action(traj)),
        "control_cost": ctl.cost(p["T"]),
    }
    if p["eps_sequence"]:
        incs = eps_cauchy_increments(rho0, ctl, p["T"], cfg, p["eps_sequence"])
        summary["eps_cauchy_increments"] = incs
        if man.emit["csv"]:
            path = _out(outdir, "eps_cauchy.csv")
            write_csv(path, ("eps_coarse", "eps_fine", "sup_dist"),
                      [(a, b, v) for (a, b), v in
                       zip(zip(p["eps_sequence"], p["eps_sequence"][1:]), incs)])
            files.append(path)
    if man.emit["json"]:
        path = _out(outdir, "diagnostics.json")
        write_json(path, summary)
        files.append(path)
    if man.emit["svg"]:
        path = _out(outdir, "density.svg")
        pick = np.linspace(0, len(traj.times) - 1, min(6, len(traj.times))).astype(int)
        snapshot_figure(path, grid.nodes,
                        {f"t={traj.times[i]:.4g}": traj.states[i].values for i in pick},
                        "x", "density", "density snapshots")
        files.append(path)
        path = _out(outdir, "entropy.svg")
        line_figure(path, diag.times, {"entropy": diag.entropy}, "t", "S",
                    "relative entropy along the run")
        files.append(path)
    return files, summary


def run_control(man: ExperimentManifest, outdir: str):
    p = man.params
    grid = make_grid(p["M"])
    rng = np.random.default_rng(seed_split(man.seed, ["init"])["init"])
    rho0 = build_initial(grid, p["initial"], rng)
    cfg = SolverConfig(eps_reg=p["eps_reg"], dt=p["dt"], M=p["M"], record_every=5)
    opt = OptimizerConfig(max_iters=p["max_iters"], restarts=p["restarts"],
                          seed=man.seed, n_blocks=p["n_blocks"])
    f = linear_functional(grid, GridField(grid, np.cos(2 * np.pi * grid.nodes)))

    if p["mode"] == "value":
        est = optimize_value(f, rho0, p["T"], cfg, opt)
        horizon = p["T"]
    elif p["mode"] == "resolvent":
        horizon = p["horizon_factor"] * p["alpha"]
        est = resolvent(f, p["alpha"], rho0, horizon, cfg, opt, h_sup_bound=1.0)
    else:
        rho1 = build_initial(grid, {"kind": "cosine", "amplitude": 0.2, "mode": 1,
                                    "modes": 6}, rng)
        betas = p["penalties"] or [10.0, 100.0, 1000.0]
        path_vals = quasi_potential_path(rho0, rho1, p["T"], cfg, opt, betas=betas)
        files = []
        if man.emit["csv"]:
            fp = _out(outdir, "quasi_potential.csv")
            write_csv(fp, ("beta_pen", "value", "action_estimate"),
                      [(b, e.value, -e.value) for b, e in path_vals])
            files.append(fp)
        summary = {"penalty_values": {str(b): e.value for b, e in path_vals}}
        if man.emit["json"]:
            fp = _out(outdir, "control_summary.json")
            write_json(fp, summary)
            files.append(fp)
        return files, summary

    files = []
    if man.emit["csv"]:
        fp = _out(outdir, "trace.csv")
        write_csv(fp, ("iter", "value", "grad_norm"), est.trace)
        files.append(fp)
        fp = _out(outdir, "best_control.csv")
        block_dt = horizon / est.control.times
        rows = [(b * block_dt, x, est.control.values[b, i])
                for b in range(est.control.times) for i, x in enumerate(grid.nodes)]
        write_csv(fp, ("t", "x", "eta"), rows)
        files.append(fp)
    summary = {"value": est.value, "gap": est.gap, "tail_bound": est.tail_bound,
               "converged": est.converged, "mode": p["mode"]}
    if man.emit["json"]:
        fp = _out(outdir, "control_summary.json")
        write_json(fp, summary)
        files.append(fp)
    if man.emit["svg"]:
        fp = _out(outdir, "trace.svg")
        tr = np.array(est.trace, dtype=float)
        line_figure(fp, tr[:, 0], {"value": tr[:, 1]}, "iteration", "objective",
                    "optimization trace")
        files.append(fp)
    return files, summary


def run_particles(man: ExperimentManifest, outdir: str):
    p = man.params
    grid = make_grid(p["M"])
    rng = np.random.default_rng(seed_split(man.seed, ["init"])["init"])
    rho0 = build_initial(grid, p["initial"], rng)

    if p["mode"] == "hydro_sweep":
        rows, summaries = hydro_sweep(rho0, p["eps_list"], p["N_list"], p["T"],
                                      replicas=p["replicas"], master_seed=man.seed,
                                      bandwidth=p["bandwidth"])
        stderr_of = {(s.eps, s.N): s.stderr for s in summaries}
        files = []
        if man.emit["csv"]:
            fp = _out(outdir, "hydro_sweep.csv")
            write_csv(fp, ("eps", "N", "replica", "error", "stderr"),
                      [(r.eps, r.N, r.replica, r.error, stderr_of[(r.eps, r.N)])
                       for r in rows])
            files.append(fp)
        summary = {"cells": [{"eps": s.eps, "N": s.N, "mean_error": s.mean_error,
                              "stderr": s.stderr} for s in summaries]}
        if man.emit["json"]:
            fp = _out(outdir, "hydro_summary.json")
            write_json(fp, summary)
            files.append(fp)
        if man.emit["svg"]:
            fp = _out(outdir, "hydro_errors.svg")
            line_figure(fp, [s.eps for s in summaries],
                        {"mean error": [s.mean_error for s in summaries]},
                        "eps", "dual-norm error", "hydrodynamic sweep",
                        logx=True, logy=True)
            files.append(fp)
        return files, summary

    eps = p["eps"]
    params = KineticParams(c=1.0 / eps, k=1.0 / eps**2,
                           tau=p["tau"] if p["tau"] is not None else eps,
                           theta=p["theta"] if p["theta"] is not None else default_theta(p["N"]),
                           N=p["N"])
    ens = init_ensemble(rho0, well_prepared_flux(rho0), params,
                        seed_split(man.seed, ["ensemble"])["ensemble"])
    dt = p["dt"] if p["dt"] is not None else 0.1 / (params.k * 2.2)
    rec = simulate(ens, params, p["T"], dt, grid, p["bandwidth"], p["records"])

    files = []
    if man.emit["csv"]:
        fp = _out(outdir, "empirical_snapshots.csv")
        rows = [(t, x, f.rho_hat.values[i], f.j_hat.values[i])
                for t, f in zip(rec.times, rec.fields) for i, x in enumerate(grid.nodes)]
        write_csv(fp, ("t", "x", "rho", "j"), rows)
        files.append(fp)
    summary = {"collision_counts": rec.collision_counts.tolist(),
               "mean_velocity": rec.mean_velocity.tolist(),
               "wall_time": rec.wall_time, "N": p["N"], "eps": eps,
               "theta": params.theta, "tau": params.tau}
    if man.emit["json"]:
        fp = _out(outdir, "events.json")
        write_json(fp, summary)
        files.append(fp)
    if p["checkpoint"]:
        fp = _out(outdir, "checkpoint.npz")
        os.makedirs(outdir, exist_ok=True)
        save_checkpoint(ens, fp)
        files.append(fp)
    if man.emit["svg"]:
        fp = _out(outdir, "empirical_density.svg")
        pick = np.linspace(0, len(rec.times) - 1, min(5, len(rec.times))).astype(int)
        snapshot_figure(fp, grid.nodes,
                        {f"t={rec.times[i]:.4g}": rec.fields[i].rho_hat.values
                         for i in pick},
                        "x", "smoothed density", "empirical density snapshots")
        files.append(fp)
    return files, summary


def run_meanfield(man: ExperimentManifest, outdir: str):
    p = man.params
    grid = make_grid(p["M"])
    rng = np.random.default_rng(seed_split(man.seed, ["init"])["init"])
    rho0 = build_initial(grid, p["initial"] or {"kind": "cosine", "amplitude": 0.3,
                                                "mode": 1, "modes": 6}, rng)
    rows = diffusive_limit_sweep(rho0, p["eps_list"], p["T"])
    files = []
    if man.emit["csv"]:
        fp = _out(outdir, "meanfield_limit.csv")
        write_csv(fp, ("eps", "h1_error", "closure_residual"),
                  [(r.eps, r.h1_error, r.closure_residual) for r in rows])
        files.append(fp)
    errs = [r.h1_error for r in rows]
    summary = {"eps_list": p["eps_list"], "errors": errs,
               "closure_residuals": [r.closure_residual for r in rows],
               "monotone": bool(all(a > b for a, b in zip(errs, errs[1:])))}
    if man.emit["json"]:
        fp = _out(outdir, "meanfield_summary.json")
        write_json(fp, summary)
        files.append(fp)
    if man.emit["svg"]:
        fp = _out(outdir, "meanfield_errors.svg")
        line_figure(fp, p["eps_list"], {"dual-norm error": errs,
                                        "closure residual": [r.closure_residual for r in rows]},
                    "eps", "error", "relaxation-to-diffusion convergence",
                    logx=True, logy=True)
        files.append(fp)
    return files, summary


def _cell_row(args):
    a, b, P, kap, Mv = args
    spec = CellSpec(a, b, P)
    res = ground_state_energy(spec, GroundStateConfig(kappa=kap, Mv=Mv))
    E = effective_H_closed(spec)
    return (a, b, P, kap, res.energy, E, abs(res.energy - E))


def run_cell(man: ExperimentManifest, outdir: str):
    p = man.params
    cells = sorted((a, b, P, kap, p["Mv"]) for a in p["alphas"] for b in p["betas"]
                   for P in p["Ps"] for kap in p["kappas"])
    rows = _pool_map(_cell_row, cells, worker_count())
    var_worst = 0.0
    for a in p["alphas"]:
        for b in p["betas"]:
            for P in p["Ps"]:
                spec = CellSpec(a, b, P)
                var_worst = max(var_worst, abs(effective_H_variational(spec)
                                               - effective_H_closed(spec)))
    files = []
    if man.emit["csv"]:
        fp = _out(outdir, "cell_routes.csv")
        write_csv(fp, ("alpha", "beta", "P", "kappa", "E_kappa", "E_closed", "abs_diff"),
                  rows)
        files.append(fp)
    worst = max(r[6] for r in rows)
    summary = {"worst_eigen_diff": worst, "worst_variational_diff": var_worst,
               "lattice_points": len(rows),
               "passed": bool(worst <= 1e-6 and var_worst <= 1e-5)}
    if man.emit["json"]:
        fp = _out(outdir, "cell_summary.json")
        write_json(fp, summary)
        files.append(fp)
    if man.emit["svg"]:
        fp = _out(outdir, "cell_kappa.svg")
        kappas = sorted(set(r[3] for r in rows))
        worst_per = [max(r[6] for r in rows if r[3] == k) for k in kappas]
        line_figure(fp, kappas, {"worst |E_kappa - E|": worst_per}, "kappa",
                    "deviation", "eigenvalue route vs closed form", logx=True, logy=True)
        files.append(fp)
    return files, summary


def run_heps(man: ExperimentManifest, outdir: str):
    p = man.params
    grid = make_grid(p["M"])
    seeds = seed_split(man.seed, ["rho", "j", "phi"])
    rho = build_initial(grid, p["initial"] or {"kind": "cosine", "amplitude": 0.3,
                                               "mode": 1, "modes": 6},
                        np.random.default_rng(seeds["rho"]))
    j = random_field(grid, np.random.default_rng(seeds["j"]), modes=3,
                     amplitude=p["amplitude"])
    phi = random_field(grid, np.random.default_rng(seeds["phi"]), modes=2,
                       amplitude=p["amplitude"])
    rows, slope = heps_convergence(rho, j, phi, p["eps_list"])
    files = []
    if man.emit["csv"]:
        fp = _out(outdir, "heps_convergence.csv")
        write_csv(fp, ("eps", "Heps", "H0", "abs_diff"),
                  [(r.eps, r.H_eps, r.H0, r.abs_diff) for r in rows])
        files.append(fp)
    summary = {"slope": slope, "eps_list": p["eps_list"],
               "diffs": [r.abs_diff for r in rows]}
    if man.emit["json"]:
        fp = _out(outdir, "heps_summary.json")
        write_json(fp, summary)
        files.append(fp)
    if man.emit["svg"]:
        fp = _out(outdir, "heps_convergence.svg")
        line_figure(fp, [r.eps for r in rows], {f"|Heps - H| (slope {slope:.2f})":
                                                [r.abs_diff for r in rows]},
                    "eps", "deviation", "prelimit convergence", logx=True, logy=True)
        files.append(fp)
    return files, summary


def run_invariants_kind(man: ExperimentManifest, outdir: str):
    results = run_invariant_suite(seed=man.seed, quick=man.params["quick"])
    files = []
    if man.emit["csv"]:
        fp = _out(outdir, "invariants.csv")
        write_csv(fp, ("check", "passed", "detail"),
                  [(r.name, int(r.passed), r.detail) for r in results])
        files.append(fp)
    summary = {"passed": all(r.passed for r in results),
               "checks": {r.name: r.passed for r in results}}
    if man.emit["json"]:
        fp = _out(outdir, "invariants.json")
        write_json(fp, summary)
        files.append(fp)
    return files, summary


_RUNNERS = {
    "metrics": run_metrics,
    "pde": run_pde,
    "control": run_control,
    "particles": run_particles,
    "meanfield": run_meanfield,
    "cell": run_cell,
    "heps": run_heps,
    "invariants": run_invariants_kind,
}


def run_experiment(man: ExperimentManifest) -> tuple[RunRecord, dict]:
    t0 = time.perf_counter()
    outdir = man.output_dir
    os.makedirs(outdir, exist_ok=True)
    files, summary = _RUNNERS[man.kind](man, outdir)
    record = RunRecord(manifest_hash=man.content_hash(),
                       input_hash=man.content_hash(),
                       wall_time=time.perf_counter() - t0,
                       tool_version=__version__,
                       result_files=tuple(sorted(os.path.basename(f) for f in files)))
    from .reporting import atomic_write_text

    atomic_write_text(os.path.join(outdir, "run_record.json"), record.to_json() + "\n")
    return record, summary


# ---------------------------------------------------------------------------
# Invariant suite
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str


def _check(name, cond, detail) -> CheckResult:
    return CheckResult(name=name, passed=bool(cond), detail=detail)


def run_invariant_suite(seed: int = 0, quick: bool = True) -> list[CheckResult]:
    """Cross-module invariant checks; the `hydrokam check` entry point."""
    out: list[CheckResult] = []
    rng = np.random.default_rng(seed)
    grid = make_grid(128)
    x = grid.nodes

    # --- spectral / metric structure
    f = random_field(grid, rng)
    from .torus import inverse_spectral_transform, spectral_transform

    rt = inverse_spectral_transform(spectral_transform(f))
    err = float(np.max(np.abs(rt.values - f.values)))
    out.append(_check("spectral_roundtrip", err < 1e-12, f"max err {err:.2e}"))

    c = spectral_transform(f)
    pv = abs(grid.dx * np.sum(f.values**2) - np.sum(np.abs(c.modes)**2))
    out.append(_check("parseval", pv < 1e-10, f"defect {pv:.2e}"))

    from .torus import neg_inv_laplacian, second_derivative

    m = GridField(grid, np.cos(2 * np.pi * x) + 0.5 * np.sin(8 * np.pi * x))
    g = neg_inv_laplacian(m)
    rec = float(np.max(np.abs(-second_derivative(g).values - m.values)))
    out.append(_check("neg_inv_laplacian_inverse", rec < 1e-9, f"residual {rec:.2e}"))

    nb = h_minus1_sup_oracle(m, n_modes=4)
    nv = h_minus1_norm(m)
    out.append(_check("h_minus1_brute_force", abs(nb - nv) < 1e-6,
                      f"spectral {nv:.8f} vs sup {nb:.8f}"))

    g6 = make_grid(12)
    ra = random_density(g6, rng, modes=2)
    rb = random_density(g6, rng, modes=2)
    from .torus import w1_circle

    wlp = w1_grid_lp(ra, rb)
    wmed = w1_circle(ra, rb)
    out.append(_check("w1_lp_oracle", abs(wlp - wmed) < 1e-8,
                      f"median {wmed:.10f} vs LP {wlp:.10f}"))

    n_pairs = 40 if quick else 200
    const = 2.0 / np.sqrt(np.pi)
    worst_up = worst_lo = np.inf
    for _ in range(n_pairs):
        rho = random_density(grid, rng)
        gam = random_density(grid, rng)
        w1 = w1_circle(rho, gam)
        h1 = h_minus1_dist(rho, gam)
        worst_up = min(worst_up, h1 - w1)
        worst_lo = min(worst_lo, const * np.sqrt(w1) - h1)
    out.append(_check("metric_sandwich", worst_up >= -1e-9 and worst_lo >= -1e-9,
                      f"margins {worst_up:.2e}, {worst_lo:.2e}"))

    rho = random_density(grid, rng)
    mm = mollify(rho, 0.05)
    out.append(_check("mollify_mass_entropy",
                      abs(grid.dx * np.sum(mm.values) - 1.0) < 1e-12
                      and entropy(mm) <= entropy(rho) + 1e-12,
                      f"S {entropy(rho):.5f} -> {entropy(mm):.5f}"))

    # --- functionals
    pot = regularized_potential(0.05)
    r_probe = np.array([0.8, 0.02, -0.3])
    psi_err = max(abs(float(pot.psi(np.array([r]))[0]) - psi_by_quadrature(pot, r))
                  for r in r_probe)
    mono = bool(np.all(pot.dphi(np.linspace(-1, 2, 4001)) > 0))
    out.append(_check("regularized_potential", psi_err < 1e-10 and mono,
                      f"psi err {psi_err:.2e}, monotone {mono}"))

    worst = 0.0
    for delta in (0.0, 0.1, 0.5, 0.9):
        for _ in range(5 if quick else 25):
            r1 = random_density(grid, rng)
            r2 = random_density(grid, rng)
            rep = barH_apply(delta, 0.1, r1, r2)
            worst = max(worst, rep.combination)
    out.append(_check("extended_operator_combination", worst <= 1e-10,
                      f"worst {worst:.2e}"))

    rho = random_density(grid, rng)
    i_rho = fisher(rho).finite
    worst = max(abs(hamiltonian_H(rho, GridField(grid, e * np.log(rho.values)))
                    + e * (1 - e) / 2 * i_rho) for e in (0.0, 0.25, 0.5, 1.0))
    out.append(_check("entropy_direction_identity", worst < 1e-8, f"worst {worst:.2e}"))

    fv = fisher_variational_sup(rho, n_modes=8)
    out.append(_check("fisher_variational", abs(fv - i_rho) < 1e-6,
                      f"sup {fv:.8f} vs {i_rho:.8f}"))

    rho_bl = random_density(grid, rng, modes=3)   # band-limited log-density
    gf = random_field(grid, rng, modes=3, amplitude=0.5)
    rep = variational_sup_check("legendre", rho_bl, g=gf, n_modes=4)
    out.append(_check("lagrangian_fenchel", abs(rep.gap) < 1e-6, f"gap {rep.gap:.2e}"))

    # --- diffusion solver
    cfg = SolverConfig(eps_reg=0.05, dt=2e-4, M=grid.M, record_every=2)
    rho0 = random_density(grid, rng)
    traj = solve_controlled(rho0, SpaceTimeControl.zero(grid), 0.01, cfg)
    diag = diagnostics(traj, SpaceTimeControl.zero(grid), rho0, cfg)
    out.append(_check("mass_conservation",
                      float(np.max(np.abs(diag.mass - 1.0))) < 1e-12,
                      f"drift {np.max(np.abs(diag.mass - 1.0)):.2e}"))
    out.append(_check("entropy_monotone_uncontrolled",
                      bool(np.all(np.diff(diag.entropy) <= 1e-8)),
                      f"S: {diag.entropy[0]:.5f} -> {diag.entropy[-1]:.5f}"))

    rep = contraction_test(rho0, random_density(grid, rng),
                           SpaceTimeControl.zero(grid), SpaceTimeControl.zero(grid),
                           0.01, cfg)
    out.append(_check("contraction", rep.worst_margin >= -1e-3,
                      f"worst margin {rep.worst_margin:.2e}"))

    # action of a controlled path matches half the control cost
    ctl = SpaceTimeControl(grid, 1, random_control_values(1, grid, rng,
                                                          amplitude=0.4))
    ctl = SpaceTimeControl(grid, 1, ctl.values - ctl.values.mean(axis=1, keepdims=True))
    cfg_a = SolverConfig(eps_reg=0.05, dt=1e-4, M=grid.M, record_every=1)
    traj_a = solve_controlled(uniform_density(grid), ctl, 0.01, cfg_a)
    act = action(traj_a)
    half_cost = 0.5 * ctl.cost(0.01)
    a_err = abs(act.finite - half_cost)
    out.append(_check("action_control_identity", a_err < 5e-3 * max(half_cost, 1.0),
                      f"action {act.finite:.6f} vs cost/2 {half_cost:.6f}"))

    # --- control layer
    cfg_c = SolverConfig(eps_reg=0.05, dt=1e-3, M=64)
    g64 = make_grid(64)
    rho0c = random_density(g64, rng)
    obj = terminal_objective(rho0c, linear_functional(g64, random_field(g64, rng, modes=2)),
                             0.02, cfg_c, 3)
    eta = random_control_values(3, g64, rng, amplitude=0.3)
    _, grad = adjoint_gradient(obj, eta)
    worst = 0.0
    for _ in range(3):
        d = random_control_values(3, g64, rng, amplitude=1.0)
        d /= np.sqrt(np.sum(d**2))
        fd = finite_difference_gradient(obj, eta, d)
        worst = max(worst, abs(fd - float(np.sum(grad * d))) / max(abs(fd), 1e-12))
    out.append(_check("adjoint_gradient_fd", worst < 1e-4, f"rel err {worst:.2e}"))

    est = optimize_value(ConstantFunctional(3.0, g64), rho0c, 0.02, cfg_c,
                         OptimizerConfig(max_iters=5, restarts=1, seed=seed, n_blocks=3))
    out.append(_check("constant_invariance", abs(est.value - 3.0) < 1e-12,
                      f"V(t)C = {est.value}"))

    # --- cell problem
    spec = CellSpec(1.3, -0.7, 0.8)
    vals = rng.standard_normal((2, 64)) * 2.0
    gfr = float(np.max(np.abs(gradient_flow_residual(vals[0], vals[1], spec))))
    out.append(_check("gradient_flow_identity", gfr < 1e-12, f"residual {gfr:.2e}"))

    crep = corrector_check(spec)
    out.append(_check("corrector_branches",
                      max(crep.smooth_branch_residual, crep.second_branch_residual) < 1e-12,
                      f"residuals {crep.smooth_branch_residual:.2e}, "
                      f"{crep.second_branch_residual:.2e}"))

    worst = 0.0
    for kap in (0.1, 0.02):
        res = ground_state_energy(spec, GroundStateConfig(kappa=kap, Mv=1000))
        worst = max(worst, abs(res.energy - effective_H_closed(spec)))
    worst_var = abs(effective_H_variational(spec) - effective_H_closed(spec))
    alpha_dev = abs(effective_H_closed(CellSpec(2.6, -0.7, 0.8))
                    - effective_H_closed(spec))
    out.append(_check("route_agreement", worst < 1e-6 and worst_var < 1e-5
                      and alpha_dev == 0.0,
                      f"eig {worst:.2e}, var {worst_var:.2e}"))

    rho = random_density(grid, rng)
    phi = random_field(grid, rng, modes=3)
    out.append(_check("macro_assembly",
                      abs(macro_assembly(rho, phi) - hamiltonian_H(rho, phi)) < 1e-9,
                      "pointwise symbol assembly matches the Hamiltonian"))

    xi = corrector_field(rho, phi)
    h0 = hamiltonian_H(rho, phi)
    worst = max(abs(limit_hamiltonian(rho, random_field(grid, rng, modes=4), phi, xi) - h0)
                for _ in range(5))
    out.append(_check("flux_independence", worst < 1e-10, f"worst {worst:.2e}"))

    # --- particles (tiny)
    ens = init_ensemble(uniform_density(g64), None,
                        KineticParams(c=1.0, k=1.0, tau=0.0, theta=0.25, N=1), seed)
    ens.positions[0] = 0.25
    ens.velocities[0] = 1
    for _ in range(16):
        step_particles(ens, KineticParams(c=1.0, k=1.0, tau=0.0, theta=0.25, N=1), 2**-4)
    out.append(_check("free_transport", ens.positions[0] == 0.25,
                      f"position {ens.positions[0]}"))

    from .particles import ParticleEnsemble

    ens2 = ParticleEnsemble(positions=np.array([0.3, 0.3001]),
                            velocities=np.array([1, -1], dtype=np.int8),
                            rng=np.random.default_rng(seed))
    pp = KineticParams(c=1e-9, k=100.0, tau=0.0, theta=0.2, N=2)
    for _ in range(200):
        step_particles(ens2, pp, 1e-3)
    out.append(_check("opposite_velocities_never_flip", ens2.collision_count == 0,
                      f"{ens2.collision_count} flips"))

    def _run(seed_):
        e = init_ensemble(uniform_density(g64), None,
                          KineticParams(2.0, 4.0, 0.05, 0.1, 200), seed_)
        for _ in range(20):
            step_particles(e, KineticParams(2.0, 4.0, 0.05, 0.1, 200), 1e-3)
        return e.positions, e.velocities

    pa, va = _run(seed + 1)
    pb, vb = _run(seed + 1)
    out.append(_check("particle_determinism",
                      np.array_equal(pa, pb) and np.array_equal(va, vb),
                      "identical trajectories for identical seeds"))

    emp = empirical_fields(init_ensemble(uniform_density(grid), None,
                                         KineticParams(2.0, 4.0, 0.1, 0.05, 5000), seed),
                           grid, 0.02, 0.5)
    out.append(_check("empirical_mass",
                      abs(grid.dx * np.sum(emp.rho_hat.values) - 1.0) < 1e-12,
                      "smoothed density integrates to one"))

    # --- manifest layer
    s1 = seed_split(seed, ["a", "b", "c"])
    s2 = seed_split(seed, ["a", "b", "c"])
    out.append(_check("seed_split_deterministic", s1 == s2 and len(set(s1.values())) == 3,
                      "stable distinct seeds"))
    return out
