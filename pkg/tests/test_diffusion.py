import numpy as np
import pytest

from hydrokam.diffusion import (
    SolverConfig,
    SpaceTimeControl,
    carleman_meanfield_solve,
    contraction_test,
    diagnostics,
    diffusive_limit_sweep,
    eps_cauchy_increments,
    solve_controlled,
    split_components,
    step_regularized,
    well_prepared_flux,
)
from hydrokam.functionals import entropy, fisher
from hydrokam.random_fields import random_control_values
from hydrokam.torus import (
    GridDensity,
    GridField,
    integrate,
    uniform_density,
)

from conftest import make_density, tol_disc


def zero_control(grid):
    return SpaceTimeControl.zero(grid)


def bounded_control(grid, seed, blocks=3, amplitude=0.4):
    vals = random_control_values(blocks, grid, np.random.default_rng(seed),
                                 amplitude=amplitude)
    for i in range(blocks):
        n = np.sqrt(grid.dx * np.sum(vals[i] ** 2))
        if n > 1.0:
            vals[i] /= n
    return SpaceTimeControl(grid, blocks, vals)


class TestStep:
    def test_uniform_fixed_point(self, grid):
        cfg = SolverConfig(eps_reg=0.1, dt=1e-3, M=grid.M)
        out = step_regularized(uniform_density(grid), GridField(grid, np.zeros(grid.M)), cfg)
        assert np.max(np.abs(out.values - 1.0)) == 0.0

    def test_mass_conserved_per_step(self, grid):
        cfg = SolverConfig(eps_reg=0.05, dt=5e-4, M=grid.M)
        rho = make_density(grid, 31)
        eta = GridField(grid, np.sin(4 * np.pi * grid.nodes))
        out = step_regularized(rho, eta, cfg)
        assert abs(integrate(grid, out.values) - 1.0) < 1e-13

    def test_single_step_mode_decay(self, grid):
        dt = 5e-4
        cfg = SolverConfig(eps_reg=0.1, dt=dt, M=grid.M)
        amp = 1e-3
        rho = GridDensity(grid, 1.0 + amp * np.cos(2 * np.pi * grid.nodes))
        out = step_regularized(rho, GridField(grid, np.zeros(grid.M)), cfg)
        a1 = 2 * grid.dx * np.sum(out.values * np.cos(2 * np.pi * grid.nodes))
        measured = np.log(a1 / amp)
        expected = -2 * np.pi**2 * dt
        assert abs(measured / expected - 1.0) < 0.02


class TestSolveControlled:
    def test_constant_trajectory(self, grid):
        cfg = SolverConfig(eps_reg=0.1, dt=1e-3, M=grid.M, record_every=2)
        traj = solve_controlled(uniform_density(grid), zero_control(grid), 0.01, cfg)
        for s in traj.states:
            assert np.max(np.abs(s.values - 1.0)) < 1e-12

    def test_positivity_on_controlled_runs(self, grid128):
        cfg = SolverConfig(eps_reg=0.05, dt=2e-4, M=grid128.M, record_every=5)
        for seed in (1, 2):
            traj = solve_controlled(make_density(grid128, seed),
                                    bounded_control(grid128, seed), 0.02, cfg)
            assert min(s.min() for s in traj.states[1:]) > 0.0

    def test_eps_cauchy_decreasing(self, grid):
        # initial profile dipping below the smallest regularization level
        x = grid.nodes
        arc = np.minimum(np.abs(x - 0.5), 1 - np.abs(x - 0.5))
        prof = 0.003 + np.exp(-(arc / 0.1) ** 2)
        rho0 = GridDensity.normalized(grid, prof)
        assert rho0.min() < 0.025
        cfg = SolverConfig(eps_reg=0.1, dt=2e-4, M=grid.M, record_every=10)
        incs = eps_cauchy_increments(rho0, zero_control(grid), 0.05, cfg,
                                     [0.1, 0.05, 0.025])
        assert incs[0] > incs[1] * (1.0 - 0.1)
        assert incs[0] > 0.0


class TestDiagnostics:
    def test_entropy_monotone_uncontrolled(self, grid128, tol_manifest):
        cfg = SolverConfig(eps_reg=0.05, dt=2e-4, M=grid128.M, record_every=1)
        rho0 = make_density(grid128, 44)
        traj = solve_controlled(rho0, zero_control(grid128), 0.02, cfg)
        diag = diagnostics(traj, zero_control(grid128), rho0, cfg)
        assert np.all(np.diff(diag.entropy) <= 1e-8)
        assert np.max(np.abs(diag.mass - 1.0)) < 1e-12

    def test_estimates_on_controlled_run(self, grid128, tol_manifest):
        cfg = SolverConfig(eps_reg=0.05, dt=2e-4, M=grid128.M, record_every=1)
        rho0 = make_density(grid128, 45)
        ctl = bounded_control(grid128, 46)
        gamma0 = make_density(grid128, 47)
        traj = solve_controlled(rho0, ctl, 0.03, cfg)
        diag = diagnostics(traj, ctl, gamma0, cfg)
        for name in ("disineq", "SIfluc", "EEprod", "smalltS", "VazEnEst"):
            tol = tol_disc(tol_manifest, name, cfg.dt, 1.0 / grid128.M)
            assert diag.worst(name) >= -tol, f"{name}: {diag.worst(name)} < -{tol}"

    def test_fisher_dissipation_balance(self, grid128, tol_manifest):
        # uncontrolled: int I dt approximately 2 (S(0) - S(T))
        cfg = SolverConfig(eps_reg=0.05, dt=1e-4, M=grid128.M, record_every=1)
        rho0 = make_density(grid128, 48, amplitude=0.3)
        traj = solve_controlled(rho0, zero_control(grid128), 0.01, cfg)
        diag = diagnostics(traj, zero_control(grid128), rho0, cfg)
        fisher_int = np.trapezoid(diag.fisher, diag.times)
        drop = 2.0 * (diag.entropy[0] - diag.entropy[-1])
        tol = tol_disc(tol_manifest, "SIfluc", cfg.dt, 1.0 / grid128.M)
        assert abs(fisher_int - drop) < 2 * tol


class TestContraction:
    def test_identical_inputs(self, grid128):
        cfg = SolverConfig(eps_reg=0.05, dt=2e-4, M=grid128.M, record_every=2)
        rho = make_density(grid128, 50)
        ctl = bounded_control(grid128, 51)
        rep = contraction_test(rho, rho, ctl, ctl, 0.01, cfg)
        assert np.max(rep.distance) < 1e-14

    def test_same_control_contracts(self, grid128, tol_manifest):
        cfg = SolverConfig(eps_reg=0.05, dt=2e-4, M=grid128.M, record_every=2)
        ctl = bounded_control(grid128, 52)
        rep = contraction_test(make_density(grid128, 53), make_density(grid128, 54),
                               ctl, ctl, 0.02, cfg)
        tol = tol_disc(tol_manifest, "cntr12", cfg.dt, 1.0 / grid128.M)
        assert np.all(np.diff(rep.distance) <= tol)
        assert rep.worst_margin >= -tol

    def test_control_gap_bound(self, grid128, tol_manifest):
        cfg = SolverConfig(eps_reg=0.05, dt=2e-4, M=grid128.M, record_every=2)
        rho = make_density(grid128, 55)
        rep = contraction_test(rho, rho, bounded_control(grid128, 56),
                               bounded_control(grid128, 57), 0.02, cfg)
        tol = tol_disc(tol_manifest, "cntr12", cfg.dt, 1.0 / grid128.M)
        assert rep.worst_margin >= -tol


class TestKineticSolver:
    def test_equilibrium(self, grid):
        w = np.full(grid.M, 0.5)
        traj = carleman_meanfield_solve(w, w, grid, 0.1, 0.05)
        assert np.max(np.abs(traj.final().values - 1.0)) < 1e-13
        assert np.max(np.abs(traj.fluxes[-1].values)) < 1e-13

    def test_mass_conserved(self, grid):
        rho0 = GridDensity(grid, 1 + 0.3 * np.cos(2 * np.pi * grid.nodes))
        w1, w2 = split_components(rho0, well_prepared_flux(rho0), 0.1)
        traj = carleman_meanfield_solve(w1, w2, grid, 0.1, 0.1)
        for s in traj.states:
            assert abs(integrate(grid, s.values) - 1.0) < 1e-12

    def test_collision_halving_time(self, grid):
        # frozen transport: s conserved pointwise, d halves in t = ln2/(2 k s)
        from hydrokam.diffusion import collision_update

        kcol = 4.0
        s0 = 1.0 + 0.3 * np.cos(2 * np.pi * grid.nodes)
        d0 = 0.2 * np.sin(2 * np.pi * grid.nodes)
        w1, w2 = 0.5 * (s0 + d0), 0.5 * (s0 - d0)
        t_half = np.log(2.0) / (2.0 * kcol * s0)   # cellwise halving times
        for i in (0, grid.M // 3, grid.M // 2):
            a, b = collision_update(w1, w2, kcol, t_half[i])
            assert abs((a + b)[i] - s0[i]) < 1e-14           # s conserved
            assert abs((a - b)[i] - 0.5 * d0[i]) < 1e-14     # d halved
        # composition over many substeps equals the single exact flow
        a, b = w1.copy(), w2.copy()
        for _ in range(64):
            a, b = collision_update(a, b, kcol, 0.01 / 64)
        a1, b1 = collision_update(w1, w2, kcol, 0.01)
        assert np.max(np.abs(a - a1)) < 1e-14

    def test_negative_inputs_rejected(self, grid):
        w = np.full(grid.M, 0.5)
        bad = w.copy()
        bad[0] = -0.1
        with pytest.raises(ValueError):
            carleman_meanfield_solve(bad, w, grid, 0.1, 0.01)

    def test_split_components_guards(self, grid):
        rho0 = GridDensity(grid, 1 + 0.3 * np.cos(2 * np.pi * grid.nodes))
        j_big = GridField(grid, np.full(grid.M, 100.0))
        with pytest.raises(ValueError):
            split_components(rho0, j_big, 0.2)


class TestDiffusiveLimit:
    def test_uniform_fixed_point(self, grid):
        rows = diffusive_limit_sweep(uniform_density(grid), [0.2, 0.1], 0.05)
        for r in rows:
            assert r.h1_error < 1e-10

    def test_monotone_convergence(self, grid):
        rho0 = GridDensity(grid, 1 + 0.3 * np.cos(2 * np.pi * grid.nodes))
        rows = diffusive_limit_sweep(rho0, [0.2, 0.1, 0.05], 0.1)
        errs = [r.h1_error for r in rows]
        assert errs[0] > errs[1] > errs[2]
        assert errs[2] <= 1e-2
        residuals = [r.closure_residual for r in rows]
        assert residuals[0] > residuals[1] > residuals[2]
