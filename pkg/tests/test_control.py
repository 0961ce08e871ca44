import numpy as np
import pytest

from hydrokam.control import (
    ConstantFunctional,
    MetricPenaltyFunctional,
    OptimizerConfig,
    action,
    adjoint_gradient,
    control_property_checks,
    discounted_objective,
    feedback_resolvent_value,
    finite_difference_gradient,
    linear_functional,
    optimize_value,
    quasi_potential_path,
    resolvent,
    terminal_objective,
)
from hydrokam.diffusion import SolverConfig, SpaceTimeControl, solve_controlled
from hydrokam.random_fields import random_control_values
from hydrokam.torus import GridField, h_minus1_dist, make_grid, uniform_density

from conftest import make_density, make_field, tol_disc


@pytest.fixture
def g64():
    return make_grid(64)


@pytest.fixture
def cfg64():
    return SolverConfig(eps_reg=0.05, dt=1e-3, M=64, record_every=5)


def small_opt(seed=3, iters=20, restarts=2):
    return OptimizerConfig(max_iters=iters, restarts=restarts, seed=seed, n_blocks=4)


class TestAction:
    def test_constant_path_zero(self, g64, cfg64):
        traj = solve_controlled(uniform_density(g64), SpaceTimeControl.zero(g64),
                                0.02, cfg64)
        assert action(traj).finite < 1e-20

    def test_uncontrolled_small(self, g64, tol_manifest):
        cfg = SolverConfig(eps_reg=0.05, dt=2e-4, M=64, record_every=1)
        traj = solve_controlled(make_density(g64, 7), SpaceTimeControl.zero(g64),
                                0.02, cfg)
        tol = tol_disc(tol_manifest, "action_identity", cfg.dt, 1 / 64)
        assert action(traj).finite <= tol

    def test_controlled_matches_half_cost(self, g64, tol_manifest):
        vals = random_control_values(1, g64, np.random.default_rng(8), amplitude=0.4)
        vals -= vals.mean(axis=1, keepdims=True)   # mean-zero control
        ctl = SpaceTimeControl(g64, 1, vals)
        cfg = SolverConfig(eps_reg=0.05, dt=1e-4, M=64, record_every=1)
        traj = solve_controlled(uniform_density(g64), ctl, 0.02, cfg)
        tol = tol_disc(tol_manifest, "action_identity", cfg.dt, 1 / 64)
        assert abs(action(traj).finite - 0.5 * ctl.cost(0.02)) <= tol


class TestAdjointGradient:
    def test_constant_objective_cost_only(self, g64, cfg64):
        obj = terminal_objective(make_density(g64, 9), ConstantFunctional(1.0, g64),
                                 0.02, cfg64, 4)
        eta = random_control_values(4, g64, np.random.default_rng(10), amplitude=0.3)
        _, grad = adjoint_gradient(obj, eta)
        p = obj.problem
        expected = np.zeros_like(eta)
        for n in range(p.n_steps):
            expected[p.block_of(n)] -= p.dt * p.grid.dx * eta[p.block_of(n)]
        assert np.max(np.abs(grad - expected)) < 1e-14

    def test_matches_finite_differences(self, g64, cfg64):
        rng = np.random.default_rng(11)
        obj = terminal_objective(make_density(g64, 12),
                                 linear_functional(g64, make_field(g64, 13, modes=3)),
                                 0.03, cfg64, 4)
        eta = random_control_values(4, g64, rng, amplitude=0.3)
        _, grad = adjoint_gradient(obj, eta)
        for i in range(10):
            d = random_control_values(4, g64, np.random.default_rng(100 + i))
            d /= np.sqrt(np.sum(d**2))
            fd = finite_difference_gradient(obj, eta, d)
            ad = float(np.sum(grad * d))
            assert abs(fd - ad) <= 1e-4 * max(abs(fd), 1e-10)

    def test_single_step_linear_objective(self, g64):
        # one implicit step: gradient of <rho_1, phi> equals the hand adjoint
        cfg = SolverConfig(eps_reg=0.05, dt=1e-3, M=64)
        phi = make_field(g64, 14, modes=2)
        obj = terminal_objective(make_density(g64, 15),
                                 linear_functional(g64, phi), cfg.dt, cfg, 1)
        eta = np.zeros((1, 64))
        val, grad = adjoint_gradient(obj, eta)

        from hydrokam.tridiag import solve_cyclic_tridiagonal

        p = obj.problem
        states = p.problem_states = p.forward(eta)
        u1 = states[1]
        w = p.dt * p.pot.dphi(u1) / p.grid.dx**2
        lam = solve_cyclic_tridiagonal(-w, 1 + 2 * w, -w, phi.values * p.grid.dx)
        dc_lam = (np.roll(lam, -1) - np.roll(lam, 1)) / (2 * p.grid.dx)
        assert np.max(np.abs(grad[0] + p.dt * dc_lam)) < 1e-14

    def test_discounted_gradient_fd(self, g64):
        cfg = SolverConfig(eps_reg=0.05, dt=5e-3, M=64)
        obj = discounted_objective(make_density(g64, 16),
                                   linear_functional(g64, make_field(g64, 17, modes=2)),
                                   0.25, 2.0, cfg, 3)
        eta = random_control_values(3, g64, np.random.default_rng(18), amplitude=0.2)
        _, grad = adjoint_gradient(obj, eta)
        for i in range(4):
            d = random_control_values(3, g64, np.random.default_rng(200 + i))
            d /= np.sqrt(np.sum(d**2))
            fd = finite_difference_gradient(obj, eta, d)
            assert abs(fd - float(np.sum(grad * d))) <= 1e-4 * max(abs(fd), 1e-8)


class TestOptimizeValue:
    def test_constant_reward(self, g64, cfg64):
        est = optimize_value(ConstantFunctional(7.0, g64), make_density(g64, 19),
                             0.02, cfg64, small_opt())
        assert est.value == 7.0
        assert np.all(est.control.values == 0.0)

    def test_value_recomputable(self, g64, cfg64):
        f = linear_functional(g64, make_field(g64, 20, modes=2))
        est = optimize_value(f, make_density(g64, 21), 0.03, cfg64, small_opt())
        obj = terminal_objective(make_density(g64, 21), f, 0.03, cfg64, 4)
        states = obj.problem.forward(est.control.values)
        assert abs(obj.evaluate(est.control.values, states) - est.value) < 1e-9

    def test_lower_bound_improves_on_zero_control(self, g64, cfg64):
        rho0 = make_density(g64, 22)
        f = MetricPenaltyFunctional(grid=g64, ref=rho0.values, weight=-1.0)
        est = optimize_value(f, rho0, 0.02, cfg64, small_opt())
        obj = terminal_objective(rho0, f, 0.02, cfg64, 4)
        zero = np.zeros((4, 64))
        payoff0 = obj.evaluate(zero, obj.problem.forward(zero))
        assert est.value >= payoff0 - 1e-12
        assert est.value <= 0.0 + 1e-12

    def test_monotone_over_restarts(self, g64, cfg64):
        f = linear_functional(g64, make_field(g64, 23, modes=2))
        v1 = optimize_value(f, make_density(g64, 24), 0.02, cfg64,
                            small_opt(restarts=1)).value
        v3 = optimize_value(f, make_density(g64, 24), 0.02, cfg64,
                            small_opt(restarts=3)).value
        assert v3 >= v1 - 1e-12

    def test_reproducible(self, g64, cfg64):
        f = linear_functional(g64, make_field(g64, 25, modes=2))
        a = optimize_value(f, make_density(g64, 26), 0.02, cfg64, small_opt(seed=5))
        b = optimize_value(f, make_density(g64, 26), 0.02, cfg64, small_opt(seed=5))
        assert a.value == b.value
        assert np.array_equal(a.control.values, b.control.values)
        assert a.trace == b.trace

    def test_semigroup_contraction_cross_eval(self, g64, cfg64):
        rho_samples = [make_density(g64, 30 + s) for s in range(3)]
        phif = make_field(g64, 27, modes=2)
        phig = make_field(g64, 28, modes=2)
        ff = linear_functional(g64, phif)
        fg = linear_functional(g64, phig)
        sup_fg = float(np.max(phif.values - phig.values))  # sup over densities
        for rho0 in rho_samples:
            estf = optimize_value(ff, rho0, 0.03, cfg64, small_opt())
            estg = optimize_value(fg, rho0, 0.03, cfg64, small_opt())
            objg = terminal_objective(rho0, fg, 0.03, cfg64, 4)
            vg = max(estg.value,
                     objg.evaluate(estf.control.values,
                                   objg.problem.forward(estf.control.values)))
            assert estf.value - vg <= sup_fg + 1e-10


class TestResolvent:
    def test_constant_within_tail(self, g64):
        cfg = SolverConfig(eps_reg=0.05, dt=5e-3, M=64)
        est = resolvent(ConstantFunctional(5.0, g64), 0.5, make_density(g64, 33),
                        4.0, cfg, small_opt(iters=5, restarts=1), h_sup_bound=5.0)
        assert abs(est.value - 5.0) <= est.tail_bound + 1e-9

    def test_horizon_precondition(self, g64):
        cfg = SolverConfig(eps_reg=0.05, dt=5e-3, M=64)
        with pytest.raises(ValueError):
            resolvent(ConstantFunctional(1.0, g64), 0.5, make_density(g64, 34),
                      1.0, cfg, small_opt())

    def test_monotone_in_reward(self, g64):
        # h1 <= h2 pointwise implies best-found values in matching order
        cfg = SolverConfig(eps_reg=0.05, dt=5e-3, M=64)
        rho0 = make_density(g64, 35)
        phi = make_field(g64, 36, modes=2)
        h1 = linear_functional(g64, phi)
        h2 = linear_functional(g64, GridField(g64, phi.values + 0.5))
        e1 = resolvent(h1, 0.5, rho0, 4.0, cfg, small_opt(iters=10))
        e2 = resolvent(h2, 0.5, rho0, 4.0, cfg, small_opt(iters=10))
        gap = max(e1.gap, 0) + max(e2.gap, 0)
        assert e1.value <= e2.value + gap + e1.tail_bound + e2.tail_bound + 1e-9

    def test_resolvent_contraction_cross_eval(self, g64):
        cfg = SolverConfig(eps_reg=0.05, dt=5e-3, M=64)
        phif = make_field(g64, 37, modes=2)
        phig = make_field(g64, 38, modes=2)
        hf = linear_functional(g64, phif)
        hg = linear_functional(g64, phig)
        sup_fg = float(np.max(phif.values - phig.values))
        for s in range(2):
            rho0 = make_density(g64, 40 + s)
            ef = resolvent(hf, 0.5, rho0, 4.0, cfg, small_opt(iters=10))
            objg = discounted_objective(rho0, hg, 0.5, 4.0, cfg, 4)
            vg = objg.evaluate(ef.control.values,
                               objg.problem.forward(ef.control.values))
            # discounted mass of 1/alpha e^{-s/alpha} over [0, T] is < 1
            assert ef.value - vg <= max(sup_fg, 0.0) + 1e-9


class TestPropertyChecks:
    def test_one_sided_inequalities(self, g64):
        cfg = SolverConfig(eps_reg=0.05, dt=5e-3, M=64)
        rep = control_property_checks(alpha=0.5, k=1.0, rho0=make_density(g64, 41),
                                      gamma=make_density(g64, 42), T_eff=4.0,
                                      cfg=cfg, opt=small_opt(iters=15),
                                      tol_disc=1e-3)
        assert rep.rceq1_margin >= 0.0
        assert rep.rceq2_margin >= 0.0

    def test_zero_weight_degenerate(self, g64):
        cfg = SolverConfig(eps_reg=0.05, dt=5e-3, M=64)
        rep = control_property_checks(alpha=0.5, k=0.0, rho0=make_density(g64, 43),
                                      gamma=make_density(g64, 44), T_eff=4.0,
                                      cfg=cfg, opt=small_opt(iters=3, restarts=1),
                                      tol_disc=1e-3)
        assert abs(rep.rceq1_rhs) < 1e-14
        assert abs(rep.rceq2_value) < 1e-12

    def test_feedback_from_anchor_is_small(self, g64):
        # gamma0 = rho_anchor: feedback control starts at zero and the value
        # sits at f1 = 0 up to the (positive) slack accrued as the state drifts
        cfg = SolverConfig(eps_reg=0.05, dt=5e-3, M=64)
        rho = make_density(g64, 45)
        val = feedback_resolvent_value(rho, rho, k=1.0, alpha=0.5, T_eff=4.0, cfg=cfg)
        assert val >= -1e-6
        assert abs(val) < 0.05


class TestQuasiPotential:
    def test_penalty_path_monotone(self, g64):
        cfg = SolverConfig(eps_reg=0.05, dt=2e-3, M=64)
        rho0 = uniform_density(g64)
        rho1 = make_density(g64, 46, amplitude=0.2)
        path = quasi_potential_path(rho0, rho1, 0.05, cfg,
                                    small_opt(iters=30, restarts=2),
                                    betas=(10.0, 100.0))
        # connection cost estimates -value are nonnegative and the terminal
        # mismatch shrinks as the penalty grows
        mismatches = [h_minus1_dist(est.trajectory.final(), rho1)
                      for _, est in path]
        assert mismatches[1] <= mismatches[0] + 1e-9
        assert all(est.value <= 1e-12 for _, est in path)
