import numpy as np
import pytest

from hydrokam.functionals import (
    apply_H0_H1,
    barH_apply,
    entropy,
    fisher,
    fisher_variational_sup,
    hamiltonian_H,
    lagrangian_L,
    psi_by_quadrature,
    regularized_potential,
    variational_sup_check,
)
from hydrokam.torus import (
    GridDensity,
    GridField,
    h_minus1_dist,
    make_grid,
    uniform_density,
)

from conftest import make_density, make_field

# oracle values computed with the high-resolution quadrature / closed forms
# S(1 + a cos) = a^2/4 + a^4/32 + O(a^6); adaptive-quadrature value frozen below
ENTROPY_COS_01 = 0.0025031354657699305
# I(1 + a cos) = 4 pi^2 (1/sqrt(1-a^2) - 1), a = 0.1
FISHER_COS_01 = 0.19888497461677937


def test_entropy_uniform(grid):
    assert entropy(uniform_density(grid)) == 0.0


def test_entropy_two_value(grid):
    rho = GridDensity.normalized(grid, np.where(grid.nodes < 0.5, 2.0, 0.0))
    assert abs(entropy(rho) - np.log(2.0)) < 1e-12


def test_entropy_cosine_oracle(grid):
    rho = GridDensity(grid, 1.0 + 0.1 * np.cos(2 * np.pi * grid.nodes))
    # independent oracle: quadrature at 8x resolution
    fine = make_grid(2048)
    rf = GridDensity(fine, 1.0 + 0.1 * np.cos(2 * np.pi * fine.nodes))
    assert abs(entropy(rf) - ENTROPY_COS_01) < 1e-10
    assert abs(entropy(rho) - ENTROPY_COS_01) < 1e-9


def test_entropy_nonnegative(grid):
    for seed in range(10):
        assert entropy(make_density(grid, seed)) >= 0.0


def test_fisher_uniform(grid):
    assert fisher(uniform_density(grid)).finite == 0.0


def test_fisher_cosine_oracle(grid):
    rho = GridDensity(grid, 1.0 + 0.1 * np.cos(2 * np.pi * grid.nodes))
    assert abs(fisher(rho).finite - FISHER_COS_01) < 1e-9
    a = 0.1
    assert abs(FISHER_COS_01 - 4 * np.pi**2 * (1 / np.sqrt(1 - a**2) - 1)) < 1e-14


def test_fisher_infinite_branch(grid):
    vals = np.ones(grid.M)
    vals[0] = 0.0
    rho = GridDensity.normalized(grid, vals)
    assert fisher(rho).is_infinite


def test_fisher_variational(grid):
    rho = make_density(grid, 3, modes=4)
    assert abs(fisher_variational_sup(rho, n_modes=6) - fisher(rho).finite) < 1e-6


class TestHamiltonian:
    def test_uniform_sin(self, grid):
        phi = GridField(grid, np.sin(2 * np.pi * grid.nodes))
        assert abs(hamiltonian_H(uniform_density(grid), phi) - np.pi**2) < 1e-10

    def test_constant_test_function(self, grid):
        rho = make_density(grid, 4)
        assert abs(hamiltonian_H(rho, GridField(grid, np.full(grid.M, 3.7)))) < 1e-12

    def test_constant_shift_invariance(self, grid):
        rho = make_density(grid, 5)
        phi = make_field(grid, 6)
        shifted = GridField(grid, phi.values + 11.0)
        assert abs(hamiltonian_H(rho, phi) - hamiltonian_H(rho, shifted)) < 1e-10

    def test_integration_by_parts_oracle(self, grid):
        # H = -(1/2) <d phi, d log rho> + (1/2) int |d phi|^2 for positive rho
        from hydrokam.torus import deriv_values, inner, integrate

        rho = GridDensity(grid, 1.0 + 0.1 * np.cos(2 * np.pi * grid.nodes))
        phi = GridField(grid, np.cos(2 * np.pi * grid.nodes))
        dphi = deriv_values(grid, phi.values)
        dlog = deriv_values(grid, np.log(rho.values))
        oracle = -0.5 * inner(grid, dphi, dlog) + 0.5 * integrate(grid, dphi**2)
        assert abs(hamiltonian_H(rho, phi) - oracle) < 1e-10

    def test_entropy_direction_identity(self, grid):
        rho = make_density(grid, 8)
        i_rho = fisher(rho).finite
        for e in (0.0, 0.25, 0.5, 1.0):
            val = hamiltonian_H(rho, GridField(grid, e * np.log(rho.values)))
            assert abs(val + e * (1 - e) / 2 * i_rho) < 1e-8

    def test_rejects_nonpositive(self, grid):
        vals = np.ones(grid.M)
        vals[0] = 0.0
        rho = GridDensity.normalized(grid, vals)
        with pytest.raises(ValueError):
            hamiltonian_H(rho, GridField(grid, np.zeros(grid.M)))


class TestLagrangian:
    def test_stationary(self, grid):
        assert lagrangian_L(uniform_density(grid), GridField(grid, np.zeros(grid.M))) == 0.0

    def test_uncontrolled_flow_direction(self, grid):
        from hydrokam.torus import second_deriv_values

        rho = make_density(grid, 9)
        drift = 0.5 * second_deriv_values(grid, np.log(rho.values))
        assert lagrangian_L(rho, GridField(grid, drift)) < 1e-18

    def test_fenchel_oracle(self, grid):
        rho = make_density(grid, 10, modes=3)
        g = make_field(grid, 11, modes=3)
        rep = variational_sup_check("legendre", rho, g=g, n_modes=4)
        assert abs(rep.gap) < 1e-6

    def test_rejects_nonzero_mean_velocity(self, grid):
        with pytest.raises(ValueError):
            lagrangian_L(uniform_density(grid), GridField(grid, np.ones(grid.M)))


class TestRegularizedPotential:
    @pytest.mark.parametrize("eps", [0.01, 0.05, 0.1, 0.25, 0.4, 0.49])
    def test_junctions_and_monotonicity(self, eps):
        pot = regularized_potential(eps)
        assert abs(pot.phi(np.array([0.0]))[0]) < 1e-12
        assert abs(pot.phi(np.array([eps]))[0] + np.log(eps)) < 1e-10
        # one-sided derivative continuity at both junctions
        h = eps * 1e-7
        for r0, expect in ((0.0, 1.0 / eps), (eps, 0.5 / eps)):
            left = pot.dphi(np.array([r0 - h / 2]))[0]
            right = pot.dphi(np.array([r0 + h / 2]))[0]
            assert abs(left - expect) < 1e-3 / eps
            assert abs(right - expect) < 1e-3 / eps
        r = np.linspace(-1.0, 2.0, 10_000)
        assert np.all(pot.dphi(r) > 0.0)

    def test_boundary_values(self):
        pot = regularized_potential(0.1)
        assert abs(pot.phi(np.array([0.1]))[0] + np.log(0.1)) < 1e-12
        assert abs(pot.phi(np.array([-1.0]))[0] + 10.0) < 1e-12
        assert pot.C_eps == -1.5 * np.log(0.1)

    def test_primitive_negative_branch(self):
        pot = regularized_potential(0.1)
        for r in (-0.5, -1.0, -0.05):
            assert abs(pot.psi(np.array([r]))[0] - r**2 / (2 * 0.1)) < 1e-13

    @pytest.mark.parametrize("r", [0.5, 1.5, 0.2, -0.3, -1.2])
    def test_primitive_quadrature_oracle(self, r):
        pot = regularized_potential(0.1)
        assert abs(pot.psi(np.array([r]))[0] - psi_by_quadrature(pot, r)) < 1e-10

    def test_curvature_match(self):
        eps = 0.1
        pot = regularized_potential(eps)
        h = 1e-5
        for r0, expect in ((eps, -0.5 / eps**2), (0.0, 0.0)):
            d2 = (pot.dphi(np.array([r0 + h]))[0]
                  - pot.dphi(np.array([r0 - h]))[0]) / (2 * h)
            assert abs(d2 - expect) < 1e-2 / eps**2

    def test_rejects_bad_eps(self):
        for eps in (0.0, 0.5, -0.1, 1.0):
            with pytest.raises(ValueError):
                regularized_potential(eps)

    def test_monotone_fallback_machinery(self):
        from hydrokam.functionals import _monotone_fallback

        knots, interp = _monotone_fallback(0.1)
        r = np.linspace(1e-9, 0.1, 500)
        assert np.all(interp.derivative()(r) > 0.0)
        assert abs(interp(0.0)) < 1e-12
        assert abs(interp(0.1) + np.log(0.1)) < 1e-10


class TestOperatorPair:
    def test_identical_measures(self, grid):
        rho = make_density(grid, 12)
        rep = apply_H0_H1(1.0, rho, rho)
        assert rep.h0_value == rep.h1_value == 0.0

    def test_zero_weight(self, grid):
        rep = apply_H0_H1(0.0, make_density(grid, 13), make_density(grid, 14))
        assert rep.h0_value == 0.0

    def test_composition(self, grid):
        rho = GridDensity(grid, 1.0 + 0.2 * np.cos(2 * np.pi * grid.nodes))
        gam = uniform_density(grid)
        rep = apply_H0_H1(1.0, rho, gam)
        expected = -0.5 * entropy(rho) + 0.5 * h_minus1_dist(rho, gam) ** 2
        assert abs(rep.h0_value - expected) < 1e-12
        assert rep.gap == 0.0
        # stored terms reproduce the value
        rebuilt = 0.5 * (rep.s_gamma - rep.s_rho) + 0.5 * rep.metric_sq
        assert abs(rebuilt - rep.h0_value) < 1e-14


class TestExtendedOperators:
    def test_delta_zero(self, grid):
        rep = barH_apply(0.0, 0.1, make_density(grid, 15), make_density(grid, 16))
        assert rep.combination <= 1e-10

    def test_equal_triple(self, grid):
        rho = make_density(grid, 17)
        rep = barH_apply(0.3, 0.2, rho, rho, rho_hat=rho)
        assert abs(rep.combination) <= 1e-10

    def test_random_triples(self, grid):
        for seed in range(10):
            rho = make_density(grid, 300 + seed)
            gam = make_density(grid, 400 + seed)
            hat = make_density(grid, 500 + seed)
            for delta in (0.0, 0.1, 0.5, 0.9):
                rep = barH_apply(delta, 0.1, rho, gam, rho_hat=hat)
                assert rep.combination <= 1e-10

    def test_fisher_terms_recorded(self, grid):
        rho = make_density(grid, 18)
        gam = make_density(grid, 19)
        rep = barH_apply(0.5, 0.1, rho, gam)
        assert abs(rep.fisher_rho - fisher(rho).finite) < 1e-12
        assert abs(rep.fisher_gamma - fisher(gam).finite) < 1e-12

    def test_rejects_delta_one(self, grid):
        with pytest.raises(ValueError):
            barH_apply(1.0, 0.1, make_density(grid, 20), make_density(grid, 21))


class TestVariationalChecks:
    def test_nisg_constant(self, grid):
        rep = variational_sup_check("nisg", make_density(grid, 22),
                                    g=GridField(grid, np.full(grid.M, 2.0)))
        assert abs(rep.brute_force) < 1e-8
        assert abs(rep.closed_form) < 1e-12

    def test_nisg_cos_uniform(self, grid):
        rep = variational_sup_check("nisg", uniform_density(grid),
                                    g=GridField(grid, np.cos(2 * np.pi * grid.nodes)),
                                    n_modes=8)
        assert abs(rep.closed_form - np.pi**2) < 1e-10
        assert abs(rep.gap) < 1e-6

    def test_jensen_equality(self, grid):
        rho = make_density(grid, 23)
        rep = variational_sup_check("jensen", rho, gamma=rho)
        assert abs(rep.gap) < 1e-10

    def test_jensen_inequality(self, grid):
        for seed in range(8):
            rho = make_density(grid, 600 + seed)
            gam = make_density(grid, 700 + seed)
            rep = variational_sup_check("jensen", rho, gamma=gam)
            assert rep.gap <= 1e-10
