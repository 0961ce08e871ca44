"""Scalar functionals and Hamiltonian-type operators on grid densities.

Covers the relative entropy S, the Fisher information I, the Hamiltonian

    H(rho, phi) = <phi, (1/2) d2/dx2 log rho> + (1/2) int |d phi|^2,

its Legendre dual (the path Lagrangian), the smooth monotone regularization of
(1/2) log r used by the diffusion solver, the quadratic-test-function operator
pair built from entropy and the dual Dirichlet metric, and their extended
variants carrying Fisher terms, together with the inequality combinations the
test-suite monitors.

All test fields are mean-normalized before dual-norm pairings ("constant-shift
gauge"), and spectral derivatives are used for every log-density term; the
strictly-positive floor below distinguishes the infinite branches.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.integrate import quad
from scipy.interpolate import PchipInterpolator
from scipy.optimize import minimize

from .extended import INFINITE, ExtReal
from .torus import (
    GridDensity,
    GridField,
    deriv_values,
    h_minus1_dist,
    h_minus1_norm,
    inner,
    integrate,
    require_same_grid,
    second_deriv_values,
)

POSITIVITY_FLOOR = 1e-13


def entropy(rho: GridDensity) -> float:
    """Relative entropy against the uniform measure, dx * sum(rho log rho).

    Uses the convention 0 log 0 = 0; nonnegative for every grid density.
    """
    v = rho.values
    pos = v > 0.0
    return rho.grid.dx * float(np.sum(v[pos] * np.log(v[pos])))


def fisher(rho: GridDensity) -> ExtReal:
    """Fisher information dx * sum |d log rho|^2, infinite off positive densities."""
    if rho.min() <= POSITIVITY_FLOOR:
        return INFINITE
    grid = rho.grid
    dlog = deriv_values(grid, np.log(rho.values))
    return ExtReal.of(integrate(grid, dlog**2))


def _require_positive(rho: GridDensity) -> None:
    if rho.min() <= POSITIVITY_FLOOR:
        raise ValueError("operation requires a strictly positive density")


def hamiltonian_H(rho: GridDensity, phi: GridField) -> float:
    """H(rho, phi) = <phi, (1/2) d2 log rho> + (1/2) int |d phi|^2."""
    _require_positive(rho)
    require_same_grid(rho, phi)
    grid = rho.grid
    d2log = second_deriv_values(grid, np.log(rho.values))
    dphi = deriv_values(grid, phi.values)
    return 0.5 * inner(grid, phi.values, d2log) + 0.5 * integrate(grid, dphi**2)


def lagrangian_L(rho: GridDensity, rho_dot: GridField) -> float:
    """Legendre dual of H: (1/2) || rho_dot - (1/2) d2 log rho ||_{-1}^2."""
    _require_positive(rho)
    require_same_grid(rho, rho_dot)
    grid = rho.grid
    if abs(rho_dot.mean()) > 1e-10:
        raise ValueError("density velocity must have zero mean")
    drift = 0.5 * second_deriv_values(grid, np.log(rho.values))
    return 0.5 * h_minus1_norm(GridField(grid, rho_dot.values - drift)) ** 2


# ---------------------------------------------------------------------------
# Regularization of the singular (1/2) log r
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RegularizedPotential:
    """Smooth monotone surrogate for (1/2) log r.

    Equal to (1/2) log r + C_eps above eps, linear r/eps below zero, bridged on
    [0, eps] by a quintic Hermite polynomial matching value, slope and
    curvature at both junctions, with C_eps = -(3/2) log eps.  The primitive is
    available in closed form on every branch.
    """

    eps: float
    C_eps: float
    spline: np.ndarray          # quintic coefficients in t = r/eps, ascending
    knots: np.ndarray | None    # refined knot set when the monotone fallback ran
    _pchip: object | None = None

    # -- evaluators ---------------------------------------------------------

    def phi(self, r) -> np.ndarray:
        r = np.asarray(r, dtype=float)
        out = np.empty_like(r)
        lo = r < 0.0
        hi = r >= self.eps
        mid = ~(lo | hi)
        out[lo] = r[lo] / self.eps
        out[hi] = 0.5 * np.log(r[hi]) + self.C_eps
        out[mid] = self._bridge(r[mid])
        return out

    def dphi(self, r) -> np.ndarray:
        r = np.asarray(r, dtype=float)
        out = np.empty_like(r)
        lo = r < 0.0
        hi = r >= self.eps
        mid = ~(lo | hi)
        out[lo] = 1.0 / self.eps
        out[hi] = 0.5 / r[hi]
        out[mid] = self._bridge_deriv(r[mid])
        return out

    def psi(self, r) -> np.ndarray:
        """Primitive int_0^r phi, from the closed forms of each branch."""
        r = np.asarray(r, dtype=float)
        out = np.empty_like(r)
        lo = r < 0.0
        hi = r >= self.eps
        mid = ~(lo | hi)
        out[lo] = r[lo] ** 2 / (2.0 * self.eps)
        out[mid] = self._bridge_primitive(r[mid])
        e = self.eps
        theta_e = self._bridge_primitive(np.array([e]))[0]
        out[hi] = (theta_e
                   + 0.5 * (r[hi] * np.log(r[hi]) - r[hi])
                   - 0.5 * (e * np.log(e) - e)
                   + self.C_eps * (r[hi] - e))
        return out

    # -- bridge internals ---------------------------------------------------

    def _bridge(self, r):
        if self._pchip is not None:
            return self._pchip(r)
        t = r / self.eps
        return np.polyval(self.spline[::-1], t)

    def _bridge_deriv(self, r):
        if self._pchip is not None:
            return self._pchip.derivative()(r)
        t = r / self.eps
        dcoef = self.spline[1:] * np.arange(1, len(self.spline))
        return np.polyval(dcoef[::-1], t) / self.eps

    def _bridge_primitive(self, r):
        if self._pchip is not None:
            return self._pchip.antiderivative()(r)
        t = np.asarray(r) / self.eps
        icoef = np.concatenate(([0.0], self.spline / np.arange(1, len(self.spline) + 1)))
        return np.polyval(icoef[::-1], t) * self.eps


def _quintic_bridge(eps: float) -> np.ndarray:
    """Quintic in t = r/eps matching (0, 1/eps, 0) at r=0 and
    (-log eps, 1/(2 eps), -1/(2 eps^2)) at r=eps."""
    A = -np.log(eps) - 1.0      # p(1) - p(0) - p'(0), etc. reduced data
    B = -0.5
    C = -0.5
    a3 = 10.0 * A - 4.0 * B + 0.5 * C
    a4 = -15.0 * A + 7.0 * B - C
    a5 = 6.0 * A - 3.0 * B + 0.5 * C
    return np.array([0.0, 1.0, 0.0, a3, a4, a5])


def _monotone_fallback(eps: float, n_knots: int = 9):
    """Monotone piecewise-cubic bridge on refined knots.

    Safety valve for a non-monotone quintic (not expected for eps in (0, 0.5)):
    interpolates an increasing profile between the junction values; trades the
    exact curvature match for guaranteed monotonicity.
    """
    t = np.linspace(0.0, 1.0, n_knots)
    hi = -np.log(eps)
    vals = hi * t * (0.4 + 0.6 * t)  # increasing, anchored at 0 and hi
    knots = t * eps
    interp = PchipInterpolator(knots, vals)
    return knots, interp


def regularized_potential(eps: float, sample_points: int = 10_000) -> RegularizedPotential:
    """Build the regularized potential and verify its monotonicity numerically."""
    if not (0.0 < eps < 0.5):
        raise ValueError(f"regularization parameter must lie in (0, 0.5), got {eps}")
    C_eps = -1.5 * np.log(eps)
    coef = _quintic_bridge(eps)
    pot = RegularizedPotential(eps=eps, C_eps=C_eps, spline=coef, knots=None)
    r = np.linspace(-1.0, 2.0, sample_points)
    if np.all(pot.dphi(r) > 0.0):
        return pot
    knots, interp = _monotone_fallback(eps)
    pot = RegularizedPotential(eps=eps, C_eps=C_eps, spline=coef, knots=knots,
                               _pchip=interp)
    if not np.all(pot.dphi(r) > 0.0):
        raise RuntimeError(f"monotone bridge construction failed for eps={eps}")
    return pot


def psi_by_quadrature(pot: RegularizedPotential, r: float) -> float:
    """Independent primitive via adaptive quadrature (test oracle)."""
    pts = [p for p in (0.0, pot.eps) if min(0.0, r) < p < max(0.0, r)]
    val, _ = quad(lambda s: float(pot.phi(np.array([s]))[0]), 0.0, r,
                  points=pts or None, limit=400, epsabs=1e-13, epsrel=1e-13)
    return val


# ---------------------------------------------------------------------------
# Quadratic-test-function operators and their extended variants
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class HamiltonianReport:
    """Evaluation record for the quadratic-test-function operator pair.

    ``h0_value`` and ``h1_value`` share one numeric expression; the roles
    differ only in which side of an inequality they test, which matters for
    the extended combination stored in ``combination``.
    """

    h0_value: float
    h1_value: float
    gap: float
    s_rho: float
    s_gamma: float
    metric_sq: float
    fisher_rho: float | None = None
    fisher_gamma: float | None = None
    combination: float | None = None


def apply_H0_H1(k: float, rho: GridDensity, gamma: GridDensity) -> HamiltonianReport:
    """Evaluate (k/2)(S(gamma) - S(rho)) + (k^2/2) ||rho - gamma||_{-1}^2.

    Both operator roles share the expression, so the gap vanishes by
    construction; the meaningful inequality lives in :func:`barH_apply`.
    """
    if k < 0:
        raise ValueError("test-function weight k must be nonnegative")
    require_same_grid(rho, gamma)
    s_rho = entropy(rho)
    s_gamma = entropy(gamma)
    d2 = h_minus1_dist(rho, gamma) ** 2
    val = 0.5 * k * (s_gamma - s_rho) + 0.5 * k**2 * d2
    return HamiltonianReport(h0_value=val, h1_value=val, gap=0.0,
                             s_rho=s_rho, s_gamma=s_gamma, metric_sq=d2)


def barH_apply(delta: float, eps_c: float, rho: GridDensity, gamma: GridDensity,
               rho_hat: GridDensity | None = None) -> HamiltonianReport:
    """Extended operators with Fisher terms, and their inequality combination.

    ``h0_value`` is the extended sub-testing operator at ``rho`` for the convex
    test function anchored at ``rho_hat`` (defaults to ``gamma``); ``h1_value``
    is the super-testing one at ``gamma`` anchored at ``rho``.  ``combination``
    is

        h0/(1-delta) - h1/(1+delta)
            + (delta/8) (I(rho)/(1-delta) + I(gamma)/(1+delta))

    evaluated with both test functions anchored on the pair (rho, gamma); it
    vanishes identically in exact arithmetic and must stay <= 1e-10.
    """
    if not (0.0 <= delta < 1.0):
        raise ValueError("delta must lie in [0, 1)")
    if not (0.0 < eps_c < 1.0):
        raise ValueError("eps_c must lie in (0, 1)")
    require_same_grid(rho, gamma)
    _require_positive(rho)
    _require_positive(gamma)
    if rho_hat is None:
        rho_hat = gamma
    require_same_grid(rho, rho_hat)

    s_rho = entropy(rho)
    s_gamma = entropy(gamma)
    i_rho = fisher(rho).finite
    i_gamma = fisher(gamma).finite
    d2 = h_minus1_dist(rho, gamma) ** 2

    def quad_part(s_anchor, s_point, dist_sq):
        return (s_anchor - s_point) / (2.0 * eps_c) + dist_sq / (2.0 * eps_c**2)

    h0 = (1.0 - delta) * quad_part(entropy(rho_hat), s_rho,
                                   h_minus1_dist(rho, rho_hat) ** 2) - delta / 8.0 * i_rho
    h1 = (1.0 + delta) * quad_part(s_gamma, s_rho, d2) + delta / 8.0 * i_gamma
    # the paired-anchor combination; equals zero up to rounding
    h0_paired = (1.0 - delta) * quad_part(s_gamma, s_rho, d2) - delta / 8.0 * i_rho
    comb = (h0_paired / (1.0 - delta) - h1 / (1.0 + delta)
            + delta / 8.0 * (i_rho / (1.0 - delta) + i_gamma / (1.0 + delta)))
    return HamiltonianReport(h0_value=h0, h1_value=h1, gap=h0 - h1,
                             s_rho=s_rho, s_gamma=s_gamma, metric_sq=d2,
                             fisher_rho=i_rho, fisher_gamma=i_gamma,
                             combination=comb)


# ---------------------------------------------------------------------------
# Variational cross-checks
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class VariationalReport:
    mode: str
    closed_form: float
    brute_force: float
    gap: float


def _fourier_basis(grid, n_modes: int) -> np.ndarray:
    """Real Fourier basis rows: constant, then cos/sin pairs up to n_modes."""
    x = grid.nodes
    rows = [np.ones(grid.M)]
    for k in range(1, n_modes + 1):
        rows.append(np.cos(2 * np.pi * k * x))
        rows.append(np.sin(2 * np.pi * k * x))
    return np.stack(rows)


def _maximize_over_span(objective, basis: np.ndarray) -> float:
    """Numerically maximize a concave functional over span(basis) rows."""
    res = minimize(lambda c: -objective(c @ basis), np.zeros(len(basis)),
                   method="BFGS", options={"gtol": 1e-10, "maxiter": 500})
    return -float(res.fun)


def variational_sup_check(mode: str, rho: GridDensity, g: GridField | None = None,
                          gamma: GridDensity | None = None,
                          n_modes: int = 8) -> VariationalReport:
    """Brute-force verification of the variational representations.

    nisg:     sup_eta <g, (1/2) d2 log rho + d eta> - (1/2) int eta^2 equals
              H(rho, g); the optimizer is eta* = -dg under this sign gauge.
    legendre: sup_phi <rho_dot, phi> - H(rho, phi) equals the Lagrangian
              (here exercised with rho_dot = d g for a supplied field g).
    jensen:   the cross-entropy bound dx sum gamma log rho <= S(gamma).
    """
    _require_positive(rho)
    grid = rho.grid

    if mode == "nisg":
        if g is None:
            raise ValueError("nisg mode needs a test field g")
        d2log = second_deriv_values(grid, np.log(rho.values))
        gv = g.values

        def obj(eta):
            return (inner(grid, gv, 0.5 * d2log + deriv_values(grid, eta))
                    - 0.5 * integrate(grid, eta**2))

        brute = _maximize_over_span(obj, _fourier_basis(grid, n_modes))
        closed = hamiltonian_H(rho, g)
        return VariationalReport("nisg", closed, brute, brute - closed)

    if mode == "legendre":
        if g is None:
            raise ValueError("legendre mode needs a field g defining rho_dot = d g")
        rho_dot = GridField(grid, deriv_values(grid, g.values))

        def obj(phi):
            return (inner(grid, rho_dot.values, phi)
                    - hamiltonian_H(rho, GridField(grid, phi)))

        brute = _maximize_over_span(obj, _fourier_basis(grid, n_modes))
        closed = lagrangian_L(rho, rho_dot)
        return VariationalReport("legendre", closed, brute, brute - closed)

    if mode == "jensen":
        if gamma is None:
            raise ValueError("jensen mode needs a second density gamma")
        require_same_grid(rho, gamma)
        lhs = inner(grid, gamma.values, np.log(rho.values))
        rhs = entropy(gamma)
        return VariationalReport("jensen", rhs, lhs, lhs - rhs)

    raise ValueError(f"unknown mode {mode!r}")


def fisher_variational_sup(rho: GridDensity, n_modes: int = 8) -> float:
    """sup_xi 2 <d xi, log rho> - int xi^2 over a truncated Fourier class."""
    _require_positive(rho)
    grid = rho.grid
    logr = np.log(rho.values)

    def obj(xi):
        return 2.0 * inner(grid, deriv_values(grid, xi), logr) - integrate(grid, xi**2)

    return _maximize_over_span(obj, _fourier_basis(grid, n_modes))
