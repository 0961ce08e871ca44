"""Time integration of the regularized singular diffusion and of the
two-velocity relaxation system, with the estimate monitors used by the suite.

The scalar equation integrated here is

    d rho / dt = d2/dx2 Phi_eps(rho) + d eta / dx

with Phi_eps the smooth monotone surrogate for (1/2) log r built in
:mod:`hydrokam.functionals`.  The scheme is a conservative finite-volume
implicit Euler step: interface fluxes of Phi_eps(rho) telescope, so mass is
conserved to round-off, and the implicit treatment of the monotone diffusion
gives unconditional entropy stability.  The control divergence is explicit
(centered differences), keeping the Newton system cyclic tridiagonal.

Negative intermediate Newton states are admissible (the linear branch of
Phi_eps below zero handles them); positivity is only asserted on converged
output states.

The two-velocity system

    d w1/dt + c d w1/dx = k (w2^2 - w1^2)
    d w2/dt - c d w2/dx = k (w1^2 - w2^2)

is integrated by Strang splitting: exact spectral transport at speeds +-c,
then an exact pointwise collision update using that s = w1 + w2 is conserved
and d = w1 - w2 decays as exp(-2 k s dt) along the collision flow.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .functionals import (
    RegularizedPotential,
    entropy,
    fisher,
    regularized_potential,
)
from .torus import (
    GridDensity,
    GridField,
    TorusGrid,
    deriv_values,
    h_minus1_dist,
    inner,
    integrate,
    neg_inv_laplacian,
    require_same_grid,
)
from .tridiag import solve_cyclic_tridiagonal


class SolverError(RuntimeError):
    """Newton failed to converge even after time-step subdivision."""


@dataclass(frozen=True)
class SolverConfig:
    eps_reg: float = 0.05
    dt: float = 1e-4
    M: int = 256
    newton_tol: float = 1e-10
    newton_max: int = 50
    record_every: int = 1

    def __post_init__(self):
        if self.dt <= 0.0:
            raise ValueError("dt must be positive")
        if not (0.0 < self.eps_reg < 0.5):
            raise ValueError("eps_reg must lie in (0, 0.5)")

    def potential(self) -> RegularizedPotential:
        return regularized_potential(self.eps_reg)


@dataclass(frozen=True)
class SpaceTimeControl:
    """Piecewise-constant-in-time control eta(t, x) on block rows."""

    grid: TorusGrid
    times: int                      # number of time blocks
    values: np.ndarray              # (times, M)

    def __post_init__(self):
        v = np.ascontiguousarray(np.asarray(self.values, dtype=float))
        if v.shape != (self.times, self.grid.M):
            raise ValueError(f"control shape {v.shape} != ({self.times}, {self.grid.M})")
        if not np.all(np.isfinite(v)):
            raise ValueError("control values must be finite")
        object.__setattr__(self, "values", v)

    @classmethod
    def zero(cls, grid: TorusGrid, times: int = 1) -> "SpaceTimeControl":
        return cls(grid, times, np.zeros((times, grid.M)))

    def block_of_step(self, n: int, n_steps: int) -> int:
        return min(self.times - 1, (n * self.times) // max(n_steps, 1))

    def at_step(self, n: int, n_steps: int) -> np.ndarray:
        return self.values[self.block_of_step(n, n_steps)]

    def at_time(self, t: float, horizon: float) -> np.ndarray:
        if horizon <= 0.0:
            return self.values[0]
        idx = min(self.times - 1, int(self.times * t / horizon))
        return self.values[max(idx, 0)]

    def cost(self, horizon: float) -> float:
        """dt dx sum eta^2 over the full horizon."""
        block_dt = horizon / self.times
        return block_dt * self.grid.dx * float(np.sum(self.values**2))


@dataclass(frozen=True)
class Trajectory:
    times: np.ndarray
    states: tuple
    fluxes: tuple | None = None

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        if np.any(np.diff(t) <= 0.0):
            raise ValueError("snapshot times must be strictly increasing")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "states", tuple(self.states))
        if self.fluxes is not None:
            object.__setattr__(self, "fluxes", tuple(self.fluxes))

    @property
    def grid(self) -> TorusGrid:
        return self.states[0].grid

    def final(self) -> GridDensity:
        return self.states[-1]


# ---------------------------------------------------------------------------
# Implicit finite-volume step
# ---------------------------------------------------------------------------

def _centered_divergence(grid: TorusGrid, eta: np.ndarray) -> np.ndarray:
    return (np.roll(eta, -1) - np.roll(eta, 1)) / (2.0 * grid.dx)


def _fv_laplacian_of(pot, u: np.ndarray, dx: float) -> np.ndarray:
    p = pot.phi(u)
    return (np.roll(p, -1) - 2.0 * p + np.roll(p, 1)) / dx**2


def _newton_solve(pot, u0: np.ndarray, rhs: np.ndarray, dt: float, dx: float,
                  tol: float, maxit: int):
    u = u0.copy()
    for _ in range(maxit):
        res = u - dt * _fv_laplacian_of(pot, u, dx) - rhs
        if np.max(np.abs(res)) < tol:
            return u, True
        w = dt * pot.dphi(u) / dx**2
        diag = 1.0 + 2.0 * w
        lower = -np.roll(w, 1)    # coefficient of u[i-1] in row i is -w[i-1]
        upper = -np.roll(w, -1)
        delta = solve_cyclic_tridiagonal(lower, diag, upper, -res)
        u = u + delta
    res = u - dt * _fv_laplacian_of(pot, u, dx) - rhs
    return u, bool(np.max(np.abs(res)) < tol)


def step_regularized_values(values: np.ndarray, eta: np.ndarray, cfg: SolverConfig,
                            grid: TorusGrid, pot=None, _depth: int = 0) -> np.ndarray:
    """One implicit-Euler step on raw cell values; conserves mass to round-off."""
    if pot is None:
        pot = cfg.potential()
    rhs = values + cfg.dt * _centered_divergence(grid, eta)
    u, ok = _newton_solve(pot, values, rhs, cfg.dt, grid.dx, cfg.newton_tol,
                          cfg.newton_max)
    if ok:
        return u
    if _depth >= 5:
        raise SolverError("Newton failed after 5 rounds of dt halving")
    half = SolverConfig(eps_reg=cfg.eps_reg, dt=cfg.dt / 2.0, M=cfg.M,
                        newton_tol=cfg.newton_tol, newton_max=cfg.newton_max,
                        record_every=cfg.record_every)
    mid = step_regularized_values(values, eta, half, grid, pot, _depth + 1)
    return step_regularized_values(mid, eta, half, grid, pot, _depth + 1)


def step_regularized(rho: GridDensity, eta: GridField, cfg: SolverConfig) -> GridDensity:
    require_same_grid(rho, eta)
    out = step_regularized_values(rho.values, eta.values, cfg, rho.grid)
    return GridDensity(rho.grid, out)


def solve_controlled(rho0: GridDensity, eta: SpaceTimeControl, T: float,
                     cfg: SolverConfig) -> Trajectory:
    """Integrate the controlled equation on [0, T]; snapshots per record_every."""
    require_same_grid(rho0, eta)
    grid = rho0.grid
    pot = cfg.potential()
    n_steps = max(1, int(round(T / cfg.dt)))
    dt = T / n_steps
    step_cfg = SolverConfig(eps_reg=cfg.eps_reg, dt=dt, M=cfg.M,
                            newton_tol=cfg.newton_tol, newton_max=cfg.newton_max,
                            record_every=cfg.record_every)
    u = rho0.values.copy()
    times = [0.0]
    states = [rho0]
    for n in range(n_steps):
        u = step_regularized_values(u, eta.at_step(n, n_steps), step_cfg, grid, pot)
        if (n + 1) % cfg.record_every == 0 or n == n_steps - 1:
            times.append((n + 1) * dt)
            states.append(GridDensity(grid, u))
    return Trajectory(np.array(times), states)


def eps_cauchy_increments(rho0: GridDensity, eta: SpaceTimeControl, T: float,
                          cfg: SolverConfig, eps_sequence) -> list[float]:
    """sup_t distance between successive regularizations along eps_sequence."""
    runs = []
    for eps in eps_sequence:
        c = SolverConfig(eps_reg=eps, dt=cfg.dt, M=cfg.M, newton_tol=cfg.newton_tol,
                         newton_max=cfg.newton_max, record_every=cfg.record_every)
        runs.append(solve_controlled(rho0, eta, T, c))
    out = []
    for a, b in zip(runs, runs[1:]):
        sup = max(h_minus1_dist(sa, sb) for sa, sb in zip(a.states, b.states))
        out.append(sup)
    return out


# ---------------------------------------------------------------------------
# Estimate monitors
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DiagnosticsSeries:
    """Per-snapshot functionals and the worst margins of the monitored estimates.

    Margins are (slack side) - (tested side); every entry must stay above
    ``-tol_disc`` for the calibrated discretization tolerance of the run.
    """

    times: np.ndarray
    mass: np.ndarray
    entropy: np.ndarray
    fisher: np.ndarray
    min_rho: np.ndarray
    dist_ref: np.ndarray
    margins: dict = field(default_factory=dict)

    def worst(self, name: str) -> float:
        return float(np.min(self.margins[name]))


def _trapz(times, series) -> np.ndarray:
    """Cumulative trapezoid of series over times, aligned with times."""
    out = np.zeros(len(times))
    if len(times) > 1:
        seg = 0.5 * (series[1:] + series[:-1]) * np.diff(times)
        out[1:] = np.cumsum(seg)
    return out


def diagnostics(traj: Trajectory, eta: SpaceTimeControl, gamma0: GridDensity,
                cfg: SolverConfig) -> DiagnosticsSeries:
    """Evaluate the dissipation, energy, entropy-production, small-time and
    regularized-energy estimates along a trajectory with discrete quadrature."""
    grid = traj.grid
    require_same_grid(gamma0, traj.states[0])
    pot = cfg.potential()
    T = float(traj.times[-1])
    n = len(traj.times)

    mass = np.array([integrate(grid, s.values) for s in traj.states])
    ent = np.array([entropy(s) for s in traj.states])
    fis = np.array([fisher(s).value if not fisher(s).is_infinite else np.inf
                    for s in traj.states])
    minr = np.array([s.min() for s in traj.states])
    dref = np.array([h_minus1_dist(s, gamma0) for s in traj.states])

    s_gamma = entropy(gamma0)
    eta_rows = [eta.at_time(min(t, T * (1 - 1e-12)), T) for t in traj.times]
    eta_l2sq = np.array([integrate(grid, e**2) for e in eta_rows])
    eta_l2 = np.sqrt(eta_l2sq)

    # control paired against the dual-norm potential of (rho - gamma0)
    pair_pot = np.empty(n)
    pair_logrho = np.empty(n)
    dphi_sq = np.empty(n)
    pair_dphi = np.empty(n)
    neglog = np.empty(n)
    psi_int = np.empty(n)
    for i, s in enumerate(traj.states):
        diff = GridField(grid, s.values - gamma0.values)
        gpot = deriv_values(grid, neg_inv_laplacian(diff).values)
        pair_pot[i] = inner(grid, eta_rows[i], gpot)
        logr = np.log(np.clip(s.values, 1e-300, None))
        pair_logrho[i] = inner(grid, eta_rows[i], deriv_values(grid, logr))
        dphi = deriv_values(grid, pot.phi(s.values))
        dphi_sq[i] = integrate(grid, dphi**2)
        pair_dphi[i] = inner(grid, eta_rows[i], dphi)
        neglog[i] = integrate(grid, -logr)
        psi_int[i] = integrate(grid, pot.psi(s.values))

    margins = {}
    # dissipation bound for (1/2) d^2(rho(t), gamma0)
    lhs = 0.5 * dref**2 + _trapz(traj.times, 0.5 * (ent - s_gamma) + pair_pot)
    margins["disineq"] = (0.5 * dref[0] ** 2) - lhs

    # entropy-energy bound: S(t) + int (1/2) I + <eta, d log rho> <= S(0)
    lhs = ent + _trapz(traj.times, 0.5 * fis + pair_logrho)
    margins["SIfluc"] = ent[0] - lhs

    # entropy production: (1/2) S(T) + (1/8) int (-log 2 + int -log rho)
    lhs = 0.5 * ent + 0.125 * _trapz(traj.times, neglog - np.log(2.0))
    rhs = 0.5 * ent[0] + _trapz(traj.times, eta_l2sq)
    margins["EEprod"] = rhs - lhs

    # small-time bound on t S(rho(t)) + d^2(rho(t), uniform); the anchor must
    # carry zero entropy or the bound fails already in the continuum
    unif = GridDensity(grid, np.ones(grid.M))
    dunif = np.array([h_minus1_dist(s, unif) for s in traj.states])
    phi_t = traj.times * ent + dunif**2
    rhs = phi_t[0] + _trapz(traj.times, (0.5 * traj.times + 2.0 * dunif) * eta_l2)
    margins["smalltS"] = rhs - phi_t

    # regularized energy: int Psi(T) + int int (|d Phi|^2 + eta d Phi) <= int Psi(0)
    lhs = psi_int + _trapz(traj.times, dphi_sq + pair_dphi)
    margins["VazEnEst"] = psi_int[0] - lhs

    return DiagnosticsSeries(times=traj.times, mass=mass, entropy=ent, fisher=fis,
                             min_rho=minr, dist_ref=dref, margins=margins)


@dataclass(frozen=True)
class ContractionReport:
    times: np.ndarray
    distance: np.ndarray
    bound: np.ndarray

    @property
    def worst_margin(self) -> float:
        return float(np.min(self.bound - self.distance))


def contraction_test(rho1_0: GridDensity, rho2_0: GridDensity,
                     eta1: SpaceTimeControl, eta2: SpaceTimeControl,
                     T: float, cfg: SolverConfig) -> ContractionReport:
    """Two-run stability check: distance grows at most by the control gap."""
    require_same_grid(rho1_0, rho2_0)
    t1 = solve_controlled(rho1_0, eta1, T, cfg)
    t2 = solve_controlled(rho2_0, eta2, T, cfg)
    grid = t1.grid
    dist = np.array([h_minus1_dist(a, b) for a, b in zip(t1.states, t2.states)])
    gap = np.array([
        np.sqrt(integrate(grid, (eta1.at_time(min(t, T * (1 - 1e-12)), T)
                                 - eta2.at_time(min(t, T * (1 - 1e-12)), T))**2))
        for t in t1.times])
    bound = dist[0] + _trapz(t1.times, gap)
    return ContractionReport(times=t1.times, distance=dist, bound=bound)


# ---------------------------------------------------------------------------
# Two-velocity relaxation system
# ---------------------------------------------------------------------------

def _spectral_shift(grid: TorusGrid, values: np.ndarray, shift: float) -> np.ndarray:
    """Exact translation values(x - shift) for band-limited data."""
    k = grid.wavenumbers()
    return np.fft.ifft(np.fft.fft(values) * np.exp(-2j * np.pi * k * shift)).real


def collision_update(w1: np.ndarray, w2: np.ndarray, kcol: float, dt: float):
    """Exact flow of the pointwise collision system over dt.

    The sum s = w1 + w2 is conserved cell by cell and the difference decays as
    d(t) = d(0) exp(-2 kcol s t); stiffness-free for any dt.
    """
    s = w1 + w2
    d = (w1 - w2) * np.exp(-2.0 * kcol * s * dt)
    return 0.5 * (s + d), 0.5 * (s - d)


def carleman_meanfield_solve(w1_0: np.ndarray, w2_0: np.ndarray, grid: TorusGrid,
                             eps: float, T: float, dt: float | None = None,
                             record_every: int | None = None) -> Trajectory:
    """Integrate the two-velocity system at transport speed 1/eps and collision
    rate 1/eps^2; records density rho = w1 + w2 and flux j = (w1 - w2)/eps."""
    w1 = np.asarray(w1_0, dtype=float).copy()
    w2 = np.asarray(w2_0, dtype=float).copy()
    if np.any(w1 < 0.0) or np.any(w2 < 0.0):
        raise ValueError("velocity-component densities must be nonnegative")
    mass = integrate(grid, w1 + w2)
    if abs(mass - 1.0) > 1e-10:
        raise ValueError(f"total mass must be 1, got {mass}")
    c = 1.0 / eps
    kcol = 1.0 / eps**2
    if dt is None:
        dt = min(eps**2 / 8.0, T / 200.0)
    n_steps = max(1, int(round(T / dt)))
    dt = T / n_steps
    if record_every is None:
        record_every = max(1, n_steps // 50)

    times = [0.0]
    states = [GridDensity(grid, w1 + w2)]
    fluxes = [GridField(grid, (w1 - w2) / eps)]
    for n in range(n_steps):
        # half transport, exact collision flow, half transport
        w1 = _spectral_shift(grid, w1, c * dt / 2.0)
        w2 = _spectral_shift(grid, w2, -c * dt / 2.0)
        w1, w2 = collision_update(w1, w2, kcol, dt)
        w1 = _spectral_shift(grid, w1, c * dt / 2.0)
        w2 = _spectral_shift(grid, w2, -c * dt / 2.0)
        if (n + 1) % record_every == 0 or n == n_steps - 1:
            times.append((n + 1) * dt)
            states.append(GridDensity(grid, np.clip(w1 + w2, 0.0, None)))
            fluxes.append(GridField(grid, (w1 - w2) / eps))
    return Trajectory(np.array(times), states, fluxes=tuple(fluxes))


def well_prepared_flux(rho0: GridDensity) -> GridField:
    """Slaved-manifold flux j0 = -d rho0 / (2 rho0)."""
    grid = rho0.grid
    return GridField(grid, -deriv_values(grid, rho0.values) / (2.0 * rho0.values))


def split_components(rho0: GridDensity, j0: GridField, eps: float):
    """Velocity-component split w(+-) = (rho -+... (rho + eps j)/2, (rho - eps j)/2."""
    w1 = 0.5 * (rho0.values + eps * j0.values)
    w2 = 0.5 * (rho0.values - eps * j0.values)
    if w1.min() < 0.0 or w2.min() < 0.0:
        raise ValueError("data not well prepared: component densities go negative")
    return w1, w2


@dataclass(frozen=True)
class DiffusiveLimitRow:
    eps: float
    h1_error: float
    closure_residual: float


def diffusive_limit_sweep(rho0: GridDensity, eps_list, T: float,
                          cfg: SolverConfig | None = None) -> list[DiffusiveLimitRow]:
    """Compare the relaxation system at each eps against the scalar diffusion
    reference; reports the dual-norm error and the slaved-closure residual."""
    grid = rho0.grid
    if cfg is None:
        cfg = SolverConfig(eps_reg=0.05, dt=1e-4, M=grid.M, record_every=10**9)
    ref = solve_controlled(rho0, SpaceTimeControl.zero(grid), T, cfg).final()
    j0 = well_prepared_flux(rho0)
    rows = []
    for eps in eps_list:
        w1, w2 = split_components(rho0, j0, eps)
        traj = carleman_meanfield_solve(w1, w2, grid, eps, T)
        rho_T = traj.final()
        j_T = traj.fluxes[-1]
        err = h_minus1_dist(rho_T, ref)
        closure = 2.0 * rho_T.values * j_T.values + deriv_values(grid, rho_T.values)
        rows.append(DiffusiveLimitRow(eps=eps, h1_error=err,
                                      closure_residual=float(np.max(np.abs(closure)))))
    return rows
