"""Stochastic two-velocity particle system on the circle.

N particles carry positions in [0, 1) and velocities in {-1, +1}.  Dynamics
per step of size dt:

  * transport x += c v dt plus Brownian jitter sqrt(2 tau dt) xi, wrapped;
  * same-velocity pairs (i, j) within interaction range flip both velocities
    with probability (k/N) J_theta(r(x_i, x_j)) dt, where J_theta is a
    mollified kernel of range theta/2 and r the circle distance.

Pair events are realized by time-discretized thinning: per candidate ordered
pair a proposal fires with the dominating probability (k/2N) J_theta(0) dt and
is accepted with the ratio J(r/theta)/J(0) when the velocities match.
Accepted events are applied in a random processing order with first-come-wins
conflict resolution, so a particle flips at most once per step.  The
per-particle flip-probability bound (k/N) max(J_theta) (max neighbors) dt is
capped at 0.1 and steps are subdivided automatically when the cap would be
exceeded.  Candidate search uses cell lists of width >= theta, so the cost per
step is O(N + number of proposals).

Everything is a deterministic function of the ensemble's generator state.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy.integrate import quad

from .torus import GridDensity, GridField, TorusGrid, mollify

try:  # optional fast path for the conflict-resolution pass
    from numba import njit as _njit
    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    _HAVE_NUMBA = False

FLIP_PROB_CAP = 0.1

# Interaction kernel: bump profile in the circle-distance variable on
# [0, 1/2), positive at 0.  Normalized so that the induced kernel on the
# circle, y -> J_theta(r(x, y)), has unit mass: since the distance covers both
# arcs, the profile integrates to one half in the distance variable.  With
# this normalization the pair generator's mean-field limit carries the plain
# collision constant k in front of (w2^2 - w1^2), and the hydrodynamic
# diffusivity is 1/(2 rho) under c = 1/eps, k = 1/eps^2.
_HALF_BUMP_INTEGRAL = quad(lambda s: np.exp(-1.0 / (1.0 - s * s)), 0.0, 1.0,
                           limit=200)[0] / 2.0
_J_NORM = 0.5 / _HALF_BUMP_INTEGRAL


def interaction_kernel(u) -> np.ndarray:
    """J(u) on [0, 1/2): bump with unit circle mass; J(0) > 0."""
    u = np.asarray(u, dtype=float)
    out = np.zeros_like(u)
    inside = (u >= 0.0) & (u < 0.5)
    s = 2.0 * u[inside]
    out[inside] = _J_NORM * np.exp(-1.0 / (1.0 - s * s))
    return out


J_AT_ZERO = float(interaction_kernel(np.array([0.0]))[0])


def circle_distance(x, y) -> np.ndarray:
    d = np.abs(np.asarray(x) - np.asarray(y)) % 1.0
    return np.minimum(d, 1.0 - d)


@dataclass(frozen=True)
class KineticParams:
    c: float
    k: float
    tau: float
    theta: float
    N: int

    def __post_init__(self):
        if min(self.c, self.k, self.theta) <= 0.0 or self.tau < 0.0:
            raise ValueError("rates and ranges must be positive (tau may be zero)")
        if self.theta > 0.5:
            raise ValueError("interaction range theta must be at most 0.5")
        if self.N < 1:
            raise ValueError("particle count must be positive")

    @property
    def eps(self) -> float:
        return 1.0 / self.c

    @property
    def range_is_resolved(self) -> bool:
        """N theta >> 1 wanted; flag for callers to warn on."""
        return self.N * self.theta >= 10.0


@dataclass
class ParticleEnsemble:
    positions: np.ndarray          # float64 in [0, 1)
    velocities: np.ndarray         # int8 in {-1, +1}
    rng: np.random.Generator
    time: float = 0.0
    collision_count: int = 0

    def __post_init__(self):
        self.positions = np.ascontiguousarray(self.positions, dtype=np.float64)
        self.velocities = np.ascontiguousarray(self.velocities, dtype=np.int8)
        if self.positions.shape != self.velocities.shape:
            raise ValueError("positions and velocities must align")
        if np.any((self.positions < 0.0) | (self.positions >= 1.0)):
            raise ValueError("positions must lie in [0, 1)")
        if not np.all(np.abs(self.velocities) == 1):
            raise ValueError("velocities must be +-1")

    @property
    def N(self) -> int:
        return self.positions.size


def init_ensemble(rho0: GridDensity, j0: GridField | None, params: KineticParams,
                  seed: int) -> ParticleEnsemble:
    """Sample positions by inverse CDF from rho0 and assign velocity +1 with
    probability (rho0 + eps j0) / (2 rho0) at the sampled cell."""
    grid = rho0.grid
    eps = params.eps
    j_vals = np.zeros(grid.M) if j0 is None else j0.values
    w_plus = 0.5 * (rho0.values + eps * j_vals)
    w_minus = 0.5 * (rho0.values - eps * j_vals)
    if w_plus.min() < 0.0 or w_minus.min() < 0.0:
        raise ValueError("split weights negative: eps * j0 exceeds rho0 somewhere")

    rng = np.random.default_rng(seed)
    u = rng.random(params.N)
    cell_mass = rho0.values * grid.dx
    cum = np.cumsum(cell_mass)
    cum[-1] = 1.0
    idx = np.searchsorted(cum, u, side="right")
    idx = np.minimum(idx, grid.M - 1)
    lo = np.where(idx > 0, cum[np.maximum(idx - 1, 0)], 0.0)
    width = np.where(cell_mass[idx] > 0.0, cell_mass[idx], 1.0)
    frac = np.clip((u - lo) / width, 0.0, 1.0 - 1e-15)
    positions = (idx + frac) * grid.dx

    with np.errstate(invalid="ignore", divide="ignore"):
        p_plus = np.where(rho0.values > 0.0, w_plus / np.clip(rho0.values, 1e-300, None), 0.5)
    v = np.where(rng.random(params.N) < p_plus[idx], 1, -1).astype(np.int8)
    return ParticleEnsemble(positions=positions % 1.0, velocities=v, rng=rng)


# ---------------------------------------------------------------------------
# Stepping
# ---------------------------------------------------------------------------

def _resolve_conflicts_py(i_idx, j_idx, order, flipped):
    fired = np.zeros(order.size, dtype=np.bool_)
    for pos in range(order.size):
        e = order[pos]
        a, b = i_idx[e], j_idx[e]
        if not flipped[a] and not flipped[b]:
            flipped[a] = True
            flipped[b] = True
            fired[e] = True
    return fired


if _HAVE_NUMBA:
    _resolve_conflicts_jit = _njit(cache=True)(_resolve_conflicts_py)
else:  # pragma: no cover
    _resolve_conflicts_jit = _resolve_conflicts_py


def _resolve_conflicts(i_idx, j_idx, order, flipped):
    if i_idx.size > 512:
        return _resolve_conflicts_jit(i_idx, j_idx, order, flipped)
    return _resolve_conflicts_py(i_idx, j_idx, order, flipped)


def _collision_pass(ens: ParticleEnsemble, params: KineticParams, dt: float) -> int:
    """One thinned pair-flip pass at the current positions; returns #flips."""
    N = ens.N
    if N < 2:
        return 0
    rng = ens.rng
    theta = params.theta
    n_cells = max(2, int(np.floor(1.0 / theta)))
    cells = np.minimum((ens.positions * n_cells).astype(np.int64), n_cells - 1)
    order_sort = np.argsort(cells, kind="stable")
    counts = np.bincount(cells, minlength=n_cells)
    starts = np.concatenate(([0], np.cumsum(counts)))

    p_ord = 0.5 * (params.k / N) * (J_AT_ZERO / theta) * dt

    # candidate ordered-pair counts per cell pair: (c, c) and (c, c+1)
    m = counts.astype(np.int64)
    n_same = m * (m - 1)
    if n_cells > 2:
        right = np.roll(m, -1)
        n_adj = m * right
    else:
        n_adj = np.array([m[0] * m[1], 0], dtype=np.int64)

    # same-cell spaces hold both orientations of a pair, adjacent-cell spaces
    # one, so the adjacent channel runs at twice the ordered-pair probability
    prop_same = rng.binomial(n_same, min(p_ord, 1.0))
    prop_adj = rng.binomial(n_adj, min(2.0 * p_ord, 1.0))

    cell_same = np.repeat(np.arange(n_cells), prop_same)
    cell_adj = np.repeat(np.arange(n_cells), prop_adj)
    total = cell_same.size + cell_adj.size
    if total == 0:
        return 0

    # decode same-cell ordered pairs (i != j) within each cell
    abs_i = np.empty(total, dtype=np.int64)
    abs_j = np.empty(total, dtype=np.int64)
    if cell_same.size:
        mm = m[cell_same]
        L = rng.integers(0, mm * (mm - 1))
        i_loc = L // (mm - 1)
        r_loc = L % (mm - 1)
        j_loc = r_loc + (r_loc >= i_loc)
        abs_i[:cell_same.size] = order_sort[starts[cell_same] + i_loc]
        abs_j[:cell_same.size] = order_sort[starts[cell_same] + j_loc]
    if cell_adj.size:
        ma = m[cell_adj]
        nb = (cell_adj + 1) % n_cells
        mb = m[nb]
        L = rng.integers(0, ma * mb)
        i_loc = L // mb
        j_loc = L % mb
        abs_i[cell_same.size:] = order_sort[starts[cell_adj] + i_loc]
        abs_j[cell_same.size:] = order_sort[starts[nb] + j_loc]

    # thinning acceptance
    u = rng.random(total)
    r = circle_distance(ens.positions[abs_i], ens.positions[abs_j])
    same_v = ens.velocities[abs_i] == ens.velocities[abs_j]
    acc = same_v & (u * J_AT_ZERO < interaction_kernel(r / theta))
    if not np.any(acc):
        return 0
    abs_i = abs_i[acc]
    abs_j = abs_j[acc]

    # random processing order, first-come-wins
    order = rng.permutation(abs_i.size)
    flipped = np.zeros(N, dtype=np.bool_)
    fired = _resolve_conflicts(abs_i, abs_j, order, flipped)
    ens.velocities[flipped] = -ens.velocities[flipped]
    return int(np.count_nonzero(fired))


def _flip_bound(ens: ParticleEnsemble, params: KineticParams, dt: float) -> float:
    """Conservative per-particle flip-probability bound for one pass."""
    n_cells = max(2, int(np.floor(1.0 / params.theta)))
    cells = np.minimum((ens.positions * n_cells).astype(np.int64), n_cells - 1)
    counts = np.bincount(cells, minlength=n_cells)
    window = counts + np.maximum(np.roll(counts, 1), np.roll(counts, -1))
    max_neighbors = max(int(window.max()) - 1, 0)
    return (params.k / ens.N) * (J_AT_ZERO / params.theta) * max_neighbors * dt


def step_particles(ens: ParticleEnsemble, params: KineticParams, dt: float) -> ParticleEnsemble:
    """Advance the ensemble in place by dt (subdivided to honor the flip cap)."""
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    remaining = dt
    while remaining > 0.0:
        bound = _flip_bound(ens, params, remaining)
        n_sub = max(1, int(np.ceil(bound / FLIP_PROB_CAP)))
        h = remaining / n_sub
        # transport + diffusion
        ens.positions += params.c * h * ens.velocities
        if params.tau > 0.0:
            ens.positions += np.sqrt(2.0 * params.tau * h) * ens.rng.standard_normal(ens.N)
        ens.positions %= 1.0
        # pair flips
        ens.collision_count += _collision_pass(ens, params, h)
        ens.time += h
        remaining -= h
    return ens


# ---------------------------------------------------------------------------
# Empirical fields and runs
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EmpiricalField:
    grid: TorusGrid
    rho_hat: GridDensity
    j_hat: GridField
    bandwidth: float


def empirical_fields(ens: ParticleEnsemble, grid: TorusGrid, bandwidth: float,
                     eps: float) -> EmpiricalField:
    """Kernel-smoothed density and flux; the density integrates to one exactly."""
    if bandwidth < 2.0 * grid.dx:
        raise ValueError("bandwidth must be at least two cells")
    edges = np.linspace(0.0, 1.0, grid.M + 1)
    counts, _ = np.histogram(ens.positions, bins=edges)
    signed, _ = np.histogram(ens.positions, bins=edges,
                             weights=ens.velocities.astype(float))
    rho_raw = GridDensity.normalized(grid, counts.astype(float))
    j_raw = GridField(grid, signed / (ens.N * grid.dx * eps))
    return EmpiricalField(grid=grid, rho_hat=mollify(rho_raw, bandwidth),
                          j_hat=mollify(j_raw, bandwidth), bandwidth=bandwidth)


@dataclass(frozen=True)
class SimulationRecord:
    times: np.ndarray
    fields: tuple
    collision_counts: np.ndarray   # cumulative at each record time
    mean_velocity: np.ndarray
    wall_time: float


def simulate(ens: ParticleEnsemble, params: KineticParams, T: float, dt: float,
             grid: TorusGrid, bandwidth: float, n_records: int = 10) -> SimulationRecord:
    """Run to time T recording smoothed fields and event statistics."""
    import time as _time

    t0 = _time.perf_counter()
    n_steps = max(1, int(round(T / dt)))
    dt = T / n_steps
    record_at = {int(round(s * n_steps / n_records)) for s in range(1, n_records + 1)}
    times = [ens.time]
    fields = [empirical_fields(ens, grid, bandwidth, params.eps)]
    ccounts = [ens.collision_count]
    meanv = [float(np.mean(ens.velocities))]
    for n in range(1, n_steps + 1):
        step_particles(ens, params, dt)
        if n in record_at or n == n_steps:
            times.append(ens.time)
            fields.append(empirical_fields(ens, grid, bandwidth, params.eps))
            ccounts.append(ens.collision_count)
            meanv.append(float(np.mean(ens.velocities)))
    return SimulationRecord(times=np.array(times), fields=tuple(fields),
                            collision_counts=np.array(ccounts),
                            mean_velocity=np.array(meanv),
                            wall_time=_time.perf_counter() - t0)


def velocity_correlation(ens: ParticleEnsemble, r_lo: float, r_hi: float,
                         n_samples: int = 200_000) -> tuple[float, int]:
    """Sampled two-particle velocity correlation at separations in [r_lo, r_hi].

    Returns (E[v_i v_j] - E[v]^2 over sampled pairs in the window, #pairs).
    """
    rng = np.random.default_rng(12345)
    i = rng.integers(0, ens.N, n_samples)
    j = rng.integers(0, ens.N, n_samples)
    keep = i != j
    i, j = i[keep], j[keep]
    r = circle_distance(ens.positions[i], ens.positions[j])
    win = (r >= r_lo) & (r < r_hi)
    n_win = int(np.count_nonzero(win))
    if n_win == 0:
        return 0.0, 0
    vv = ens.velocities[i[win]].astype(float) * ens.velocities[j[win]].astype(float)
    vbar = float(np.mean(ens.velocities))
    return float(np.mean(vv)) - vbar**2, n_win


# ---------------------------------------------------------------------------
# Hydrodynamic sweep
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class HydroSweepRow:
    eps: float
    N: int
    replica: int
    error: float


@dataclass(frozen=True)
class HydroSweepSummary:
    eps: float
    N: int
    mean_error: float
    stderr: float


def default_theta(N: int) -> float:
    return min(0.5, 1.0 / np.sqrt(N))


def hydro_sweep(rho0: GridDensity, eps_list, N_list, T: float, replicas: int = 8,
                master_seed: int = 0, bandwidth: float = 0.02,
                tau_of_eps=None, theta_of_N=None, progress=None):
    """Hydrodynamic-scaling experiment: c = 1/eps, k = 1/eps^2 against the
    scalar diffusion reference, with well-prepared flux data.

    Default schedules tau = eps and theta = N^{-1/2} (both overridable).
    Returns (rows, summaries) with replica errors and per-cell mean/stderr.
    """
    from .diffusion import (SolverConfig, SpaceTimeControl, solve_controlled,
                            well_prepared_flux)
    from .manifest import seed_split
    from .torus import h_minus1_dist

    grid = rho0.grid
    cfg = SolverConfig(eps_reg=0.05, dt=1e-4, M=grid.M, record_every=10**9)
    ref = solve_controlled(rho0, SpaceTimeControl.zero(grid), T, cfg).final()
    j0 = well_prepared_flux(rho0)
    tau_of_eps = tau_of_eps or (lambda e: e)
    theta_of_N = theta_of_N or default_theta

    labels = [f"hydro-eps{eps}-N{N}-rep{r}"
              for eps, N in zip(eps_list, N_list) for r in range(replicas)]
    seeds = seed_split(master_seed, labels)
    rows = []
    summaries = []
    li = 0
    for eps, N in zip(eps_list, N_list):
        params = KineticParams(c=1.0 / eps, k=1.0 / eps**2, tau=tau_of_eps(eps),
                               theta=theta_of_N(N), N=N)
        if not params.range_is_resolved:
            raise ValueError(f"N*theta = {N * params.theta:.1f} too small for "
                             f"a resolved interaction range")
        errs = []
        for r in range(replicas):
            ens = init_ensemble(rho0, j0, params, seeds[labels[li]])
            li += 1
            dt = _sweep_dt(params)
            n_steps = max(1, int(round(T / dt)))
            for _ in range(n_steps):
                step_particles(ens, params, T / n_steps)
            emp = empirical_fields(ens, grid, bandwidth, eps)
            err = h_minus1_dist(emp.rho_hat, ref)
            errs.append(err)
            rows.append(HydroSweepRow(eps=eps, N=N, replica=r, error=err))
            if progress is not None:
                progress(eps, N, r, err)
        errs = np.array(errs)
        summaries.append(HydroSweepSummary(
            eps=eps, N=N, mean_error=float(errs.mean()),
            stderr=float(errs.std(ddof=1) / np.sqrt(len(errs))) if len(errs) > 1 else 0.0))
    return rows, summaries


def _sweep_dt(params: KineticParams) -> float:
    """Step just under the flip cap for a near-uniform configuration."""
    per_particle_rate = params.k * 2.2  # k * rho_max-ish * kernel mass both sides
    return FLIP_PROB_CAP / per_particle_rate


# ---------------------------------------------------------------------------
# Checkpointing
# ---------------------------------------------------------------------------

def save_checkpoint(ens: ParticleEnsemble, path) -> None:
    state = json.dumps(ens.rng.bit_generator.state)
    np.savez(path, positions=ens.positions, velocities=ens.velocities,
             time=np.array([ens.time]), collisions=np.array([ens.collision_count]),
             rng_state=np.frombuffer(state.encode(), dtype=np.uint8))


def load_checkpoint(path) -> ParticleEnsemble:
    data = np.load(path)
    rng = np.random.default_rng()
    rng.bit_generator.state = json.loads(bytes(data["rng_state"]).decode())
    return ParticleEnsemble(positions=data["positions"],
                            velocities=data["velocities"], rng=rng,
                            time=float(data["time"][0]),
                            collision_count=int(data["collisions"][0]))
