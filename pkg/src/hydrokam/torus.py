"""Grids, spectral transforms and metric structure on the unit torus.

Fields live on a uniform M-cell finite-volume grid over [0, 1) with periodic
wrap; densities are cell averages, quadrature is the midpoint rule, so mass is
``dx * sum(values)``.  The Fourier convention is the continuous one,

    coeff[k] = integral m(x) exp(-2 pi i k x) dx,

realized by the midpoint-rule DFT with the half-cell phase factored in.  Under
this convention the dual Dirichlet norm of a mean-zero field has the closed
form ``sqrt(sum_{k!=0} |coeff[k]|^2 / (2 pi k)^2)``, and the order-1
Wasserstein distance on the circle reduces to a weighted-median formula on the
cumulative differences.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .extended import InfiniteNormError

MASS_TOL = 1e-12
MEAN_TOL = 1e-10
NEG_CLAMP = 1e-13


class GridMismatchError(ValueError):
    """Raised when two fields living on different grids are combined."""


@dataclass(frozen=True)
class TorusGrid:
    """Uniform cell-centered grid on the torus: nodes at (i + 1/2)/M."""

    M: int
    dx: float
    nodes: np.ndarray = field(repr=False, compare=False)

    def wavenumbers(self) -> np.ndarray:
        """Integer mode numbers in FFT order: 0, 1, ..., M/2-1, -M/2, ..., -1."""
        return np.fft.fftfreq(self.M, d=1.0 / self.M)

    def same_as(self, other: "TorusGrid") -> bool:
        return self.M == other.M


def make_grid(M: int) -> TorusGrid:
    if M < 8 or M % 2 != 0:
        raise ValueError(f"grid size must be an even integer >= 8, got {M}")
    dx = 1.0 / M
    nodes = (np.arange(M) + 0.5) * dx
    return TorusGrid(M=int(M), dx=dx, nodes=nodes)


@dataclass(frozen=True)
class GridField:
    """Real-valued function on the grid (test functions, momenta, log-densities)."""

    grid: TorusGrid
    values: np.ndarray

    def __post_init__(self):
        v = np.ascontiguousarray(np.asarray(self.values, dtype=float))
        if v.shape != (self.grid.M,):
            raise ValueError(f"expected {self.grid.M} values, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("field values must be finite")
        object.__setattr__(self, "values", v)

    def mean(self) -> float:
        return self.grid.dx * float(np.sum(self.values))


@dataclass(frozen=True)
class GridDensity:
    """Nonnegative cell-averaged probability density: dx * sum(values) == 1."""

    grid: TorusGrid
    values: np.ndarray

    def __post_init__(self):
        v = np.ascontiguousarray(np.asarray(self.values, dtype=float))
        if v.shape != (self.grid.M,):
            raise ValueError(f"expected {self.grid.M} values, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("density values must be finite")
        neg = v < 0.0
        if np.any(neg):
            if v.min() < -NEG_CLAMP:
                raise ValueError(f"density has negative cell {v.min():.3e}")
            v = np.where(neg, 0.0, v)  # absorb round-off only
        mass = self.grid.dx * float(np.sum(v))
        if abs(mass - 1.0) > MASS_TOL:
            raise ValueError(f"density mass {mass!r} deviates from 1 beyond {MASS_TOL}")
        object.__setattr__(self, "values", v)

    @classmethod
    def normalized(cls, grid: TorusGrid, values) -> "GridDensity":
        v = np.asarray(values, dtype=float)
        if np.any(v < -NEG_CLAMP):
            raise ValueError("cannot normalize a field with negative cells")
        v = np.clip(v, 0.0, None)
        total = grid.dx * float(np.sum(v))
        if total <= 0.0:
            raise ValueError("cannot normalize the zero field")
        return cls(grid, v / total)

    def min(self) -> float:
        return float(self.values.min())


def uniform_density(grid: TorusGrid) -> GridDensity:
    return GridDensity(grid, np.ones(grid.M))


def as_field(rho: GridDensity) -> GridField:
    return GridField(rho.grid, rho.values)


def require_same_grid(a, b) -> None:
    if not a.grid.same_as(b.grid):
        raise GridMismatchError(f"grid sizes differ: {a.grid.M} vs {b.grid.M}")


# ---------------------------------------------------------------------------
# Spectral transforms
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SpectralCoeffs:
    """Fourier coefficients in FFT mode order under the continuous convention."""

    grid: TorusGrid
    modes: np.ndarray

    def __post_init__(self):
        m = np.ascontiguousarray(np.asarray(self.modes, dtype=complex))
        if m.shape != (self.grid.M,):
            raise ValueError("coefficient count must match the grid")
        object.__setattr__(self, "modes", m)


def _phase(grid: TorusGrid) -> np.ndarray:
    # midpoint nodes shift the plain DFT by half a cell
    k = grid.wavenumbers()
    return np.exp(-1j * np.pi * k / grid.M)


def spectral_transform(f: GridField) -> SpectralCoeffs:
    grid = f.grid
    modes = _phase(grid) * np.fft.fft(f.values) / grid.M
    return SpectralCoeffs(grid, modes)


def inverse_spectral_transform(c: SpectralCoeffs) -> GridField:
    grid = c.grid
    values = np.fft.ifft(c.modes / _phase(grid) * grid.M)
    return GridField(grid, values.real)


def _fft_values(grid: TorusGrid, values: np.ndarray) -> np.ndarray:
    return _phase(grid) * np.fft.fft(values) / grid.M


def _ifft_modes(grid: TorusGrid, modes: np.ndarray) -> np.ndarray:
    return np.fft.ifft(modes / _phase(grid) * grid.M).real


def deriv_values(grid: TorusGrid, values: np.ndarray) -> np.ndarray:
    """Spectral first derivative; the unpaired top mode is dropped to stay real."""
    k = grid.wavenumbers()
    mult = 2j * np.pi * k
    mult[grid.M // 2] = 0.0
    return _ifft_modes(grid, mult * _fft_values(grid, values))


def second_deriv_values(grid: TorusGrid, values: np.ndarray) -> np.ndarray:
    k = grid.wavenumbers()
    return _ifft_modes(grid, -((2.0 * np.pi * k) ** 2) * _fft_values(grid, values))


def derivative(f: GridField) -> GridField:
    return GridField(f.grid, deriv_values(f.grid, f.values))


def second_derivative(f: GridField) -> GridField:
    return GridField(f.grid, second_deriv_values(f.grid, f.values))


def integrate(grid: TorusGrid, values: np.ndarray) -> float:
    return grid.dx * float(np.sum(values))


def inner(grid: TorusGrid, a: np.ndarray, b: np.ndarray) -> float:
    """Midpoint-rule L2 pairing dx * sum(a * b)."""
    return grid.dx * float(np.dot(a, b))


# ---------------------------------------------------------------------------
# Metric structure
# ---------------------------------------------------------------------------

def neg_inv_laplacian(m: GridField) -> GridField:
    """Solve -g'' = m spectrally for mean-zero m; result has zero mean."""
    if abs(m.mean()) > MEAN_TOL:
        raise ValueError(f"input must have zero mean, got {m.mean():.3e}")
    grid = m.grid
    k = grid.wavenumbers()
    denom = (2.0 * np.pi * k) ** 2
    modes = _fft_values(grid, m.values)
    out = np.zeros_like(modes)
    nz = k != 0
    out[nz] = modes[nz] / denom[nz]
    return GridField(grid, _ifft_modes(grid, out))


def h_minus1_norm(m: GridField) -> float:
    """Dual Dirichlet-energy norm of a mean-zero field.

    The norm of a field with nonzero mean is infinite; that branch is signaled
    by raising :class:`InfiniteNormError`.
    """
    if abs(m.mean()) > MEAN_TOL:
        raise InfiniteNormError(
            f"dual norm is infinite off the mean-zero subspace (mean {m.mean():.3e})"
        )
    grid = m.grid
    k = grid.wavenumbers()
    modes = _fft_values(grid, m.values)
    nz = k != 0
    return float(np.sqrt(np.sum(np.abs(modes[nz]) ** 2 / (2.0 * np.pi * k[nz]) ** 2)))


def h_minus1_dist(rho: GridDensity, gamma: GridDensity) -> float:
    require_same_grid(rho, gamma)
    return h_minus1_norm(GridField(rho.grid, rho.values - gamma.values))


def w1_circle(rho: GridDensity, gamma: GridDensity) -> float:
    """Order-1 Wasserstein distance on the circle between two grid densities.

    Cell masses are treated as atoms at the cell centers; the distance is the
    integral of |F - med| where F is the cumulative of rho - gamma on the arcs
    between consecutive atoms and med is the (weighted) median of its values.
    Exact for that atomic interpretation, O(M log M).
    """
    require_same_grid(rho, gamma)
    dx = rho.grid.dx
    cum = np.cumsum((rho.values - gamma.values) * dx)
    med = np.median(cum)
    return dx * float(np.sum(np.abs(cum - med)))


# ---------------------------------------------------------------------------
# Mollification
# ---------------------------------------------------------------------------

def bump_kernel(u: np.ndarray) -> np.ndarray:
    """Standard bump exp(-1/(1-u^2)) on (-1, 1), unnormalized."""
    u = np.asarray(u, dtype=float)
    out = np.zeros_like(u)
    inside = np.abs(u) < 1.0
    out[inside] = np.exp(-1.0 / (1.0 - u[inside] ** 2))
    return out


def mollifier_weights(grid: TorusGrid, eps: float) -> np.ndarray:
    """Discrete periodic mollifier: bump of bandwidth eps sampled at cell offsets.

    Weights sum to one exactly, so convolution preserves mass and maps
    nonnegative fields to nonnegative fields.
    """
    if not (0.0 < eps <= 0.5):
        raise ValueError(f"mollifier bandwidth must lie in (0, 0.5], got {eps}")
    radius = int(np.ceil(eps / grid.dx)) - 1
    radius = max(radius, 0)
    offsets = np.arange(-radius, radius + 1) * grid.dx
    w = bump_kernel(offsets / eps)
    if w.sum() <= 0.0:
        w = np.array([1.0])
    return w / w.sum()


def mollify(f, eps: float):
    """Periodic mollification; returns the same type it is given."""
    grid = f.grid
    w = mollifier_weights(grid, eps)
    radius = (len(w) - 1) // 2
    out = np.zeros(grid.M)
    for j, wj in enumerate(w):
        out += wj * np.roll(f.values, j - radius)
    if isinstance(f, GridDensity):
        return GridDensity(grid, np.clip(out, 0.0, None))
    return GridField(grid, out)
