"""Independent brute-force oracles used by the invariant suite and the tests.

These deliberately avoid the fast paths they verify: the transport oracle is a
linear program over couplings, the dual-norm oracle a numerical sup over a
truncated test class, entropy/Fisher oracles plain high-resolution quadrature.
"""

from __future__ import annotations

import numpy as np
from scipy.optimize import linprog, minimize

from .torus import GridDensity, GridField, TorusGrid, inner


def w1_atoms_lp(positions, weights_a, weights_b) -> float:
    """Order-1 transport cost between atomic measures on the circle via a
    linear program over couplings (intended for a handful of atoms)."""
    positions = np.asarray(positions, dtype=float)
    a = np.asarray(weights_a, dtype=float)
    b = np.asarray(weights_b, dtype=float)
    n = positions.size
    d = np.abs(positions[:, None] - positions[None, :]) % 1.0
    cost = np.minimum(d, 1.0 - d).ravel()
    A_eq = []
    b_eq = []
    for i in range(n):
        row = np.zeros((n, n))
        row[i, :] = 1.0
        A_eq.append(row.ravel())
        b_eq.append(a[i])
    for j in range(n - 1):   # last column constraint is redundant
        col = np.zeros((n, n))
        col[:, j] = 1.0
        A_eq.append(col.ravel())
        b_eq.append(b[j])
    res = linprog(cost, A_eq=np.array(A_eq), b_eq=np.array(b_eq),
                  bounds=(0.0, None), method="highs")
    if not res.success:
        raise RuntimeError(f"transport LP failed: {res.message}")
    return float(res.fun)


def w1_grid_lp(rho: GridDensity, gamma: GridDensity) -> float:
    """LP transport distance treating every grid cell as an atom at its center."""
    grid = rho.grid
    return w1_atoms_lp(grid.nodes, rho.values * grid.dx, gamma.values * grid.dx)


def h_minus1_sup_oracle(m: GridField, n_modes: int = 4) -> float:
    """sup <m, phi> over unit-Dirichlet-energy phi in a truncated Fourier class."""
    grid = m.grid
    x = grid.nodes
    basis = []
    for k in range(1, n_modes + 1):
        basis.append(np.cos(2 * np.pi * k * x))
        basis.append(np.sin(2 * np.pi * k * x))
    basis = np.stack(basis)
    dbasis = np.stack([
        row for k in range(1, n_modes + 1)
        for row in (-2 * np.pi * k * np.sin(2 * np.pi * k * x),
                    2 * np.pi * k * np.cos(2 * np.pi * k * x))
    ])

    def neg_ratio(c):
        phi = c @ basis
        dphi = c @ dbasis
        energy = inner(grid, dphi, dphi)
        if energy <= 1e-14:
            return 0.0
        return -inner(grid, m.values, phi) / np.sqrt(energy)

    best = 0.0
    for s in range(3):
        c0 = np.zeros(2 * n_modes)
        c0[s % len(c0)] = 1.0
        res = minimize(neg_ratio, c0, method="Nelder-Mead",
                       options={"xatol": 1e-12, "fatol": 1e-14, "maxiter": 20000})
        best = max(best, -float(res.fun))
    return best


def functional_quadrature(fn, resolution: int = 1 << 15) -> float:
    """Midpoint quadrature of fn over [0, 1) at high resolution."""
    x = (np.arange(resolution) + 0.5) / resolution
    return float(np.mean(fn(x)))


def densify(rho: GridDensity, resolution: int = 1 << 15):
    """Piecewise-constant extension of a grid density to a fine midpoint grid."""
    grid = rho.grid
    x = (np.arange(resolution) + 0.5) / resolution
    idx = np.minimum((x * grid.M).astype(int), grid.M - 1)
    return x, rho.values[idx]


def sample_triangle_inequality(metric, points) -> float:
    """Worst violation of the triangle inequality over all triples."""
    n = len(points)
    worst = 0.0
    d = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            d[i, j] = d[j, i] = metric(points[i], points[j])
    for i in range(n):
        for j in range(n):
            for k in range(n):
                worst = max(worst, d[i, j] - d[i, k] - d[k, j])
    return worst


def grid_totals(grid: TorusGrid, values) -> float:
    return grid.dx * float(np.sum(values))
