"""Seeded generators for smooth random densities, fields and controls.

Used by the invariant suite and the randomized experiments; everything is a
deterministic function of the supplied generator state.
"""

from __future__ import annotations

import numpy as np

from .torus import GridDensity, GridField, TorusGrid


def random_field(grid: TorusGrid, rng: np.random.Generator, modes: int = 6,
                 amplitude: float = 1.0, zero_mean: bool = False) -> GridField:
    """Band-limited random field with 1/k-decaying mode amplitudes."""
    x = grid.nodes
    vals = np.zeros(grid.M)
    if not zero_mean:
        vals += amplitude * rng.standard_normal()
    for k in range(1, modes + 1):
        a, b = rng.standard_normal(2) * amplitude / k
        vals += a * np.cos(2 * np.pi * k * x) + b * np.sin(2 * np.pi * k * x)
    if zero_mean:
        vals -= vals.mean()
    return GridField(grid, vals)


def random_density(grid: TorusGrid, rng: np.random.Generator, modes: int = 6,
                   amplitude: float = 0.5) -> GridDensity:
    """Strictly positive smooth random density, exp of a band-limited field."""
    g = random_field(grid, rng, modes=modes, amplitude=amplitude, zero_mean=True)
    return GridDensity.normalized(grid, np.exp(g.values))


def random_control_values(n_blocks: int, grid: TorusGrid, rng: np.random.Generator,
                          modes: int = 3, amplitude: float = 0.5) -> np.ndarray:
    """(n_blocks, M) array of band-limited control profiles."""
    rows = [random_field(grid, rng, modes=modes, amplitude=amplitude).values
            for _ in range(n_blocks)]
    return np.stack(rows)
