"""Cyclic (periodic) tridiagonal solves via Sherman-Morrison."""

from __future__ import annotations

import numpy as np
from scipy.linalg import solve_banded


def solve_cyclic_tridiagonal(lower, diag, upper, rhs):
    """Solve A x = rhs for A cyclic tridiagonal.

    Row i of A is ``lower[i]*x[i-1] + diag[i]*x[i] + upper[i]*x[i+1]`` with
    periodic index wrap, so ``lower[0]`` sits at A[0, n-1] and ``upper[n-1]``
    at A[n-1, 0].
    """
    lower = np.asarray(lower, dtype=float)
    diag = np.asarray(diag, dtype=float)
    upper = np.asarray(upper, dtype=float)
    rhs = np.asarray(rhs, dtype=float)
    n = diag.size
    if n < 3:
        a = np.zeros((n, n))
        for i in range(n):
            a[i, i] += diag[i]
            a[i, (i - 1) % n] += lower[i]
            a[i, (i + 1) % n] += upper[i]
        return np.linalg.solve(a, rhs)

    beta = lower[0]      # A[0, n-1]
    alpha = upper[-1]    # A[n-1, 0]
    gamma = -diag[0]

    d = diag.copy()
    d[0] -= gamma
    d[-1] -= alpha * beta / gamma

    ab = np.zeros((3, n))
    ab[0, 1:] = upper[:-1]
    ab[1, :] = d
    ab[2, :-1] = lower[1:]

    u = np.zeros(n)
    u[0] = gamma
    u[-1] = alpha

    y = solve_banded((1, 1), ab, rhs)
    z = solve_banded((1, 1), ab, u)
    # v = (1, 0, ..., 0, beta/gamma)
    vy = y[0] + beta / gamma * y[-1]
    vz = z[0] + beta / gamma * z[-1]
    return y - z * (vy / (1.0 + vz))


def solve_cyclic_tridiagonal_transposed(lower, diag, upper, rhs):
    """Solve A^T x = rhs with A given by the same band convention as above."""
    n = len(diag)
    lt = np.empty(n)
    ut = np.empty(n)
    # (A^T)[i, i-1] = A[i-1, i] = upper[i-1];  (A^T)[i, i+1] = A[i+1, i] = lower[i+1]
    lt[:] = np.roll(np.asarray(upper, dtype=float), 1)
    ut[:] = np.roll(np.asarray(lower, dtype=float), -1)
    return solve_cyclic_tridiagonal(lt, diag, ut, rhs)
