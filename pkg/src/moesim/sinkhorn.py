"""Sinkhorn-Knopp scaling of a traffic matrix towards doubly stochastic form."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DEFAULT_TOLERANCE = 1e-6
DEFAULT_MAX_ITERS = 10_000
DEFAULT_EPSILON = 1e-9


class SinkhornError(RuntimeError):
    pass


class SinkhornDidNotConverge(SinkhornError):
    def __init__(self, residual: float, tolerance: float, iterations: int):
        super().__init__(
            f"Sinkhorn did not converge: residual {residual:.3e} > tolerance {tolerance:.3e} "
            f"after {iterations} iterations"
        )
        self.residual = residual
        self.tolerance = tolerance
        self.iterations = iterations


@dataclass(frozen=True, eq=False)
class BistochasticMatrix:
    values: np.ndarray
    residual: float
    tolerance: float
    iterations: int = 0

    @property
    def n(self) -> int:
        return int(self.values.shape[0])


def sum_residual(values: np.ndarray) -> float:
    """Max-norm deviation of any row or column sum from 1."""
    if values.size == 0:
        return 0.0
    rows = np.abs(values.sum(axis=1) - 1.0).max()
    cols = np.abs(values.sum(axis=0) - 1.0).max()
    return float(max(rows, cols))


def normalize(
    m,
    tolerance: float = DEFAULT_TOLERANCE,
    max_iters: int = DEFAULT_MAX_ITERS,
    epsilon: float = DEFAULT_EPSILON,
) -> BistochasticMatrix:
    """Alternate row and column normalization until sums are within ``tolerance`` of 1.

    ``epsilon`` is relative to the largest entry: ``epsilon * max(m)`` is added
    to every cell first so that rows or columns with no traffic still admit a
    doubly stochastic scaling. With ``epsilon=0`` zeros stay exactly zero.
    """
    counts = getattr(m, "counts", m)
    a = np.array(counts, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"matrix must be square, got shape {a.shape}")
    if tolerance <= 0:
        raise ValueError("tolerance must be positive")
    if epsilon < 0:
        raise ValueError("epsilon must be nonnegative")
    if np.any(a < 0):
        raise ValueError("matrix entries must be nonnegative")
    n = a.shape[0]
    if n == 0:
        return BistochasticMatrix(a, 0.0, tolerance)

    peak = a.max()
    if peak <= 0:
        raise SinkhornError("cannot normalize an all-zero matrix")
    a += epsilon * peak
    if np.any(a.sum(axis=1) == 0) or np.any(a.sum(axis=0) == 0):
        raise SinkhornError("matrix has an all-zero row or column; use epsilon > 0")

    a /= peak
    # iterate on scaling vectors: the scaled matrix is diag(r) @ a @ diag(c)
    r = np.ones(n)
    c = np.ones(n)
    row_sums = a.sum(axis=1)
    col_sums = a.sum(axis=0)
    it = 0
    while True:
        residual = max(float(np.abs(row_sums - 1.0).max()), float(np.abs(col_sums - 1.0).max()))
        if residual <= tolerance or it >= max_iters:
            break
        r /= row_sums
        col_sums = c * (r @ a)
        c /= col_sums
        row_sums = r * (a @ c)
        col_sums = np.ones(n)
        it += 1
    a = r[:, None] * a * c[None, :]
    residual = sum_residual(a)
    if residual > tolerance:
        raise SinkhornDidNotConverge(residual, tolerance, it)
    a.setflags(write=False)
    return BistochasticMatrix(a, residual, tolerance, it)
