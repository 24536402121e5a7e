"""Exact maximum-weight perfect matching on dense n x n weight matrices.

The solver is the shortest-augmenting-path form of the Jonker-Volgenant
algorithm: rows are inserted one at a time, and each insertion runs a
Dijkstra-like search over reduced costs while maintaining dual potentials.
Each augmentation is O(n^2), so a full solve is O(n^3).

Among optimal permutations the lexicographically smallest ``dest_of`` is
returned, which makes results reproducible and independent of the order in
which the search happened to visit columns.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np


@dataclass(frozen=True)
class Permutation:
    """A bijection source -> destination; ``dest_of[s]`` is the destination of ``s``."""

    dest_of: tuple[int, ...]

    def __post_init__(self) -> None:
        dest = tuple(int(d) for d in self.dest_of)
        if sorted(dest) != list(range(len(dest))):
            raise ValueError(f"dest_of is not a bijection: {dest}")
        object.__setattr__(self, "dest_of", dest)

    @property
    def n(self) -> int:
        return len(self.dest_of)

    @classmethod
    def identity(cls, n: int) -> "Permutation":
        return cls(tuple(range(n)))

    def inverse(self) -> "Permutation":
        inv = [0] * self.n
        for s, d in enumerate(self.dest_of):
            inv[d] = s
        return Permutation(tuple(inv))

    def as_matrix(self) -> np.ndarray:
        p = np.zeros((self.n, self.n))
        p[np.arange(self.n), self.dest_of] = 1.0
        return p

    def __iter__(self):
        return iter(enumerate(self.dest_of))


def _as_weight_matrix(w) -> np.ndarray:
    arr = np.asarray(w, dtype=float)
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
        raise ValueError(f"weight matrix must be square, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("weight matrix contains non-finite entries")
    return arr


def _solve_min_cost(cost: list[list[float]], n: int):
    """Shortest augmenting path assignment; returns (row_to_col, u, v).

    Potentials satisfy cost[i][j] - u[i] - v[j] >= 0 everywhere, with equality
    on assigned pairs.
    """
    inf = math.inf
    u = [0.0] * (n + 1)
    v = [0.0] * (n + 1)
    # col_owner[j] = row assigned to column j (1-based, 0 = free); column 0 is virtual.
    col_owner = [0] * (n + 1)
    way = [0] * (n + 1)
    for i in range(1, n + 1):
        col_owner[0] = i
        j0 = 0
        minv = [inf] * (n + 1)
        used = [False] * (n + 1)
        while True:
            used[j0] = True
            i0 = col_owner[j0]
            row = cost[i0 - 1]
            ui0 = u[i0]
            delta = inf
            j1 = 0
            for j in range(1, n + 1):
                if not used[j]:
                    cur = row[j - 1] - ui0 - v[j]
                    if cur < minv[j]:
                        minv[j] = cur
                        way[j] = j0
                    if minv[j] < delta:
                        delta = minv[j]
                        j1 = j
            for j in range(n + 1):
                if used[j]:
                    u[col_owner[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if col_owner[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            col_owner[j0] = col_owner[j1]
            j0 = j1
    row_to_col = [0] * n
    for j in range(1, n + 1):
        row_to_col[col_owner[j] - 1] = j - 1
    return row_to_col, u[1:], v[1:]


def _lex_smallest(dest: list[int], tight: list[list[int]]) -> list[int]:
    """Lexicographically smallest perfect matching inside the tight-edge graph.

    ``dest`` is a perfect matching using only tight edges. Row ``s`` is moved
    to a smaller column ``d`` whenever an alternating cycle through unfixed
    rows frees ``d`` while absorbing the column ``s`` gives up.
    """
    n = len(dest)
    owner = [0] * n
    for s, d in enumerate(dest):
        owner[d] = s
    fixed = [False] * n

    def find_path(r: int, target: int, visited: list[bool], path: list[tuple[int, int]]) -> bool:
        for c in tight[r]:
            if visited[c]:
                continue
            if c == target:
                path.append((r, c))
                return True
            o = owner[c]
            if fixed[o]:
                continue
            visited[c] = True
            path.append((r, c))
            if find_path(o, target, visited, path):
                return True
            path.pop()
        return False

    for s in range(n):
        current = dest[s]
        for d in tight[s]:
            if d >= current:
                break
            o = owner[d]
            if fixed[o]:
                continue
            visited = [False] * n
            visited[d] = True
            path: list[tuple[int, int]] = []
            if find_path(o, current, visited, path):
                dest[s] = d
                owner[d] = s
                for r, c in path:
                    dest[r] = c
                    owner[c] = r
                break
        fixed[s] = True
    return dest


def max_weight_assignment(w) -> tuple[Permutation, float]:
    """Maximum-weight perfect matching of a square weight matrix.

    Returns the optimal permutation (lexicographically smallest among ties)
    and its total weight ``sum(w[s, dest_of[s]])``.
    """
    arr = _as_weight_matrix(w)
    n = arr.shape[0]
    if n == 0:
        return Permutation(()), 0.0
    cost = (-arr).tolist()
    dest, u, v = _solve_min_cost(cost, n)

    scale = float(np.max(np.abs(arr))) if arr.size else 0.0
    tol = 1e-12 * max(scale, 1.0) * n
    tight = [
        [j for j in range(n) if cost[i][j] - u[i] - v[j] <= tol]
        for i in range(n)
    ]
    for i, j in enumerate(dest):
        if j not in tight[i]:
            tight[i].append(j)
            tight[i].sort()
    best = float(sum(arr[i, dest[i]] for i in range(n)))
    lex = _lex_smallest(list(dest), tight)
    lex_total = float(sum(arr[i, lex[i]] for i in range(n)))
    if lex_total >= best - tol:
        dest, best = lex, lex_total
    return Permutation(tuple(dest)), best


def support_perfect_matching(mask) -> Optional[Permutation]:
    """A perfect matching that uses only ``True`` cells, or ``None`` if none exists."""
    arr = np.asarray(mask, dtype=bool)
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
        raise ValueError(f"mask must be square, got shape {arr.shape}")
    n = arr.shape[0]
    perm, weight = max_weight_assignment(arr.astype(float))
    if round(weight) != n:
        return None
    return perm


def permutation_weight(w: Sequence[Sequence[float]], perm: Permutation) -> float:
    return float(sum(w[s][d] for s, d in perm))
