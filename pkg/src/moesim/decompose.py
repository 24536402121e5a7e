"""Traffic matrix -> ordered schedule of circuit matchings.

Two decomposers are provided:

* BvN: Sinkhorn-normalize, peel permutations off the bistochastic matrix
  (``bvn_decompose``), then map coefficients back to token allocations
  against a budget of the largest row/column sum (``bvn_allocate``).
  Whatever the coefficients fail to cover is cleared by greedy max-weight
  matchings tagged ``cleanup``.
* Greedy max-weight: repeatedly take the maximum-weight permutation of the
  residual token matrix and clear the selected entries completely.

Both satisfy exact per-pair token conservation.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence, Union

import numpy as np

from .assignment import Permutation, max_weight_assignment
from .costmodel import ComputeModel, NetworkModel, compute_time, matching_time
from .sinkhorn import (
    DEFAULT_EPSILON,
    DEFAULT_MAX_ITERS,
    DEFAULT_TOLERANCE,
    BistochasticMatrix,
    SinkhornDidNotConverge,
    normalize,
)
from .traffic import TrafficMatrix

DEFAULT_COEFF_FLOOR = 1e-3
MAX_EPSILON = 1e-3
SOURCES = ("bvn", "maxweight")
ORDER_POLICIES = ("as_produced", "weight_desc", "weight_asc", "johnson2")


class DecompositionError(RuntimeError):
    pass


class ScheduleError(ValueError):
    pass


@dataclass(frozen=True)
class Matching:
    """One circuit configuration; ``tokens[s]`` go from s to ``perm.dest_of[s]``."""

    perm: Permutation
    tokens: tuple[int, ...]
    coefficient: Optional[float] = None
    cleanup: bool = False

    def __post_init__(self) -> None:
        tokens = tuple(int(t) for t in self.tokens)
        if len(tokens) != self.perm.n:
            raise ScheduleError(f"tokens has length {len(tokens)}, permutation has n={self.perm.n}")
        if any(t < 0 for t in tokens):
            raise ScheduleError("token allocations must be nonnegative")
        if not any(tokens):
            raise ScheduleError("a matching must carry at least one token")
        object.__setattr__(self, "tokens", tokens)

    @property
    def n(self) -> int:
        return self.perm.n

    @property
    def total(self) -> int:
        return sum(self.tokens)

    def received(self) -> list[int]:
        """Tokens arriving at each destination rank in this slot."""
        out = [0] * self.n
        for s, d in self.perm:
            out[d] += self.tokens[s]
        return out

    def as_matrix(self) -> np.ndarray:
        m = np.zeros((self.n, self.n), dtype=np.int64)
        m[np.arange(self.n), self.perm.dest_of] = self.tokens
        return m

    def transposed(self) -> "Matching":
        """The combine-phase slot: same volumes flowing back to their origins."""
        inv = self.perm.inverse()
        return Matching(inv, tuple(self.tokens[inv.dest_of[d]] for d in range(self.n)), self.coefficient, self.cleanup)


@dataclass(frozen=True)
class Schedule:
    n: int
    source: str
    matchings: tuple[Matching, ...] = field(default=())

    def __post_init__(self) -> None:
        if self.source not in SOURCES:
            raise ScheduleError(f"unknown schedule source {self.source!r}")
        object.__setattr__(self, "matchings", tuple(self.matchings))
        for m in self.matchings:
            if m.n != self.n:
                raise ScheduleError(f"matching of size {m.n} in schedule of size {self.n}")

    def __len__(self) -> int:
        return len(self.matchings)

    def __iter__(self):
        return iter(self.matchings)

    def token_matrix(self) -> np.ndarray:
        total = np.zeros((self.n, self.n), dtype=np.int64)
        for m in self.matchings:
            total += m.as_matrix()
        return total

    def conserves(self, m) -> bool:
        counts = np.asarray(getattr(m, "counts", m))
        return counts.shape == (self.n, self.n) and np.array_equal(self.token_matrix(), counts)

    def with_matchings(self, matchings: Iterable[Matching]) -> "Schedule":
        return Schedule(self.n, self.source, tuple(matchings))


# --------------------------------------------------------------------------- BvN


def _support_weights(residual: np.ndarray, floor: float) -> tuple[np.ndarray, np.ndarray]:
    support = residual > floor
    penalty = -(residual.shape[0] * float(residual.max(initial=0.0)) + 1.0)
    return np.where(support, residual, penalty), support


def bvn_decompose(
    b: BistochasticMatrix, coeff_floor: float = DEFAULT_COEFF_FLOOR
) -> list[tuple[Permutation, float]]:
    """Birkhoff peeling of a (near-)doubly stochastic matrix.

    Each step takes the maximum-weight permutation inside the support
    ``{entries > coeff_floor}``, subtracts the smallest selected entry along it,
    and stops once no entry exceeds ``coeff_floor``.
    """
    if b.residual > coeff_floor:
        raise DecompositionError(
            f"normalization residual {b.residual:.3e} exceeds coeff_floor {coeff_floor:.3e}"
        )
    residual = np.array(b.values, dtype=float)
    n = residual.shape[0]
    rows = np.arange(n)
    peels: list[tuple[Permutation, float]] = []
    # each peel zeroes at least one support entry
    for _ in range(n * n + 1):
        if n == 0 or residual.max() <= coeff_floor:
            return peels
        weights, support = _support_weights(residual, coeff_floor)
        perm, _ = max_weight_assignment(weights)
        dest = np.array(perm.dest_of)
        if not support[rows, dest].all():
            mass = float(max(residual.sum(axis=1).max(), residual.sum(axis=0).max()))
            if mass <= n * coeff_floor + b.residual:
                return peels
            raise DecompositionError(
                f"no perfect matching in support with remaining mass {mass:.3e} "
                f"(> n*coeff_floor = {n * coeff_floor:.3e}); input not close enough to doubly stochastic"
            )
        lam = float(residual[rows, dest].min())
        residual[rows, dest] -= lam
        # the bottleneck entry (and any tie) is spent exactly
        residual[rows, dest] = np.where(residual[rows, dest] <= 0.0, 0.0, residual[rows, dest])
        peels.append((perm, lam))
    raise DecompositionError("BvN peeling exceeded n^2 iterations")  # pragma: no cover


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def bvn_allocate(m: TrafficMatrix, peels: Sequence[tuple[Permutation, float]]) -> Schedule:
    """Map BvN coefficients back onto token counts.

    Slot ``i`` may carry up to ``round(lambda_i * B)`` tokens per pair, where B
    is the largest row or column sum of ``m``. Demand left after all peels is
    scheduled with greedy max-weight matchings flagged ``cleanup``.
    """
    n = m.n
    counts = m.counts
    remaining = np.array(counts, dtype=np.int64)
    budget = int(max(counts.sum(axis=1).max(initial=0), counts.sum(axis=0).max(initial=0)))
    rows = np.arange(n)
    matchings: list[Matching] = []
    for perm, lam in peels:
        if perm.n != n:
            raise ScheduleError(f"peel of size {perm.n} for a {n}x{n} matrix")
        dest = np.array(perm.dest_of, dtype=np.int64)
        cap = _round_half_up(lam * budget)
        alloc = np.minimum(remaining[rows, dest], cap)
        remaining[rows, dest] -= alloc
        if alloc.any():
            matchings.append(Matching(perm, tuple(alloc.tolist()), coefficient=float(lam)))
    if remaining.any():
        for extra in greedy_maxweight(TrafficMatrix(remaining)).matchings:
            matchings.append(Matching(extra.perm, extra.tokens, cleanup=True))
    return Schedule(n, "bvn", tuple(matchings))


def bvn_normalize(
    m: TrafficMatrix,
    tolerance: float = DEFAULT_TOLERANCE,
    max_iters: int = DEFAULT_MAX_ITERS,
    epsilon: float = DEFAULT_EPSILON,
) -> BistochasticMatrix:
    """Sinkhorn normalization with padding escalation.

    Sparse matrices without total support make Sinkhorn crawl when the
    padding is tiny, so on non-convergence the padding is raised a hundredfold
    and normalization retried, up to ``MAX_EPSILON``.
    """
    eps = epsilon
    while True:
        try:
            return normalize(m, tolerance=tolerance, max_iters=max_iters, epsilon=eps)
        except SinkhornDidNotConverge:
            if eps >= MAX_EPSILON:
                raise
            eps = min(MAX_EPSILON, max(eps, 1e-12) * 100)


def bvn_schedule(
    m: TrafficMatrix,
    coeff_floor: float = DEFAULT_COEFF_FLOOR,
    tolerance: float = DEFAULT_TOLERANCE,
    max_iters: int = DEFAULT_MAX_ITERS,
    epsilon: float = DEFAULT_EPSILON,
) -> Schedule:
    """Full BvN pipeline: normalize (see ``bvn_normalize``), peel, allocate tokens."""
    if m.total == 0:
        return Schedule(m.n, "bvn", ())
    b = bvn_normalize(m, tolerance, max_iters, epsilon)
    return bvn_allocate(m, bvn_decompose(b, coeff_floor))


# --------------------------------------------------------------------------- max-weight


def greedy_maxweight(m: TrafficMatrix) -> Schedule:
    """Repeatedly extract and fully clear the maximum-weight permutation of the residual."""
    n = m.n
    residual = np.array(m.counts, dtype=np.int64)
    rows = np.arange(n)
    matchings: list[Matching] = []
    # each productive iteration clears at least one nonzero entry
    for _ in range(int(np.count_nonzero(residual)) + 1):
        perm, weight = max_weight_assignment(residual)
        if weight <= 0:
            break
        dest = np.array(perm.dest_of, dtype=np.int64)
        tokens = residual[rows, dest].copy()
        residual[rows, dest] = 0
        matchings.append(Matching(perm, tuple(tokens.tolist())))
    return Schedule(n, "maxweight", tuple(matchings))


def decompose(
    m: TrafficMatrix, method: str, coeff_floor: float = DEFAULT_COEFF_FLOOR, **sinkhorn_kwargs
) -> Schedule:
    if method == "bvn":
        return bvn_schedule(m, coeff_floor=coeff_floor, **sinkhorn_kwargs)
    if method == "maxweight":
        return greedy_maxweight(m)
    raise ValueError(f"unknown decomposition method {method!r}; expected one of {SOURCES}")


# --------------------------------------------------------------------------- ordering


def johnson_order(jobs: Sequence[tuple[float, float]]) -> list[int]:
    """Johnson's rule for the two-machine flow shop; returns job indices in run order.

    Jobs faster on machine 1 go first by ascending machine-1 time, the rest
    last by descending machine-2 time. Ties keep input order.
    """
    first = sorted((i for i, (a, b) in enumerate(jobs) if a <= b), key=lambda i: (jobs[i][0], i))
    last = sorted((i for i, (a, b) in enumerate(jobs) if a > b), key=lambda i: (-jobs[i][1], i))
    return first + last


def order_schedule(
    s: Schedule,
    policy: str = "as_produced",
    compute: Optional[ComputeModel] = None,
    net: Optional[NetworkModel] = None,
) -> Schedule:
    if policy not in ORDER_POLICIES:
        raise ValueError(f"unknown ordering policy {policy!r}; expected one of {ORDER_POLICIES}")
    idx = list(range(len(s.matchings)))
    if policy == "weight_desc":
        idx.sort(key=lambda i: (-s.matchings[i].total, i))
    elif policy == "weight_asc":
        idx.sort(key=lambda i: (s.matchings[i].total, i))
    elif policy == "johnson2":
        if compute is None:
            raise ValueError("johnson2 ordering needs a compute model")
        net = net or NetworkModel()
        jobs = [
            (matching_time(net, m), max(compute_time(compute, r) for r in m.received()))
            for m in s.matchings
        ]
        idx = johnson_order(jobs)
    return s.with_matchings(s.matchings[i] for i in idx)


# --------------------------------------------------------------------------- JSON


def schedule_to_dict(s: Schedule) -> dict:
    out = []
    for m in s.matchings:
        d = {"dest_of": list(m.perm.dest_of), "tokens": list(m.tokens)}
        if m.coefficient is not None:
            d["coefficient"] = m.coefficient
        if m.cleanup:
            d["cleanup"] = True
        out.append(d)
    return {"n": s.n, "source": s.source, "matchings": out}


def schedule_from_dict(doc: dict) -> Schedule:
    try:
        n = int(doc["n"])
        source = doc["source"]
        matchings = [
            Matching(
                Permutation(tuple(item["dest_of"])),
                tuple(item["tokens"]),
                coefficient=item.get("coefficient"),
                cleanup=bool(item.get("cleanup", False)),
            )
            for item in doc["matchings"]
        ]
    except (KeyError, TypeError) as exc:
        raise ScheduleError(f"malformed schedule document: {exc!r}") from None
    except ValueError as exc:
        raise ScheduleError(f"malformed schedule document: {exc}") from None
    return Schedule(n, source, tuple(matchings))


def save_schedule(s: Schedule, path: Union[str, os.PathLike]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(schedule_to_dict(s), f, indent=1)
        f.write("\n")


def load_schedule(path: Union[str, os.PathLike]) -> Schedule:
    with open(path, encoding="utf-8") as f:
        try:
            doc = json.load(f)
        except json.JSONDecodeError as exc:
            raise ScheduleError(f"{path}: invalid JSON: {exc}") from None
    return schedule_from_dict(doc)
