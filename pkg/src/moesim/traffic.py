"""Routing traces, expert placement, and rank-to-rank traffic matrices.

File formats (all whitespace-separated decimal integers):

* trace: header ``moetrace v1 <n_ranks> <n_experts> <top_k>``, then one line
  per token: ``<origin_rank> <expert_id_1> ... <expert_id_k>``
* placement: header ``placement v1 <n_experts> <n_ranks>``, then
  ``<expert_id> <rank>`` lines
* matrix: CSV, no header, n rows of n comma-separated values
"""

from __future__ import annotations

import csv
import io
import os
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

PathLike = Union[str, os.PathLike]

TRACE_MAGIC = "moetrace"
PLACEMENT_MAGIC = "placement"
FORMAT_VERSION = "v1"

# tokens_per_rank presets for the two workload regimes
REGIMES = {
    "small-batch": 32,
    "large-batch": 2048,
}


class TraceFormatError(ValueError):
    """Malformed trace, placement, or matrix file."""

    def __init__(self, message: str, path: Optional[PathLike] = None, line: Optional[int] = None):
        where = ""
        if path is not None:
            where = f"{path}"
        if line is not None:
            where = f"{where}:{line}" if where else f"line {line}"
        super().__init__(f"{where}: {message}" if where else message)
        self.path = path
        self.line = line


class TraceValidationError(ValueError):
    """A trace violates its invariants; ``token`` is the offending token index."""

    def __init__(self, message: str, token: Optional[int] = None):
        super().__init__(message if token is None else f"token {token}: {message}")
        self.token = token


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr = np.array(arr, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class RoutingTrace:
    n_ranks: int
    n_experts: int
    top_k: int
    token_origin: np.ndarray  # (tokens,)
    expert_ids: np.ndarray  # (tokens, top_k)
    layer_id: int = 0

    def __post_init__(self) -> None:
        origin = np.asarray(self.token_origin, dtype=np.int64).reshape(-1)
        experts = np.asarray(self.expert_ids, dtype=np.int64)
        if experts.size == 0:
            experts = experts.reshape(len(origin), self.top_k)
        object.__setattr__(self, "token_origin", _frozen(origin))
        object.__setattr__(self, "expert_ids", _frozen(experts))
        self.validate()

    @property
    def n_tokens(self) -> int:
        return int(self.token_origin.shape[0])

    def validate(self) -> None:
        if self.n_ranks < 1 or self.n_experts < 1:
            raise TraceValidationError("n_ranks and n_experts must be positive")
        if not 1 <= self.top_k <= self.n_experts:
            raise TraceValidationError(f"top_k={self.top_k} must be in [1, n_experts={self.n_experts}]")
        if self.expert_ids.ndim != 2 or self.expert_ids.shape != (self.n_tokens, self.top_k):
            raise TraceValidationError(
                f"expert_ids shape {self.expert_ids.shape} != ({self.n_tokens}, {self.top_k})"
            )
        bad = np.flatnonzero((self.token_origin < 0) | (self.token_origin >= self.n_ranks))
        if bad.size:
            t = int(bad[0])
            raise TraceValidationError(
                f"origin rank {self.token_origin[t]} out of range [0, {self.n_ranks})", token=t
            )
        bad = np.flatnonzero(np.any((self.expert_ids < 0) | (self.expert_ids >= self.n_experts), axis=1))
        if bad.size:
            t = int(bad[0])
            raise TraceValidationError(
                f"expert id out of range [0, {self.n_experts}): {self.expert_ids[t].tolist()}", token=t
            )
        if self.top_k > 1 and self.n_tokens:
            srt = np.sort(self.expert_ids, axis=1)
            bad = np.flatnonzero(np.any(srt[:, 1:] == srt[:, :-1], axis=1))
            if bad.size:
                t = int(bad[0])
                raise TraceValidationError(
                    f"duplicate expert ids {self.expert_ids[t].tolist()}", token=t
                )

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, RoutingTrace):
            return NotImplemented
        return (
            (self.n_ranks, self.n_experts, self.top_k, self.layer_id)
            == (other.n_ranks, other.n_experts, other.top_k, other.layer_id)
            and np.array_equal(self.token_origin, other.token_origin)
            and np.array_equal(self.expert_ids, other.expert_ids)
        )


@dataclass(frozen=True, eq=False)
class ExpertPlacement:
    n_experts: int
    n_ranks: int
    expert_to_rank: np.ndarray = field(default=None)  # (n_experts,)

    def __post_init__(self) -> None:
        if self.expert_to_rank is None:
            mapping = np.arange(self.n_experts, dtype=np.int64) % self.n_ranks
        else:
            mapping = np.asarray(self.expert_to_rank, dtype=np.int64).reshape(-1)
        if mapping.shape != (self.n_experts,):
            raise ValueError(f"placement must map all {self.n_experts} experts, got {mapping.shape[0]}")
        if np.any((mapping < 0) | (mapping >= self.n_ranks)):
            e = int(np.flatnonzero((mapping < 0) | (mapping >= self.n_ranks))[0])
            raise ValueError(f"expert {e} placed on rank {mapping[e]} outside [0, {self.n_ranks})")
        object.__setattr__(self, "expert_to_rank", _frozen(mapping))

    @classmethod
    def round_robin(cls, n_experts: int, n_ranks: int) -> "ExpertPlacement":
        return cls(n_experts, n_ranks)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ExpertPlacement):
            return NotImplemented
        return (self.n_experts, self.n_ranks) == (other.n_experts, other.n_ranks) and np.array_equal(
            self.expert_to_rank, other.expert_to_rank
        )


@dataclass(frozen=True, eq=False)
class TrafficMatrix:
    """Token counts between ranks; ``counts[s, d]`` tokens go from rank s to rank d."""

    counts: np.ndarray

    def __post_init__(self) -> None:
        raw = np.asarray(self.counts)
        if raw.ndim != 2 or raw.shape[0] != raw.shape[1]:
            raise ValueError(f"traffic matrix must be square, got shape {raw.shape}")
        if raw.size and not np.all(np.equal(np.mod(raw, 1), 0)):
            raise ValueError("traffic matrix entries must be integers")
        arr = raw.astype(np.int64)
        if np.any(arr < 0):
            raise ValueError("traffic matrix entries must be nonnegative")
        object.__setattr__(self, "counts", _frozen(arr))

    @property
    def n(self) -> int:
        return int(self.counts.shape[0])

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @classmethod
    def zeros(cls, n: int) -> "TrafficMatrix":
        return cls(np.zeros((n, n), dtype=np.int64))

    def off_diagonal(self) -> "TrafficMatrix":
        c = self.counts.copy()
        np.fill_diagonal(c, 0)
        return TrafficMatrix(c)

    def diagonal(self) -> np.ndarray:
        return np.diag(self.counts).copy()

    def transpose(self) -> "TrafficMatrix":
        return transpose(self)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, TrafficMatrix):
            return NotImplemented
        return np.array_equal(self.counts, other.counts)

    def __repr__(self) -> str:
        return f"TrafficMatrix({self.counts.tolist()})"


def transpose(m: TrafficMatrix) -> TrafficMatrix:
    """Combine-phase matrix: results flow back from expert rank to origin rank."""
    return TrafficMatrix(m.counts.T)


def build_matrix(trace: RoutingTrace, placement: Optional[ExpertPlacement] = None) -> TrafficMatrix:
    """Count dispatched copies per (origin rank, expert rank); each token contributes top_k entries."""
    if placement is None:
        placement = ExpertPlacement.round_robin(trace.n_experts, trace.n_ranks)
    if placement.n_experts != trace.n_experts or placement.n_ranks != trace.n_ranks:
        raise ValueError(
            f"placement ({placement.n_experts} experts, {placement.n_ranks} ranks) does not match "
            f"trace ({trace.n_experts} experts, {trace.n_ranks} ranks)"
        )
    n = trace.n_ranks
    counts = np.zeros((n, n), dtype=np.int64)
    if trace.n_tokens:
        src = np.repeat(trace.token_origin, trace.top_k)
        dst = placement.expert_to_rank[trace.expert_ids.reshape(-1)]
        np.add.at(counts, (src, dst), 1)
    return TrafficMatrix(counts)


def zipf_probs(n_experts: int, skew: float) -> np.ndarray:
    weights = 1.0 / np.arange(1, n_experts + 1, dtype=float) ** skew
    return weights / weights.sum()


def gen_synthetic(
    n_ranks: int,
    n_experts: int,
    top_k: int,
    tokens_per_rank: int,
    skew: float = 0.0,
    seed: int = 0,
    layer_id: int = 0,
) -> RoutingTrace:
    """Synthetic routing trace with Zipf-skewed expert popularity.

    Every rank originates ``tokens_per_rank`` tokens. Each token draws
    ``top_k`` distinct experts without replacement, proportionally to
    ``1 / (e + 1) ** skew`` (Gumbel top-k sampling, so the draw is vectorised
    and exactly matches sequential sampling without replacement).
    """
    if n_ranks < 1 or n_experts < 1:
        raise ValueError("n_ranks and n_experts must be positive")
    if n_experts % n_ranks:
        raise ValueError(f"n_experts={n_experts} is not divisible by n_ranks={n_ranks}")
    if not 1 <= top_k <= n_experts:
        raise ValueError(f"top_k={top_k} must be in [1, {n_experts}]")
    if tokens_per_rank < 0:
        raise ValueError("tokens_per_rank must be nonnegative")
    if not skew >= 0:
        raise ValueError("skew must be nonnegative")

    rng = np.random.default_rng(seed)
    n_tokens = n_ranks * tokens_per_rank
    origin = np.repeat(np.arange(n_ranks, dtype=np.int64), tokens_per_rank)
    logp = np.log(zipf_probs(n_experts, skew))
    keys = logp + rng.gumbel(size=(n_tokens, n_experts))
    # stable argsort on negated keys -> top_k in descending key order
    experts = np.argsort(-keys, axis=1, kind="stable")[:, :top_k]
    return RoutingTrace(
        n_ranks=n_ranks,
        n_experts=n_experts,
        top_k=top_k,
        token_origin=origin,
        expert_ids=experts,
        layer_id=layer_id,
    )


# --------------------------------------------------------------------------- I/O


def _data_lines(text: str):
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if line:
            yield lineno, line


def _ints(fields: Sequence[str], path, lineno) -> list[int]:
    try:
        return [int(f) for f in fields]
    except ValueError:
        raise TraceFormatError(f"expected integers, got {' '.join(fields)!r}", path, lineno) from None


def parse_trace(text: str, path: Optional[PathLike] = None, layer_id: int = 0) -> RoutingTrace:
    lines = _data_lines(text)
    try:
        lineno, header = next(lines)
    except StopIteration:
        raise TraceFormatError("empty trace file", path) from None
    parts = header.split()
    if len(parts) != 5 or parts[0] != TRACE_MAGIC or parts[1] != FORMAT_VERSION:
        raise TraceFormatError(
            f"bad header {header!r}, expected '{TRACE_MAGIC} {FORMAT_VERSION} <n_ranks> <n_experts> <top_k>'",
            path,
            lineno,
        )
    n_ranks, n_experts, top_k = _ints(parts[2:], path, lineno)
    origins: list[int] = []
    experts: list[list[int]] = []
    for lineno, line in lines:
        vals = _ints(line.split(), path, lineno)
        if len(vals) != top_k + 1:
            raise TraceFormatError(
                f"expected origin rank plus {top_k} expert ids, got {len(vals)} fields", path, lineno
            )
        origins.append(vals[0])
        experts.append(vals[1:])
    return RoutingTrace(
        n_ranks=n_ranks,
        n_experts=n_experts,
        top_k=top_k,
        token_origin=np.array(origins, dtype=np.int64),
        expert_ids=np.array(experts, dtype=np.int64).reshape(len(origins), top_k),
        layer_id=layer_id,
    )


def load_trace(path: PathLike, format: str = "moetrace-v1", layer_id: int = 0) -> RoutingTrace:
    if format not in ("moetrace-v1", "moetrace"):
        raise ValueError(f"unsupported trace format {format!r}")
    with open(path, encoding="utf-8") as f:
        return parse_trace(f.read(), path=path, layer_id=layer_id)


def format_trace(trace: RoutingTrace) -> str:
    out = io.StringIO()
    out.write(f"{TRACE_MAGIC} {FORMAT_VERSION} {trace.n_ranks} {trace.n_experts} {trace.top_k}\n")
    for origin, experts in zip(trace.token_origin.tolist(), trace.expert_ids.tolist()):
        out.write(" ".join(str(x) for x in [origin, *experts]))
        out.write("\n")
    return out.getvalue()


def save_trace(trace: RoutingTrace, path: PathLike) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(format_trace(trace))


def load_placement(path: PathLike) -> ExpertPlacement:
    with open(path, encoding="utf-8") as f:
        text = f.read()
    lines = _data_lines(text)
    try:
        lineno, header = next(lines)
    except StopIteration:
        raise TraceFormatError("empty placement file", path) from None
    parts = header.split()
    if len(parts) != 4 or parts[0] != PLACEMENT_MAGIC or parts[1] != FORMAT_VERSION:
        raise TraceFormatError(
            f"bad header {header!r}, expected '{PLACEMENT_MAGIC} {FORMAT_VERSION} <n_experts> <n_ranks>'",
            path,
            lineno,
        )
    n_experts, n_ranks = _ints(parts[2:], path, lineno)
    mapping = [-1] * n_experts
    for lineno, line in lines:
        vals = _ints(line.split(), path, lineno)
        if len(vals) != 2:
            raise TraceFormatError("expected '<expert_id> <rank>'", path, lineno)
        e, r = vals
        if not 0 <= e < n_experts:
            raise TraceFormatError(f"expert id {e} out of range [0, {n_experts})", path, lineno)
        if mapping[e] != -1:
            raise TraceFormatError(f"expert {e} placed twice", path, lineno)
        mapping[e] = r
    missing = [e for e, r in enumerate(mapping) if r == -1]
    if missing:
        raise TraceFormatError(f"experts without a rank: {missing[:8]}", path)
    return ExpertPlacement(n_experts, n_ranks, np.array(mapping, dtype=np.int64))


def save_placement(placement: ExpertPlacement, path: PathLike) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(f"{PLACEMENT_MAGIC} {FORMAT_VERSION} {placement.n_experts} {placement.n_ranks}\n")
        for e, r in enumerate(placement.expert_to_rank.tolist()):
            f.write(f"{e} {r}\n")


def parse_matrix_csv(text: str, path: Optional[PathLike] = None, integer: bool = True) -> np.ndarray:
    rows = []
    linenos = []
    for lineno, row in enumerate(csv.reader(io.StringIO(text)), start=1):
        if not row or all(not c.strip() for c in row):
            continue
        linenos.append(lineno)
        try:
            rows.append([int(c) if integer else float(c) for c in row])
        except ValueError:
            raise TraceFormatError(f"non-numeric cell in row {row!r}", path, lineno) from None
    if not rows:
        raise TraceFormatError("empty matrix", path)
    n = len(rows)
    for lineno, row in zip(linenos, rows):
        if len(row) != n:
            raise TraceFormatError(f"row has {len(row)} cells, expected {n} (matrix must be square)", path, lineno)
    return np.array(rows)


def load_matrix(path: PathLike) -> TrafficMatrix:
    with open(path, encoding="utf-8") as f:
        arr = parse_matrix_csv(f.read(), path=path)
    try:
        return TrafficMatrix(arr)
    except ValueError as exc:
        raise TraceFormatError(str(exc), path) from None


def format_matrix_csv(values) -> str:
    arr = np.asarray(values)
    out = io.StringIO()
    for row in arr.tolist():
        if np.issubdtype(arr.dtype, np.integer):
            out.write(",".join(str(int(x)) for x in row))
        else:
            out.write(",".join(f"{x:.9g}" for x in row))
        out.write("\n")
    return out.getvalue()


def save_matrix(m, path: PathLike) -> None:
    values = m.counts if isinstance(m, TrafficMatrix) else getattr(m, "values", m)
    with open(path, "w", encoding="utf-8") as f:
        f.write(format_matrix_csv(values))
