"""Expert compute time and circuit wire time models.

All times are seconds. The knee model is ``max(floor, per_token * batch)``
with the slope pinned by continuity at the knee, so with the defaults any
batch up to 256 tokens costs 250 us and cost grows linearly afterwards.
"""

from __future__ import annotations

import bisect
import csv
import os
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

DEFAULT_FLOOR = 250e-6
DEFAULT_KNEE_TOKENS = 256
DEFAULT_BANDWIDTH = 100e9  # bytes/s per circuit
DEFAULT_BYTES_PER_TOKEN = 4096 * 2  # hidden 4096, 16-bit activations
DEFAULT_RECONFIG_DELAY = 10e-9

COMPUTE_KINDS = ("linear", "knee", "table")


class ProfileError(ValueError):
    def __init__(self, message: str, path=None, row: Optional[int] = None):
        where = f"{path}" if path is not None else ""
        if row is not None:
            where = f"{where}:{row}" if where else f"row {row}"
        super().__init__(f"{where}: {message}" if where else message)
        self.row = row


@dataclass(frozen=True)
class ComputeModel:
    kind: str = "knee"
    per_token: float = DEFAULT_FLOOR / DEFAULT_KNEE_TOKENS
    floor: float = DEFAULT_FLOOR
    knee_tokens: int = DEFAULT_KNEE_TOKENS
    table: tuple[tuple[int, float], ...] = field(default=())

    def __post_init__(self) -> None:
        if self.kind not in COMPUTE_KINDS:
            raise ValueError(f"unknown compute model kind {self.kind!r}")
        if self.per_token < 0 or self.floor < 0:
            raise ValueError("per_token and floor must be nonnegative")
        if self.kind == "table":
            table = tuple((int(b), float(s)) for b, s in self.table)
            if not table:
                raise ValueError("table compute model needs at least one row")
            _check_table(table)
            object.__setattr__(self, "table", table)

    @classmethod
    def linear(cls, per_token: float) -> "ComputeModel":
        return cls(kind="linear", per_token=per_token, floor=0.0, knee_tokens=0)

    @classmethod
    def knee(
        cls,
        floor: float = DEFAULT_FLOOR,
        knee_tokens: int = DEFAULT_KNEE_TOKENS,
        per_token: Optional[float] = None,
    ) -> "ComputeModel":
        if knee_tokens <= 0 and per_token is None:
            raise ValueError("knee_tokens must be positive when per_token is derived")
        if per_token is None:
            per_token = floor / knee_tokens
        return cls(kind="knee", per_token=per_token, floor=floor, knee_tokens=knee_tokens)

    @classmethod
    def from_table(cls, rows: Sequence[tuple[int, float]]) -> "ComputeModel":
        return cls(kind="table", per_token=0.0, floor=0.0, knee_tokens=0, table=tuple(rows))

    def __call__(self, batch: int) -> float:
        return compute_time(self, batch)

    def describe(self) -> dict:
        d = {"kind": self.kind}
        if self.kind == "linear":
            d["per_token"] = self.per_token
        elif self.kind == "knee":
            d.update(per_token=self.per_token, floor=self.floor, knee_tokens=self.knee_tokens)
        else:
            d["table"] = [list(r) for r in self.table]
        return d


def _check_table(table, path=None) -> None:
    for i in range(len(table)):
        b, s = table[i]
        if b < 0 or s < 0:
            raise ProfileError("batch and seconds must be nonnegative", path, i + 1)
        if i and b <= table[i - 1][0]:
            raise ProfileError("batch sizes must be strictly increasing", path, i + 1)
        if i and s < table[i - 1][1]:
            raise ProfileError("seconds must be nondecreasing in batch size", path, i + 1)


@dataclass(frozen=True)
class NetworkModel:
    bandwidth: float = DEFAULT_BANDWIDTH
    bytes_per_token: float = DEFAULT_BYTES_PER_TOKEN
    reconfig_delay: float = DEFAULT_RECONFIG_DELAY

    def __post_init__(self) -> None:
        if self.bandwidth <= 0 or self.bytes_per_token <= 0:
            raise ValueError("bandwidth and bytes_per_token must be positive")
        if self.reconfig_delay < 0:
            raise ValueError("reconfig_delay must be nonnegative")

    def describe(self) -> dict:
        return {
            "bandwidth": self.bandwidth,
            "bytes_per_token": self.bytes_per_token,
            "reconfig_delay": self.reconfig_delay,
        }


def compute_time(model: ComputeModel, batch: int) -> float:
    if batch < 0:
        raise ValueError("batch must be nonnegative")
    if batch == 0:
        # no tokens, no kernel launch
        return 0.0
    if model.kind == "linear":
        return model.per_token * batch
    if model.kind == "knee":
        return max(model.floor, model.per_token * batch)
    return _interpolate(model.table, batch)


def _interpolate(table: tuple[tuple[int, float], ...], batch: int) -> float:
    batches = [b for b, _ in table]
    if batch <= batches[0]:
        return table[0][1]
    if len(table) == 1:
        return table[0][1]
    i = bisect.bisect_left(batches, batch)
    if i == len(table):
        (b0, s0), (b1, s1) = table[-2], table[-1]
    else:
        (b0, s0), (b1, s1) = table[i - 1], table[i]
    return s0 + (s1 - s0) * (batch - b0) / (b1 - b0)


def wire_time(net: NetworkModel, tokens: int) -> float:
    return tokens * net.bytes_per_token / net.bandwidth


def matching_time(net: NetworkModel, matching) -> float:
    """Slot duration: the most loaded pair sets it, lighter pairs idle."""
    tokens = getattr(matching, "tokens", matching)
    return max((wire_time(net, t) for t in tokens), default=0.0)


def load_profile(path: Union[str, os.PathLike]) -> ComputeModel:
    """Read a ``batch,seconds`` CSV profile into a table compute model."""
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        try:
            header = next(reader)
        except StopIteration:
            raise ProfileError("empty profile", path) from None
        if [h.strip() for h in header] != ["batch", "seconds"]:
            raise ProfileError(f"header must be 'batch,seconds', got {','.join(header)!r}", path, 1)
        rows: list[tuple[int, float]] = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 2:
                raise ProfileError(f"expected 2 columns, got {len(row)}", path, lineno)
            try:
                rows.append((int(row[0]), float(row[1])))
            except ValueError:
                raise ProfileError(f"unparseable row {row!r}", path, lineno) from None
            if len(rows) > 1:
                (b0, s0), (b1, s1) = rows[-2], rows[-1]
                if b1 <= b0:
                    raise ProfileError("batch sizes must be strictly increasing", path, lineno)
                if s1 < s0:
                    raise ProfileError("seconds must be nondecreasing in batch size", path, lineno)
            if rows[-1][0] < 0 or rows[-1][1] < 0:
                raise ProfileError("batch and seconds must be nonnegative", path, lineno)
    if not rows:
        raise ProfileError("profile has no rows", path)
    return ComputeModel.from_table(rows)
