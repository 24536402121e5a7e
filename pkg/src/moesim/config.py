"""Experiment configuration: a flat ``key = value`` text file.

The first non-comment line must be ``moesim-config v1``. Sweep axes
(``trace``, ``regime``, ``tokens_per_rank``, ``skew``, ``reconfig_delay``) and
``strategy`` may be repeated; every other key may appear at most once.
Relative paths resolve against the config file's directory.
"""

from __future__ import annotations

import hashlib
import itertools
import json
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

from .costmodel import (
    DEFAULT_BANDWIDTH,
    DEFAULT_BYTES_PER_TOKEN,
    DEFAULT_FLOOR,
    DEFAULT_KNEE_TOKENS,
    DEFAULT_RECONFIG_DELAY,
    ComputeModel,
    NetworkModel,
    load_profile,
)
from .decompose import DEFAULT_COEFF_FLOOR, ORDER_POLICIES
from .simulator import PRIORITY_RULES, SUITE_LABELS
from .traffic import REGIMES

CONFIG_MAGIC = "moesim-config v1"

REPEATABLE = {"trace", "regime", "tokens_per_rank", "skew", "reconfig_delay", "strategy"}
SCALAR_KEYS = {
    "placement",
    "n_ranks",
    "n_experts",
    "top_k",
    "seed",
    "layers",
    "compute",
    "compute_floor",
    "compute_knee_tokens",
    "compute_per_token",
    "profile",
    "bandwidth",
    "bytes_per_token",
    "order",
    "priority",
    "coeff_floor",
    "output_dir",
}


class ConfigError(ValueError):
    def __init__(self, message: str, key: Optional[str] = None, line: Optional[int] = None):
        prefix = ""
        if line is not None:
            prefix += f"line {line}: "
        if key is not None:
            prefix += f"{key}: "
        super().__init__(prefix + message)
        self.key = key
        self.line = line


@dataclass(frozen=True)
class SweepPoint:
    trace: Optional[str]
    layer: int
    regime: str
    tokens_per_rank: int
    skew: float
    reconfig_delay: float

    def key(self) -> tuple:
        return (self.trace or "", self.layer, self.regime, self.tokens_per_rank, self.skew, self.reconfig_delay)


@dataclass
class ExperimentConfig:
    traces: list[str] = field(default_factory=list)
    placement: Optional[str] = None
    n_ranks: int = 8
    n_experts: int = 8
    top_k: int = 2
    regimes: list[str] = field(default_factory=list)
    tokens_per_rank: list[int] = field(default_factory=list)
    skews: list[float] = field(default_factory=lambda: [1.0])
    seed: int = 0
    layers: int = 1
    compute: str = "knee"
    compute_floor: float = DEFAULT_FLOOR
    compute_knee_tokens: int = DEFAULT_KNEE_TOKENS
    compute_per_token: Optional[float] = None
    profile: Optional[str] = None
    bandwidth: float = DEFAULT_BANDWIDTH
    bytes_per_token: float = DEFAULT_BYTES_PER_TOKEN
    reconfig_delays: list[float] = field(default_factory=lambda: [DEFAULT_RECONFIG_DELAY])
    strategies: list[str] = field(default_factory=lambda: list(SUITE_LABELS))
    order: str = "as_produced"
    priority: str = "dispatch_first"
    coeff_floor: float = DEFAULT_COEFF_FLOOR
    output_dir: str = "results"

    def validate(self) -> None:
        if not self.strategies:
            raise ConfigError("at least one strategy is required", "strategy")
        for s in self.strategies:
            if s not in SUITE_LABELS:
                raise ConfigError(f"unknown strategy {s!r}; expected one of {', '.join(SUITE_LABELS)}", "strategy")
        if len(set(self.strategies)) != len(self.strategies):
            raise ConfigError("strategies listed twice", "strategy")
        if self.order not in ORDER_POLICIES:
            raise ConfigError(f"unknown ordering policy {self.order!r}", "order")
        if self.priority not in PRIORITY_RULES:
            raise ConfigError(f"unknown priority rule {self.priority!r}", "priority")
        if self.compute not in ("knee", "linear", "table"):
            raise ConfigError(f"unknown compute model {self.compute!r}", "compute")
        if self.compute == "table" and not self.profile:
            raise ConfigError("table compute model needs a profile file", "profile")
        if self.compute == "linear" and self.compute_per_token is None:
            raise ConfigError("linear compute model needs compute_per_token", "compute_per_token")
        for r in self.regimes:
            if r not in REGIMES:
                raise ConfigError(f"unknown regime {r!r}; expected one of {', '.join(REGIMES)}", "regime")
        if self.traces:
            if self.regimes or self.tokens_per_rank:
                raise ConfigError("trace files cannot be combined with synthetic sweep axes", "trace")
            for t in self.traces:
                if not os.path.exists(t):
                    raise ConfigError(f"file not found: {t}", "trace")
        elif self.regimes and self.tokens_per_rank:
            raise ConfigError("give either regime or tokens_per_rank, not both", "tokens_per_rank")
        elif not self.regimes and not self.tokens_per_rank:
            raise ConfigError("no trace source: give trace, regime, or tokens_per_rank", "trace")
        for key, path in (("placement", self.placement), ("profile", self.profile)):
            if path and not os.path.exists(path):
                raise ConfigError(f"file not found: {path}", key)
        if not self.skews:
            raise ConfigError("sweep axis is empty", "skew")
        if not self.reconfig_delays:
            raise ConfigError("sweep axis is empty", "reconfig_delay")
        if any(d < 0 for d in self.reconfig_delays):
            raise ConfigError("must be nonnegative", "reconfig_delay")
        if any(s < 0 for s in self.skews):
            raise ConfigError("must be nonnegative", "skew")
        if self.layers < 1:
            raise ConfigError("must be at least 1", "layers")
        if self.bandwidth <= 0:
            raise ConfigError("must be positive", "bandwidth")
        if self.bytes_per_token <= 0:
            raise ConfigError("must be positive", "bytes_per_token")
        if not self.traces and self.n_experts % self.n_ranks:
            raise ConfigError(f"n_experts={self.n_experts} not divisible by n_ranks={self.n_ranks}", "n_experts")

    def compute_model(self) -> ComputeModel:
        if self.compute == "linear":
            return ComputeModel.linear(self.compute_per_token)
        if self.compute == "table":
            return load_profile(self.profile)
        return ComputeModel.knee(self.compute_floor, self.compute_knee_tokens, self.compute_per_token)

    def network_model(self, reconfig_delay: float) -> NetworkModel:
        return NetworkModel(self.bandwidth, self.bytes_per_token, reconfig_delay)

    def sweep(self) -> list[SweepPoint]:
        points = []
        if self.traces:
            for (layer, trace), delay in itertools.product(enumerate(self.traces), self.reconfig_delays):
                points.append(SweepPoint(trace, layer, "trace", 0, 0.0, delay))
        else:
            sizes = [(r, REGIMES[r]) for r in self.regimes] or [("custom", t) for t in self.tokens_per_rank]
            for (regime, tpr), skew, layer, delay in itertools.product(
                sizes, self.skews, range(self.layers), self.reconfig_delays
            ):
                points.append(SweepPoint(None, layer, regime, tpr, skew, delay))
        return points

    def resolved(self) -> dict:
        """Everything that influences results; the output location does not."""
        d = asdict(self)
        d.pop("output_dir")
        return d

    def digest(self) -> str:
        blob = json.dumps(self.resolved(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


def _convert(key: str, value: str, line: int):
    try:
        if key in ("n_ranks", "n_experts", "top_k", "seed", "layers", "compute_knee_tokens", "tokens_per_rank"):
            return int(value)
        if key in (
            "skew",
            "reconfig_delay",
            "compute_floor",
            "compute_per_token",
            "bandwidth",
            "bytes_per_token",
            "coeff_floor",
        ):
            return float(value)
    except ValueError:
        raise ConfigError(f"cannot parse {value!r}", key, line) from None
    return value


def parse_config(text: str, base_dir: Optional[str] = None) -> ExperimentConfig:
    seen_header = False
    scalars: dict[str, object] = {}
    lists: dict[str, list] = {k: [] for k in REPEATABLE}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if not seen_header:
            if line != CONFIG_MAGIC:
                raise ConfigError(f"first line must be {CONFIG_MAGIC!r}, got {line!r}", line=lineno)
            seen_header = True
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {line!r}", line=lineno)
        key, value = (p.strip() for p in line.split("=", 1))
        if key in REPEATABLE:
            lists[key].append(_convert(key, value, lineno))
        elif key in SCALAR_KEYS:
            if key in scalars:
                raise ConfigError("given more than once", key, lineno)
            scalars[key] = _convert(key, value, lineno)
        else:
            raise ConfigError("unknown key", key, lineno)
    if not seen_header:
        raise ConfigError(f"empty config; first line must be {CONFIG_MAGIC!r}")

    def resolve(path):
        if path is None or base_dir is None or os.path.isabs(path):
            return path
        return str(Path(base_dir) / path)

    cfg = ExperimentConfig()
    for key, value in scalars.items():
        setattr(cfg, key, value)
    cfg.traces = [resolve(t) for t in lists["trace"]]
    cfg.regimes = lists["regime"]
    cfg.tokens_per_rank = lists["tokens_per_rank"]
    if lists["skew"]:
        cfg.skews = lists["skew"]
    if lists["reconfig_delay"]:
        cfg.reconfig_delays = lists["reconfig_delay"]
    if lists["strategy"]:
        cfg.strategies = lists["strategy"]
    cfg.placement = resolve(cfg.placement)
    cfg.profile = resolve(cfg.profile)
    cfg.output_dir = resolve(cfg.output_dir)
    cfg.validate()
    return cfg


def load_config(path) -> ExperimentConfig:
    with open(path, encoding="utf-8") as f:
        return parse_config(f.read(), base_dir=os.path.dirname(os.path.abspath(path)))
