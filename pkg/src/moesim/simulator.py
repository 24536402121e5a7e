"""Dispatch-compute-combine simulation of one MoE layer under a strategy.

Strategies:

``ideal``
    Congestion-free all-to-all: each rank is limited only by its own
    injection/ejection volume. No overlap.
``ring_sequential``
    Static bidirectional ring, shortest-path routing with an even split
    between both arcs for antipodal pairs. Each rank's port bandwidth is
    shared by its two ring links, so a directed link carries ``bandwidth/2``.
    No overlap.
``decomposed``
    A schedule of circuit matchings. Without overlap every dispatch finishes
    before compute starts and every combine waits for all compute. With
    overlap, compute of slot ``i`` on a rank starts as soon as dispatch ``i``
    lands and the rank is free, and combine ``i`` starts once every rank has
    finished slot ``i`` and the switch is free.

Local (diagonal) tokens never touch the network but are computed on their
own rank.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .costmodel import ComputeModel, NetworkModel, compute_time, wire_time
from .decompose import Schedule, bvn_schedule, greedy_maxweight, order_schedule
from .engine import Engine, Phase
from .traffic import TrafficMatrix

NET = "net"
STRATEGY_KINDS = ("ring_sequential", "decomposed", "ideal")
PRIORITY_RULES = ("dispatch_first", "combine_first")

SUMMARY_FIELDS = [
    "strategy",
    "n",
    "total_tokens",
    "matchings",
    "makespan_us",
    "dispatch_us",
    "compute_us",
    "combine_us",
    "reconfig_us",
]


class SimulationError(RuntimeError):
    pass


def gpu(r: int) -> str:
    return f"gpu{r}"


@dataclass(frozen=True)
class Strategy:
    kind: str
    schedule: Optional[Schedule] = None
    overlap: bool = False
    priority: str = "dispatch_first"

    def __post_init__(self) -> None:
        if self.kind not in STRATEGY_KINDS:
            raise ValueError(f"unknown strategy kind {self.kind!r}")
        if self.kind == "decomposed" and self.schedule is None:
            raise ValueError("decomposed strategy requires a schedule")
        if self.kind != "decomposed" and (self.schedule is not None or self.overlap):
            raise ValueError(f"{self.kind} strategy takes no schedule and no overlap")
        if self.priority not in PRIORITY_RULES:
            raise ValueError(f"unknown network priority rule {self.priority!r}")

    @classmethod
    def ideal(cls) -> "Strategy":
        return cls("ideal")

    @classmethod
    def ring(cls) -> "Strategy":
        return cls("ring_sequential")

    @classmethod
    def decomposed(cls, schedule: Schedule, overlap: bool = False, priority: str = "dispatch_first") -> "Strategy":
        return cls("decomposed", schedule, overlap, priority)

    def describe(self) -> dict:
        d = {"kind": self.kind}
        if self.kind == "decomposed":
            d.update(
                source=self.schedule.source,
                matchings=len(self.schedule),
                overlap=self.overlap,
                priority=self.priority,
            )
        return d


@dataclass(frozen=True)
class MatchingStats:
    dispatch_time: float
    compute_time: float
    combine_time: float
    reconfig_events: int


@dataclass(frozen=True)
class SimReport:
    makespan: float
    phases: tuple[Phase, ...]
    per_matching: tuple[MatchingStats, ...]
    strategy_echo: dict
    n: int
    total_tokens: int
    tokens_computed: tuple[int, ...]
    comm_only: Optional[float] = None
    label: str = ""

    def busy(self, kind: str) -> float:
        return sum(p.duration for p in self.phases if p.label.split(":")[0] == kind)

    def compute_busy(self) -> float:
        per_rank: dict[str, float] = {}
        for p in self.phases:
            if p.label.startswith("compute"):
                per_rank[p.resource] = per_rank.get(p.resource, 0.0) + p.duration
        return max(per_rank.values(), default=0.0)

    @property
    def reconfig_events(self) -> int:
        return sum(1 for p in self.phases if p.label.startswith("reconfig"))

    def summary(self) -> dict:
        return {
            "strategy": self.label or self.strategy_echo.get("kind", ""),
            "n": self.n,
            "total_tokens": self.total_tokens,
            "matchings": len(self.per_matching),
            "makespan_us": self.makespan * 1e6,
            "dispatch_us": self.busy("dispatch") * 1e6,
            "compute_us": self.compute_busy() * 1e6,
            "combine_us": self.busy("combine") * 1e6,
            "reconfig_us": self.busy("reconfig") * 1e6,
        }

    def summary_csv(self, header: bool = False) -> str:
        out = io.StringIO()
        w = csv.DictWriter(out, fieldnames=SUMMARY_FIELDS, lineterminator="\n")
        if header:
            w.writeheader()
        w.writerow(format_row(self.summary()))
        return out.getvalue()

    def to_dict(self) -> dict:
        return {
            "label": self.label,
            "makespan": self.makespan,
            "comm_only": self.comm_only,
            "n": self.n,
            "total_tokens": self.total_tokens,
            "tokens_computed": list(self.tokens_computed),
            "strategy": self.strategy_echo,
            "per_matching": [
                {
                    "dispatch_time": m.dispatch_time,
                    "compute_time": m.compute_time,
                    "combine_time": m.combine_time,
                    "reconfig_events": m.reconfig_events,
                }
                for m in self.per_matching
            ],
            "phases": [
                {"label": p.label, "resource": p.resource, "start": p.start, "end": p.end, "tokens": p.tokens}
                for p in self.phases
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1)


def format_row(row: dict) -> dict:
    """Microsecond columns get fixed precision; other floats keep their short repr."""
    out = {}
    for k, v in row.items():
        if isinstance(v, float):
            v = f"{v:.6f}" if k.endswith("_us") else f"{v:.12g}"
        out[k] = v
    return out


# --------------------------------------------------------------------------- bounds


def injection_bound(counts: np.ndarray, net: NetworkModel) -> float:
    """Congestion-free completion: the busiest rank's send or receive volume over its port."""
    off = np.array(counts, dtype=np.int64)
    np.fill_diagonal(off, 0)
    if off.size == 0:
        return 0.0
    worst = int(max(off.sum(axis=1).max(), off.sum(axis=0).max()))
    return wire_time(net, worst)


def ring_link_loads(counts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Token load on each directed ring link under shortest-path routing.

    Returns ``(cw, ccw)`` where ``cw[i]`` is the load on link i -> i+1 and
    ``ccw[i]`` on link i -> i-1 (indices mod n). Antipodal pairs are split
    evenly between the two arcs.
    """
    n = counts.shape[0]
    cw = np.zeros(n)
    ccw = np.zeros(n)
    for s in range(n):
        for d in range(n):
            t = int(counts[s, d])
            if s == d or t == 0:
                continue
            fwd = (d - s) % n
            back = n - fwd
            if fwd <= back:
                share = t / 2 if fwd == back else t
                for h in range(fwd):
                    cw[(s + h) % n] += share
            if back <= fwd:
                share = t / 2 if fwd == back else t
                for h in range(back):
                    ccw[(s - h) % n] += share
    return cw, ccw


def ring_time(counts: np.ndarray, net: NetworkModel) -> float:
    n = counts.shape[0]
    if n < 2:
        return 0.0
    cw, ccw = ring_link_loads(counts)
    worst = float(max(cw.max(), ccw.max()))
    return worst * net.bytes_per_token / (net.bandwidth / 2)


def _slot_wire_time(net: NetworkModel, perm, tokens) -> float:
    return max((wire_time(net, t) for s, t in enumerate(tokens) if perm.dest_of[s] != s), default=0.0)


# --------------------------------------------------------------------------- simulate


def _check_inputs(m: TrafficMatrix, strategy: Strategy) -> bool:
    """Validate the schedule; returns True if it already carries the diagonal."""
    sched = strategy.schedule
    if sched.n != m.n:
        raise SimulationError(f"schedule is {sched.n}x{sched.n} but matrix is {m.n}x{m.n}")
    carried = sched.token_matrix()
    if np.array_equal(carried, m.counts):
        return bool(np.any(np.diag(carried)))
    if np.array_equal(carried, m.off_diagonal().counts):
        return False
    diff = carried - m.off_diagonal().counts
    np.fill_diagonal(diff, 0)
    s, d = (int(x) for x in np.argwhere(diff != 0)[0]) if diff.any() else (0, 0)
    raise SimulationError(
        f"schedule does not conserve the traffic matrix (first mismatch at pair {s}->{d})"
    )


def _add_full_batch_compute(eng: Engine, batches, compute: ComputeModel, deps) -> list:
    tasks = []
    for r, b in enumerate(batches):
        if b > 0:
            tasks.append(
                eng.add(f"compute:{r}", gpu(r), [("compute", compute_time(compute, int(b)))], deps=deps, tokens=int(b))
            )
    return tasks


def _simulate_bulk(m: TrafficMatrix, comm: float, compute: ComputeModel, eng: Engine) -> None:
    batches = m.counts.sum(axis=0)
    dispatch = eng.add("dispatch", NET, [("dispatch", comm)], tokens=int(m.off_diagonal().total))
    computes = _add_full_batch_compute(eng, batches, compute, [dispatch])
    eng.add("combine", NET, [("combine", comm)], deps=[dispatch, *computes], tokens=int(m.off_diagonal().total))


def _simulate_decomposed(
    m: TrafficMatrix, strategy: Strategy, compute: ComputeModel, net: NetworkModel, eng: Engine
) -> list[MatchingStats]:
    carries_diag = _check_inputs(m, strategy)
    sched = strategy.schedule
    n = m.n
    diag = np.zeros(n, dtype=np.int64) if carries_diag else m.diagonal()
    rd = net.reconfig_delay
    d_class, c_class = (0, 1) if strategy.priority == "dispatch_first" else (1, 0)

    batches = []
    for i, mt in enumerate(sched.matchings):
        recv = np.array(mt.received(), dtype=np.int64)
        if i == 0:
            recv = recv + diag
        batches.append(recv)

    stats = []
    dispatches = []
    prev = None
    for i, mt in enumerate(sched.matchings):
        t = _slot_wire_time(net, mt.perm, mt.tokens)
        off = sum(tok for s, tok in enumerate(mt.tokens) if mt.perm.dest_of[s] != s)
        task = eng.add(
            f"dispatch:{i}",
            NET,
            [(f"reconfig:dispatch:{i}", rd), (f"dispatch:{i}", t)],
            deps=[prev] if prev else [],
            priority=(d_class, i),
            tokens=off,
        )
        dispatches.append(task)
        prev = task
        back = mt.transposed()
        stats.append(
            MatchingStats(
                dispatch_time=t,
                compute_time=max(compute_time(compute, int(b)) for b in batches[i]),
                combine_time=_slot_wire_time(net, back.perm, back.tokens),
                reconfig_events=2,
            )
        )

    if not sched.matchings:
        # only local tokens: nothing to dispatch or combine
        _add_full_batch_compute(eng, diag, compute, [])
        return stats

    slot_computes: list[list] = []
    if strategy.overlap:
        for i, recv in enumerate(batches):
            tasks = []
            for r, b in enumerate(recv):
                if b > 0:
                    tasks.append(
                        eng.add(
                            f"compute:{i}:{r}",
                            gpu(r),
                            [(f"compute:{i}", compute_time(compute, int(b)))],
                            deps=[dispatches[i]],
                            priority=(i,),
                            tokens=int(b),
                        )
                    )
            slot_computes.append(tasks)
    else:
        full = np.sum(batches, axis=0)
        tasks = _add_full_batch_compute(eng, full, compute, [dispatches[-1]])
        slot_computes = [tasks] * len(batches)

    prev = None
    for i, mt in enumerate(sched.matchings):
        deps = [dispatches[i], *slot_computes[i]]
        if prev is not None:
            deps.append(prev)
        off = sum(tok for s, tok in enumerate(mt.tokens) if mt.perm.dest_of[s] != s)
        prev = eng.add(
            f"combine:{i}",
            NET,
            [(f"reconfig:combine:{i}", rd), (f"combine:{i}", stats[i].combine_time)],
            deps=deps,
            priority=(c_class, i),
            tokens=off,
        )
    return stats


def simulate(
    m: TrafficMatrix,
    strategy: Strategy,
    compute: Optional[ComputeModel] = None,
    net: Optional[NetworkModel] = None,
    label: str = "",
) -> SimReport:
    compute = compute or ComputeModel()
    net = net or NetworkModel()
    eng = Engine()
    stats: list[MatchingStats] = []
    comm_only = None
    if strategy.kind == "ideal":
        bound = injection_bound(m.counts, net)
        _simulate_bulk(m, bound, compute, eng)
        comm_only = 2 * bound
    elif strategy.kind == "ring_sequential":
        _simulate_bulk(m, ring_time(m.counts, net), compute, eng)
    else:
        stats = _simulate_decomposed(m, strategy, compute, net, eng)
    makespan = eng.run()

    computed = [0] * m.n
    for p in eng.phases:
        if p.label.startswith("compute"):
            computed[int(p.resource[3:])] += p.tokens
    phases = tuple(sorted(eng.phases, key=lambda p: (p.start, p.end, p.resource, p.label)))
    echo = {"strategy": strategy.describe(), "compute": compute.describe(), "network": net.describe()}
    return SimReport(
        makespan=makespan,
        phases=phases,
        per_matching=tuple(stats),
        strategy_echo=echo,
        n=m.n,
        total_tokens=m.total,
        tokens_computed=tuple(computed),
        comm_only=comm_only,
        label=label or strategy.kind,
    )


# --------------------------------------------------------------------------- suite

SUITE_LABELS = ("ring", "bvn", "bvn_overlap", "maxweight", "maxweight_overlap", "ideal")


def suite_strategies(m: TrafficMatrix, order: str = "as_produced", compute=None, net=None, **bvn_kwargs):
    """The standard comparison grid as ``(label, Strategy)`` pairs."""
    wire = m.off_diagonal()
    bvn = order_schedule(bvn_schedule(wire, **bvn_kwargs), order, compute, net)
    mw = order_schedule(greedy_maxweight(wire), order, compute, net)
    return [
        ("ring", Strategy.ring()),
        ("bvn", Strategy.decomposed(bvn, overlap=False)),
        ("bvn_overlap", Strategy.decomposed(bvn, overlap=True)),
        ("maxweight", Strategy.decomposed(mw, overlap=False)),
        ("maxweight_overlap", Strategy.decomposed(mw, overlap=True)),
        ("ideal", Strategy.ideal()),
    ]


def run_matrix_suite(
    m: TrafficMatrix,
    compute: Optional[ComputeModel] = None,
    net: Optional[NetworkModel] = None,
    order: str = "as_produced",
    labels=SUITE_LABELS,
) -> list[tuple[str, SimReport]]:
    """Run ring, BvN and max-weight (each with and without overlap) plus ideal on one matrix."""
    compute = compute or ComputeModel()
    net = net or NetworkModel()
    wanted = set(labels)
    out = []
    for label, strat in suite_strategies(m, order, compute, net):
        if label in wanted:
            out.append((label, simulate(m, strat, compute, net, label=label)))
    return out


def check_invariants(m: TrafficMatrix, report: SimReport) -> list[str]:
    """Structural checks on a report; returns human-readable violations (empty if clean)."""
    problems = []
    by_res: dict[str, list[Phase]] = {}
    for p in report.phases:
        if p.start < 0 or p.end < p.start:
            problems.append(f"bad interval {p}")
        by_res.setdefault(p.resource, []).append(p)
    for res, ps in by_res.items():
        ps = sorted(ps, key=lambda p: (p.start, p.end))
        for a, b in zip(ps, ps[1:]):
            if b.start < a.end:
                problems.append(f"overlap on {res}: {a.label} [{a.start}, {a.end}) vs {b.label} [{b.start}, {b.end})")
    end = max((p.end for p in report.phases), default=0.0)
    if report.makespan != end:
        problems.append(f"makespan {report.makespan} != last phase end {end}")
    cols = m.counts.sum(axis=0).tolist()
    if list(report.tokens_computed) != cols:
        problems.append(f"computed tokens {list(report.tokens_computed)} != column sums {cols}")
    if report.strategy_echo["strategy"]["kind"] == "decomposed":
        n_match = report.strategy_echo["strategy"]["matchings"]
        if report.reconfig_events != 2 * n_match:
            problems.append(f"{report.reconfig_events} reconfig events for {n_match} matchings")
    return problems
