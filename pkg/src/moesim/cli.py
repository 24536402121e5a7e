"""Command-line experiment runner.

Subcommands: ``gen`` (synthetic trace), ``decompose`` (matrix -> schedule
JSON), ``simulate`` (config-driven sweep, or one matrix + schedule), and
``suite`` (all strategies on one matrix). Exit codes: 0 success, 1
simulation error, 2 input error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .config import ExperimentConfig, SweepPoint, load_config
from .costmodel import ComputeModel, NetworkModel, load_profile
from .decompose import (
    DEFAULT_COEFF_FLOOR,
    ORDER_POLICIES,
    DecompositionError,
    decompose,
    load_schedule,
    order_schedule,
    save_schedule,
)
from .simulator import SUMMARY_FIELDS, SimulationError, Strategy, format_row, simulate, suite_strategies
from .sinkhorn import SinkhornError
from .traffic import (
    REGIMES,
    TrafficMatrix,
    build_matrix,
    gen_synthetic,
    load_matrix,
    load_placement,
    load_trace,
    save_matrix,
    save_trace,
)

EXIT_OK = 0
EXIT_SIM = 1
EXIT_INPUT = 2

# every input/format error in the library derives from ValueError
INPUT_ERRORS = (ValueError, OSError)
SIM_ERRORS = (SimulationError, DecompositionError, SinkhornError)

RESULT_FIELDS = ["config_hash", "trace", "layer", "regime", "tokens_per_rank", "skew", "reconfig_delay"] + SUMMARY_FIELDS


class UsageError(ValueError):
    pass


def _threads() -> int:
    raw = os.environ.get("MOESIM_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise UsageError(f"MOESIM_THREADS must be an integer, got {raw!r}") from None


# --------------------------------------------------------------------------- model flags


def _add_model_args(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("cost model")
    g.add_argument("--compute", choices=("knee", "linear", "table"), default="knee")
    g.add_argument("--floor", type=float, default=None, help="knee floor in seconds (default 250e-6)")
    g.add_argument("--knee-tokens", type=int, default=None, help="knee batch size (default 256)")
    g.add_argument("--per-token", type=float, default=None, help="seconds per token")
    g.add_argument("--profile", default=None, help="batch,seconds CSV for --compute table")
    g.add_argument("--bandwidth", type=float, default=NetworkModel().bandwidth, help="bytes/s per circuit")
    g.add_argument("--bytes-per-token", type=float, default=NetworkModel().bytes_per_token)
    g.add_argument("--reconfig-delay", type=float, default=NetworkModel().reconfig_delay, help="seconds")


def _models(args) -> tuple[ComputeModel, NetworkModel]:
    if args.compute == "linear":
        if args.per_token is None:
            raise UsageError("--compute linear needs --per-token")
        compute = ComputeModel.linear(args.per_token)
    elif args.compute == "table":
        if not args.profile:
            raise UsageError("--compute table needs --profile")
        compute = load_profile(args.profile)
    else:
        kw = {}
        if args.floor is not None:
            kw["floor"] = args.floor
        if args.knee_tokens is not None:
            kw["knee_tokens"] = args.knee_tokens
        if args.per_token is not None:
            kw["per_token"] = args.per_token
        compute = ComputeModel.knee(**kw)
    net = NetworkModel(args.bandwidth, args.bytes_per_token, args.reconfig_delay)
    return compute, net


def _load_matrix_arg(args) -> TrafficMatrix:
    if getattr(args, "matrix", None):
        return load_matrix(args.matrix)
    if getattr(args, "trace", None):
        trace = load_trace(args.trace)
        placement = load_placement(args.placement) if args.placement else None
        return build_matrix(trace, placement)
    raise UsageError("give --matrix or --trace")


# --------------------------------------------------------------------------- gen


def cmd_gen(args) -> int:
    tpr = args.tokens_per_rank
    if args.regime:
        if tpr is not None:
            raise UsageError("give --regime or --tokens-per-rank, not both")
        tpr = REGIMES[args.regime]
    if tpr is None:
        raise UsageError("give --regime or --tokens-per-rank")
    try:
        trace = gen_synthetic(args.n_ranks, args.n_experts, args.top_k, tpr, args.skew, args.seed)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    save_trace(trace, args.out)
    print(f"wrote {trace.n_tokens} tokens ({args.n_ranks} ranks, {args.n_experts} experts, top-{args.top_k}) to {args.out}")
    if args.matrix_out:
        save_matrix(build_matrix(trace), args.matrix_out)
        print(f"wrote traffic matrix to {args.matrix_out}")
    return EXIT_OK


# --------------------------------------------------------------------------- decompose


def _histogram(values: Sequence[float], bins: int = 8) -> list[str]:
    if not values:
        return []
    counts, edges = np.histogram(values, bins=bins)
    return [f"  [{lo:.4f}, {hi:.4f}) {'#' * int(c)} {int(c)}" for c, lo, hi in zip(counts, edges[:-1], edges[1:])]


def cmd_decompose(args) -> int:
    m = _load_matrix_arg(args)
    sched = decompose(m, args.method, coeff_floor=args.coeff_floor)
    if args.order != "as_produced":
        compute, net = _models(args)
        sched = order_schedule(sched, args.order, compute, net)
    if not sched.conserves(m):  # pragma: no cover - library guarantees this
        raise SimulationError("schedule failed conservation")
    if args.out:
        save_schedule(sched, args.out)
    print(f"method: {sched.source}")
    print(f"matchings: {len(sched)}")
    coeffs = [mt.coefficient for mt in sched if mt.coefficient is not None]
    cleanup = sum(1 for mt in sched if mt.cleanup)
    if sched.source == "bvn":
        print(f"cleanup matchings: {cleanup}")
        print("coefficient histogram:")
        for line in _histogram(coeffs):
            print(line)
    print("tokens per matching: " + " ".join(str(mt.total) for mt in sched))
    if args.out:
        print(f"wrote schedule to {args.out}")
    return EXIT_OK


# --------------------------------------------------------------------------- simulate


def _point_matrix(cfg: ExperimentConfig, point: SweepPoint) -> TrafficMatrix:
    placement = load_placement(cfg.placement) if cfg.placement else None
    if point.trace:
        trace = load_trace(point.trace, layer_id=point.layer)
    else:
        trace = gen_synthetic(
            cfg.n_ranks,
            cfg.n_experts,
            cfg.top_k,
            point.tokens_per_rank,
            point.skew,
            seed=cfg.seed + point.layer,
            layer_id=point.layer,
        )
    return build_matrix(trace, placement)


def run_point(cfg: ExperimentConfig, point: SweepPoint, compute: ComputeModel):
    m = _point_matrix(cfg, point)
    net = cfg.network_model(point.reconfig_delay)
    strategies = dict(suite_strategies(m, cfg.order, compute, net, coeff_floor=cfg.coeff_floor))
    out = []
    for label in cfg.strategies:
        strat = strategies[label]
        if strat.kind == "decomposed" and cfg.priority != strat.priority:
            strat = Strategy.decomposed(strat.schedule, strat.overlap, cfg.priority)
        out.append((label, simulate(m, strat, compute, net, label=label)))
    return out


def run_experiment(cfg: ExperimentConfig, threads: int = 1):
    """Run every sweep point; results come back in sweep order regardless of threading."""
    compute = cfg.compute_model()
    points = cfg.sweep()
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(lambda p: run_point(cfg, p, compute), points))
    else:
        results = [run_point(cfg, p, compute) for p in points]
    return list(zip(points, results))


def results_csv(cfg: ExperimentConfig, results) -> str:
    digest = cfg.digest()
    out = io.StringIO()
    w = csv.DictWriter(out, fieldnames=RESULT_FIELDS, lineterminator="\n")
    w.writeheader()
    for point, reports in sorted(results, key=lambda pr: pr[0].key()):
        for _, rep in reports:
            row = {
                "config_hash": digest,
                "trace": os.path.basename(point.trace) if point.trace else "",
                "layer": point.layer,
                "regime": point.regime,
                "tokens_per_rank": point.tokens_per_rank,
                "skew": point.skew,
                "reconfig_delay": point.reconfig_delay,
            }
            row.update(rep.summary())
            w.writerow(format_row(row))
    return out.getvalue()


def cmd_simulate(args) -> int:
    if args.config:
        if args.matrix or args.schedule:
            raise UsageError("--config cannot be combined with --matrix/--schedule")
        cfg = load_config(args.config)
        outdir = args.out_dir or cfg.output_dir
        results = run_experiment(cfg, _threads())
        os.makedirs(outdir, exist_ok=True)
        csv_path = os.path.join(outdir, "results.csv")
        with open(csv_path, "w", encoding="utf-8") as f:
            f.write(results_csv(cfg, results))
        timelines = {
            "config_hash": cfg.digest(),
            "config": cfg.resolved(),
            "runs": [
                {"sweep": point.__dict__, "reports": [rep.to_dict() for _, rep in reports]}
                for point, reports in sorted(results, key=lambda pr: pr[0].key())
            ],
        }
        json_path = os.path.join(outdir, "timelines.json")
        with open(json_path, "w", encoding="utf-8") as f:
            json.dump(timelines, f, indent=1)
            f.write("\n")
        rows = sum(len(r) for _, r in results)
        print(f"{len(results)} sweep points, {rows} rows -> {csv_path}")
        print(f"timelines -> {json_path}")
        return EXIT_OK

    if not (args.matrix and args.schedule):
        raise UsageError("give --config, or both --matrix and --schedule")
    m = load_matrix(args.matrix)
    sched = load_schedule(args.schedule)
    compute, net = _models(args)
    strat = Strategy.decomposed(sched, overlap=args.overlap)
    label = f"{sched.source}{'_overlap' if args.overlap else ''}"
    rep = simulate(m, strat, compute, net, label=label)
    sys.stdout.write(rep.summary_csv(header=True))
    if args.json:
        with open(args.json, "w", encoding="utf-8") as f:
            f.write(rep.to_json())
    return EXIT_OK


# --------------------------------------------------------------------------- suite


def cmd_suite(args) -> int:
    m = _load_matrix_arg(args)
    compute, net = _models(args)
    print(json.dumps({"compute": compute.describe(), "network": net.describe()}), file=sys.stderr)
    reports = []
    for label, strat in suite_strategies(m, args.order, compute, net, coeff_floor=args.coeff_floor):
        reports.append(simulate(m, strat, compute, net, label=label))
    out = io.StringIO()
    w = csv.DictWriter(out, fieldnames=SUMMARY_FIELDS, lineterminator="\n")
    w.writeheader()
    for rep in reports:
        w.writerow(format_row(rep.summary()))
    sys.stdout.write(out.getvalue())
    if args.json:
        with open(args.json, "w", encoding="utf-8") as f:
            json.dump([r.to_dict() for r in reports], f, indent=1)
    return EXIT_OK


# --------------------------------------------------------------------------- entry


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_INPUT)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="moesim", description=__doc__.splitlines()[0], allow_abbrev=False)
    p.add_argument("--version", action="version", version=f"moesim {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen", help="write a synthetic moetrace v1 file", allow_abbrev=False)
    g.add_argument("--n-ranks", type=int, default=8)
    g.add_argument("--n-experts", type=int, default=8)
    g.add_argument("--top-k", type=int, default=2)
    g.add_argument("--tokens-per-rank", type=int, default=None)
    g.add_argument("--regime", choices=sorted(REGIMES), default=None)
    g.add_argument("--skew", type=float, default=1.0)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.add_argument("--matrix-out", default=None, help="also write the traffic matrix CSV")
    g.set_defaults(func=cmd_gen)

    d = sub.add_parser("decompose", help="decompose a traffic matrix into matchings", allow_abbrev=False)
    d.add_argument("--matrix", default=None, help="traffic matrix CSV")
    d.add_argument("--trace", default=None, help="moetrace v1 file (alternative to --matrix)")
    d.add_argument("--placement", default=None)
    d.add_argument("--method", choices=("bvn", "maxweight"), required=True)
    d.add_argument("--coeff-floor", type=float, default=DEFAULT_COEFF_FLOOR)
    d.add_argument("--order", choices=ORDER_POLICIES, default="as_produced")
    d.add_argument("--out", default=None, help="schedule JSON output")
    _add_model_args(d)
    d.set_defaults(func=cmd_decompose)

    s = sub.add_parser("simulate", help="run a config sweep or one schedule", allow_abbrev=False)
    s.add_argument("--config", default=None)
    s.add_argument("--out-dir", default=None, help="overrides output_dir from the config")
    s.add_argument("--matrix", default=None)
    s.add_argument("--schedule", default=None)
    s.add_argument("--overlap", action="store_true")
    s.add_argument("--json", default=None, help="write the full timeline JSON here")
    _add_model_args(s)
    s.set_defaults(func=cmd_simulate)

    u = sub.add_parser("suite", help="all strategies on one matrix", allow_abbrev=False)
    u.add_argument("--matrix", default=None)
    u.add_argument("--trace", default=None)
    u.add_argument("--placement", default=None)
    u.add_argument("--order", choices=ORDER_POLICIES, default="as_produced")
    u.add_argument("--coeff-floor", type=float, default=DEFAULT_COEFF_FLOOR)
    u.add_argument("--json", default=None)
    _add_model_args(u)
    u.set_defaults(func=cmd_suite)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (UsageError, *INPUT_ERRORS) as exc:
        print(f"moesim {args.command}: input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except SIM_ERRORS as exc:
        print(f"moesim {args.command}: simulation error: {exc}", file=sys.stderr)
        return EXIT_SIM


if __name__ == "__main__":
    sys.exit(main())
