"""Command line: `bench`, `sweep` and `check` subcommands."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path
from typing import Optional

from .bench import (
    BACKENDS,
    SCHEDULES,
    WORKLOADS,
    InvalidSpec,
    RunMetrics,
    WorkloadSpec,
    emit_csv,
    run_benchmark,
    sweep,
)
from .checker import LegalityViolation, check_co_opacity
from .history import MalformedHistory, Recorder, from_file, to_file


def _on_off(text: str) -> bool:
    if text not in ("on", "off"):
        raise argparse.ArgumentTypeError("expected on or off")
    return text == "on"


def _thread_list(text: str) -> list[int]:
    try:
        return [int(p) for p in text.split(",") if p]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad thread list {text!r}") from None


def _add_workload_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--backend", choices=BACKENDS, default="ht-ostm")
    p.add_argument("--txns-per-thread", type=int, default=10)
    p.add_argument("--ops-per-txn", type=int, default=5)
    p.add_argument("--buckets", type=int, default=5)
    p.add_argument("--key-range", type=int, default=1000)
    p.add_argument("--workload", default="lookup-intensive",
                   help=f"one of {', '.join(WORKLOADS)}, or custom:L,I,D")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--failed-delete-skip", type=_on_off, default=True, metavar="on|off")
    p.add_argument("--schedule", choices=SCHEDULES, default="interleaved")
    p.add_argument("--switch-interval", type=float, default=None,
                   help="interpreter thread switch interval in seconds (free schedule)")
    p.add_argument("--backoff", action="store_true", help="randomized exponential backoff on abort")
    p.add_argument("--csv", type=Path, default=None)
    p.add_argument("--append", action="store_true", help="append to an existing CSV file")


def _spec(args, threads: int) -> WorkloadSpec:
    return WorkloadSpec.preset(
        args.workload, threads=threads, txns_per_thread=args.txns_per_thread,
        ops_per_txn=args.ops_per_txn, buckets=args.buckets, key_range=args.key_range,
        seed=args.seed, failed_delete_skip=args.failed_delete_skip, schedule=args.schedule,
        switch_interval=args.switch_interval, backoff=args.backoff)


def _summary(m: RunMetrics) -> str:
    return (f"{m.backend:9s} threads={m.threads:<3d} workload={m.workload} seed={m.seed} "
            f"commits={m.total_commits} aborts={m.total_aborts} "
            f"wall={m.wall_time_seconds:.4f}s throughput={m.throughput:.1f}/s")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="objstm", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    b = sub.add_parser("bench", help="run one benchmark configuration")
    _add_workload_args(b)
    b.add_argument("--threads", type=int, default=4)
    b.add_argument("--record-history", type=Path, default=None)

    s = sub.add_parser("sweep", help="run one benchmark per thread count")
    _add_workload_args(s)
    s.add_argument("--threads", type=_thread_list, default=[2, 4, 8, 16, 32, 64])
    s.add_argument("--history-dir", type=Path, default=None,
                   help="write one history file per run into this directory")

    c = sub.add_parser("check", help="decide co-opacity of a recorded history file")
    c.add_argument("history", type=Path)
    return parser


def _cmd_bench(args) -> int:
    recorder = Recorder() if args.record_history else None
    m = run_benchmark(_spec(args, args.threads), args.backend, recorder)
    print(_summary(m))
    if recorder is not None:
        to_file(recorder.history(), args.record_history)
        print(f"history written to {args.record_history}")
    if args.csv:
        emit_csv([m], args.csv, append=args.append)
    return 0


def _cmd_sweep(args) -> int:
    results = sweep(_spec(args, 1), args.threads, args.backend, args.history_dir)
    for m in results:
        print(_summary(m))
    if args.csv:
        emit_csv(results, args.csv, append=args.append)
    return 0


def _cmd_check(args) -> int:
    try:
        history = from_file(args.history)
    except (OSError, MalformedHistory) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    verdict = check_co_opacity(history)
    txns = len(history.transactions())
    print(f"transactions: {txns}  methods: {len(history)}")
    counts = verdict.edge_counts()
    print("edges: " + ", ".join(f"{t.value}={n}" for t, n in sorted(
        counts.items(), key=lambda kv: kv[0].value)) if counts else "edges: none")
    if verdict.co_opaque:
        print("verdict: co-opaque")
        print("witness: " + " ".join(f"T{t}" for t in verdict.witness))
        return 0
    print("verdict: NOT co-opaque")
    v = verdict.violation
    if isinstance(v, LegalityViolation):
        r = v.method
        print(f"illegal return: T{r.t_id} {r.kind.value}(obj={r.obj_id}, key={r.key}) "
              f"returned {r.value!r}, expected {v.expected!r} ({v.reason})")
        if v.interposing is not None:
            print(f"last committed update by T{v.interposing.t_id} at lp {v.interposing.lp_seq}")
    else:
        print("cycle: " + " -> ".join(f"T{t}" for t in v))
    return 1


def main(argv: Optional[list[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "bench":
            return _cmd_bench(args)
        if args.command == "sweep":
            return _cmd_sweep(args)
        return _cmd_check(args)
    except InvalidSpec as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
