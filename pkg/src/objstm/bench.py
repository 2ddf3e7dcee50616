"""Benchmark harness: seeded workloads, retry-until-commit workers, CSV output."""

from __future__ import annotations

import csv
import random
import sys
import threading
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional

from .core import OpStatus
from .history import Recorder, to_file
from .ostm import Ostm
from .rwstm import RwHashTable

BACKENDS = ("ht-ostm", "list-ostm", "rwstm")
SCHEDULES = ("interleaved", "free")

# name -> (lookup %, insert %, delete %)
WORKLOADS = {
    "lookup-intensive": (70, 10, 20),
    "lookup-intensive-fig": (80, 15, 5),
    "mid": (50, 25, 25),
    "update-intensive": (50, 25, 25),
    "update-intensive-fig": (10, 45, 45),
}

CSV_FIELDS = ["backend", "threads", "workload", "wall_time_seconds", "total_aborts",
              "throughput", "seed"]


class InvalidSpec(ValueError):
    pass


@dataclass(frozen=True)
class WorkloadSpec:
    lookup_pct: int = 50
    insert_pct: int = 25
    delete_pct: int = 25
    key_range: int = 1000
    ops_per_txn: int = 5
    txns_per_thread: int = 10
    threads: int = 1
    seed: int = 0
    buckets: int = 5
    name: str = "update-intensive"
    failed_delete_skip: bool = True
    prepopulate: bool = True
    # "interleaved": seeded method-by-method scheduling (reproducible).
    # "free": plain threads, optionally with a short interpreter switch
    # interval so that threads also preempt each other inside methods.
    schedule: str = "interleaved"
    switch_interval: Optional[float] = None
    backoff: bool = False

    def validate(self) -> None:
        pcts = (self.lookup_pct, self.insert_pct, self.delete_pct)
        if any(p < 0 for p in pcts) or sum(pcts) != 100:
            raise InvalidSpec(f"percentages {pcts} must be non-negative and sum to 100")
        for name in ("key_range", "ops_per_txn", "txns_per_thread", "threads", "buckets"):
            if getattr(self, name) < 1:
                raise InvalidSpec(f"{name} must be positive")
        if self.schedule not in SCHEDULES:
            raise InvalidSpec(f"schedule must be one of {SCHEDULES}")
        if self.switch_interval is not None and self.switch_interval <= 0:
            raise InvalidSpec("switch_interval must be positive")

    @classmethod
    def preset(cls, workload: str, **kw) -> "WorkloadSpec":
        name, (lu, ins, de) = parse_workload(workload)
        return cls(lookup_pct=lu, insert_pct=ins, delete_pct=de, name=name, **kw)


def parse_workload(text: str) -> tuple[str, tuple[int, int, int]]:
    """Preset name, or 'custom:L,I,D' / 'L,I,D' percentages."""
    if text in WORKLOADS:
        return text, WORKLOADS[text]
    body = text[len("custom:"):] if text.startswith("custom:") else text
    try:
        lu, ins, de = (int(p) for p in body.split(","))
    except ValueError:
        raise InvalidSpec(f"unknown workload {text!r}") from None
    return f"custom-{lu}-{ins}-{de}", (lu, ins, de)


@dataclass
class ThreadStats:
    commits: int = 0
    aborts: int = 0


@dataclass
class RunMetrics:
    backend: str
    workload: str
    threads: int
    seed: int
    wall_time_seconds: float
    total_aborts: int
    total_commits: int
    throughput: float
    per_thread: list[ThreadStats] = field(default_factory=list)
    final_size: int = 0

    def deterministic_part(self) -> tuple:
        """Everything except the timing fields."""
        return (self.backend, self.workload, self.threads, self.seed, self.total_aborts,
                self.total_commits, tuple((s.commits, s.aborts) for s in self.per_thread),
                self.final_size)


class _OstmAdapter:
    def __init__(self, stm: Ostm):
        self.stm = stm

    def begin(self):
        return self.stm.begin()

    def lookup(self, t, key):
        return self.stm.lookup(t, 0, key)[1]

    def insert(self, t, key, value):
        return self.stm.insert(t, 0, key, value)

    def delete(self, t, key):
        return self.stm.delete(t, 0, key)[1]

    def try_commit(self, t):
        return self.stm.try_commit(t)

    def contents(self):
        return self.stm.contents(0)


class _RwAdapter:
    def __init__(self, table: RwHashTable):
        self.table = table

    def begin(self):
        return self.table.begin()

    def lookup(self, t, key):
        return self.table.lookup(t, key)[1]

    def insert(self, t, key, value):
        return self.table.insert(t, key, value)

    def delete(self, t, key):
        return self.table.delete(t, key)[1]

    def try_commit(self, t):
        return self.table.try_commit(t)

    def contents(self):
        return self.table.contents()


def make_backend(backend: str, spec: WorkloadSpec, recorder: Optional[Recorder] = None,
                 debug: bool = False):
    if backend == "ht-ostm":
        return _OstmAdapter(Ostm(spec.buckets, failed_delete_skip=spec.failed_delete_skip,
                                 recorder=recorder, debug=debug))
    if backend == "list-ostm":
        return _OstmAdapter(Ostm(1, failed_delete_skip=spec.failed_delete_skip,
                                 recorder=recorder, debug=debug))
    if backend == "rwstm":
        if recorder is not None:
            raise InvalidSpec("history recording is only available for the OSTM backends")
        return _RwAdapter(RwHashTable(spec.buckets))
    raise InvalidSpec(f"unknown backend {backend!r}; choose from {BACKENDS}")


def thread_rng(seed: int, thread: int) -> random.Random:
    return random.Random(f"{seed}/{thread}")


def make_programs(spec: WorkloadSpec, thread: int) -> list[list[tuple[str, int, int]]]:
    """The fixed transaction programs of one worker: lists of (op, key, value)."""
    rng = thread_rng(spec.seed, thread)
    ops = ("lookup", "insert", "delete")
    weights = (spec.lookup_pct, spec.insert_pct, spec.delete_pct)
    programs = []
    serial = 0
    for _ in range(spec.txns_per_thread):
        prog = []
        for _ in range(rng.randint(1, spec.ops_per_txn)):
            op = rng.choices(ops, weights)[0]
            serial += 1
            prog.append((op, rng.randrange(spec.key_range), (thread + 1) * 1_000_000_000 + serial))
        programs.append(prog)
    return programs


def prepopulate(backend, spec: WorkloadSpec, batch: int = 50) -> list[int]:
    """Insert key_range // 2 distinct random keys, committed in batches."""
    keys = random.Random(f"{spec.seed}/prepopulate").sample(range(spec.key_range),
                                                            spec.key_range // 2)
    for i in range(0, len(keys), batch):
        t = backend.begin()
        for k in keys[i:i + batch]:
            backend.insert(t, k, k + 1)
        if backend.try_commit(t) is not OpStatus.COMMIT:
            raise RuntimeError("pre-population transaction aborted")
    return keys


class FreeRunning:
    """Workers run as plain threads; the interpreter decides when they switch."""

    def start(self) -> None:
        pass

    def step(self, worker: int, fn, *args):
        return fn(*args)

    def finish(self, worker: int) -> None:
        pass


class InterleavingScheduler:
    """Lets exactly one worker run one transactional method at a time.

    After each method the next worker is drawn from a seeded RNG, so threads
    interleave at method granularity in a reproducible order. Under a global
    interpreter lock this is what gives runs genuine overlap between
    transactions; free-running threads mostly execute whole transactions
    inside one time slice.
    """

    def __init__(self, workers: int, seed: int):
        self._rng = random.Random(f"{seed}/schedule")
        self._turn = [threading.Semaphore(0) for _ in range(workers)]
        self._active = list(range(workers))
        self._lock = threading.Lock()

    def start(self) -> None:
        self._hand_over()

    def _hand_over(self) -> None:
        with self._lock:
            nxt = self._rng.choice(self._active) if self._active else None
        if nxt is not None:
            self._turn[nxt].release()

    def step(self, worker: int, fn, *args):
        self._turn[worker].acquire()
        try:
            return fn(*args)
        finally:
            self._hand_over()

    def finish(self, worker: int) -> None:
        self._turn[worker].acquire()
        with self._lock:
            self._active.remove(worker)
        self._hand_over()


def _run_program(backend, prog, sched=None, worker: int = 0) -> bool:
    sched = sched or _FREE
    t = sched.step(worker, backend.begin)
    for op, key, value in prog:
        if op == "insert":
            status = sched.step(worker, backend.insert, t, key, value)
        else:
            status = sched.step(worker, getattr(backend, op), t, key)
        if status is OpStatus.ABORT:
            return False
    return sched.step(worker, backend.try_commit, t) is OpStatus.COMMIT


_FREE = FreeRunning()


def _worker(backend, programs, stats: ThreadStats, sched, worker: int,
            backoff_rng: Optional[random.Random], start: threading.Barrier) -> None:
    start.wait()
    try:
        for prog in programs:
            attempt = 0
            while not _run_program(backend, prog, sched, worker):
                stats.aborts += 1
                attempt += 1
                if backoff_rng is not None:
                    time.sleep(backoff_rng.random() * 1e-5 * 2 ** min(attempt, 10))
            stats.commits += 1
    finally:
        sched.finish(worker)


def run_benchmark(spec: WorkloadSpec, backend: str, recorder: Optional[Recorder] = None,
                  debug: bool = False) -> RunMetrics:
    spec.validate()
    impl = make_backend(backend, spec, recorder, debug)
    if spec.prepopulate:
        prepopulate(impl, spec)
    programs = [make_programs(spec, i) for i in range(spec.threads)]
    stats = [ThreadStats() for _ in range(spec.threads)]
    start = threading.Barrier(spec.threads + 1)
    sched = (InterleavingScheduler(spec.threads, spec.seed) if spec.schedule == "interleaved"
             else FreeRunning())
    workers = [
        threading.Thread(
            target=_worker, name=f"bench-{i}",
            args=(impl, programs[i], stats[i], sched, i,
                  thread_rng(spec.seed + 1, i) if spec.backoff else None, start))
        for i in range(spec.threads)
    ]
    old_interval = sys.getswitchinterval()
    if spec.switch_interval is not None:
        sys.setswitchinterval(spec.switch_interval)
    try:
        for w in workers:
            w.start()
        t0 = time.perf_counter()
        start.wait()
        sched.start()
        for w in workers:
            w.join()
        elapsed = time.perf_counter() - t0
    finally:
        sys.setswitchinterval(old_interval)
    commits = sum(s.commits for s in stats)
    return RunMetrics(
        backend=backend, workload=spec.name, threads=spec.threads, seed=spec.seed,
        wall_time_seconds=elapsed, total_aborts=sum(s.aborts for s in stats),
        total_commits=commits, throughput=commits / elapsed if elapsed > 0 else float("inf"),
        per_thread=stats, final_size=len(impl.contents()),
    )


def sweep(template: WorkloadSpec, thread_counts: list[int], backend: str,
          history_dir: Optional[Path] = None) -> list[RunMetrics]:
    """One fresh, pre-populated run per thread count."""
    results = []
    for n in thread_counts:
        spec = replace(template, threads=n)
        recorder = Recorder() if history_dir is not None else None
        results.append(run_benchmark(spec, backend, recorder))
        if recorder is not None:
            history_dir.mkdir(parents=True, exist_ok=True)
            to_file(recorder.history(), history_dir / f"{backend}-{spec.name}-t{n}-s{spec.seed}.hist")
    return results


def emit_csv(metrics: list[RunMetrics], path, append: bool = False) -> None:
    if not metrics:
        raise ValueError("no metrics to write")
    path = Path(path)
    write_header = not (append and path.exists() and path.stat().st_size > 0)
    with open(path, "a" if append else "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=CSV_FIELDS, extrasaction="ignore")
        if write_header:
            writer.writeheader()
        for m in metrics:
            row = asdict(m)
            row["wall_time_seconds"] = f"{m.wall_time_seconds:.6f}"
            row["throughput"] = f"{m.throughput:.2f}"
            writer.writerow(row)
