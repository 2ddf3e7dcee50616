"""Offline co-opacity checking of recorded histories.

The lp-ordered record list is taken as the sequential history. A history is
co-opaque when every read-like return is legal and the conflict graph over
transactions (conflict edges plus real-time edges) has no cycle; the
topological order of that graph is then an equivalent serial order.

`brute_force_opacity` is an independent oracle for small histories that
tries every real-time-respecting serial order.
"""

from __future__ import annotations

import heapq
import itertools
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from graphlib import CycleError, TopologicalSorter
from typing import Optional, Union

from .core import NIL, OpStatus, Value
from .history import OBJECT_KINDS, History, Kind, MethodRecord

READ_KINDS = (Kind.LOOKUP, Kind.DELETE)


class EdgeType(Enum):
    TRYC_TRYC = "TRYC_TRYC"
    TRYC_RV = "TRYC_RV"
    RV_TRYC = "RV_TRYC"
    REAL_TIME = "REAL_TIME"


@dataclass(frozen=True)
class ConflictEdge:
    from_tx: int
    to_tx: int
    edge_type: EdgeType
    obj_id: Optional[int] = None
    key: Optional[int] = None


@dataclass
class ConflictGraph:
    vertices: set[int] = field(default_factory=set)
    edges: list[ConflictEdge] = field(default_factory=list)


@dataclass(frozen=True)
class LegalityViolation:
    method: MethodRecord
    expected: Value
    # TRYC record of the nearest earlier committed update; None stands for
    # the initial transaction or, for a repeated access, the transaction itself.
    interposing: Optional[MethodRecord]
    reason: str


@dataclass
class Verdict:
    co_opaque: bool
    witness: Optional[list[int]] = None
    violation: Optional[Union[list[int], LegalityViolation]] = None
    edges: list[ConflictEdge] = field(default_factory=list)

    def edge_counts(self) -> dict[EdgeType, int]:
        return dict(Counter(e.edge_type for e in self.edges))


class CycleDetected(Exception):
    def __init__(self, members: list[int]):
        super().__init__(f"cycle among transactions {members}")
        self.members = members


class HistoryTooLarge(Exception):
    pass


@dataclass
class _TxView:
    records: list[MethodRecord]
    committed: bool
    tryc_lp: Optional[int]
    # First method per (obj, key), when it is a read-like method that returned.
    first_reads: dict[tuple[int, int], MethodRecord]
    # Final value per updated (obj, key); NIL marks a delete.
    writes: dict[tuple[int, int], Value]


def _tx_views(history: History) -> dict[int, _TxView]:
    views = {}
    for t, recs in history.transactions().items():
        committed = any(r.kind is Kind.TRYC and r.status is OpStatus.COMMIT for r in recs)
        tryc_lp = next((r.lp_seq for r in recs if r.kind is Kind.TRYC), None)
        first_reads: dict = {}
        seen: set = set()
        writes: dict = {}
        touched_by_update: set = set()
        for r in recs:
            if r.kind not in OBJECT_KINDS or r.status is OpStatus.ABORT:
                continue
            ok = (r.obj_id, r.key)
            if ok not in seen:
                seen.add(ok)
                if r.kind in READ_KINDS:
                    first_reads[ok] = r
            if r.kind is Kind.INSERT:
                writes[ok] = r.value
                touched_by_update.add(ok)
            elif r.kind is Kind.DELETE:
                writes[ok] = NIL
                if r.status is OpStatus.OK:
                    touched_by_update.add(ok)
        writes = {ok: v for ok, v in writes.items() if ok in touched_by_update}
        views[t] = _TxView(recs, committed, tryc_lp, first_reads, writes)
    return views


def check_legality(history: History) -> Optional[LegalityViolation]:
    """Return None when every read-like return is legal, else the first offender."""
    views = _tx_views(history)
    committed: dict[tuple[int, int], tuple[Value, MethodRecord]] = {}
    local: dict[int, dict[tuple[int, int], MethodRecord]] = {}
    for r in history.records:
        if r.kind is Kind.TRYC and r.status is OpStatus.COMMIT:
            for ok, v in views[r.t_id].writes.items():
                committed[ok] = (v, r)
            continue
        if r.kind not in OBJECT_KINDS or r.status is OpStatus.ABORT:
            continue
        ok = (r.obj_id, r.key)
        mine = local.setdefault(r.t_id, {})
        prev = mine.get(ok)
        if r.kind in READ_KINDS:
            if prev is not None:
                expected = NIL if prev.kind is Kind.DELETE else prev.value
                if r.value != expected:
                    return LegalityViolation(r, expected, None, "disagrees with own earlier method")
            else:
                expected, writer = committed.get(ok, (NIL, None))
                if r.value != expected:
                    return LegalityViolation(r, expected, writer,
                                             "disagrees with last committed update")
        mine[ok] = r
    return None


def find_conflicts(history: History) -> list[ConflictEdge]:
    views = _tx_views(history)
    writers: dict[tuple[int, int], list[tuple[int, int]]] = {}
    readers: dict[tuple[int, int], list[tuple[int, int]]] = {}
    for t, v in views.items():
        if v.committed:
            for ok in v.writes:
                writers.setdefault(ok, []).append((v.tryc_lp, t))
        for ok, r in v.first_reads.items():
            readers.setdefault(ok, []).append((r.lp_seq, t))
    edges: set[ConflictEdge] = set()
    for ok, ws in writers.items():
        ws.sort()
        for (_, a), (_, b) in itertools.combinations(ws, 2):
            edges.add(ConflictEdge(a, b, EdgeType.TRYC_TRYC, *ok))
        for r_lp, reader in readers.get(ok, []):
            for w_lp, writer in ws:
                if writer == reader:
                    continue
                if w_lp < r_lp:
                    edges.add(ConflictEdge(writer, reader, EdgeType.TRYC_RV, *ok))
                else:
                    edges.add(ConflictEdge(reader, writer, EdgeType.RV_TRYC, *ok))
    for a, b in history.real_time_pairs():
        edges.add(ConflictEdge(a, b, EdgeType.REAL_TIME))
    return sorted(edges, key=lambda e: (e.from_tx, e.to_tx, e.edge_type.value,
                                        e.obj_id or 0, e.key or 0))


def build_conflict_graph(history: History) -> ConflictGraph:
    vertices = {r.t_id for r in history.records}
    return ConflictGraph(vertices, find_conflicts(history))


def topological_serialize(graph: ConflictGraph) -> list[int]:
    """Order extending every edge; ties go to the smaller transaction id."""
    sorter: TopologicalSorter = TopologicalSorter()
    for v in graph.vertices:
        sorter.add(v)
    for e in graph.edges:
        sorter.add(e.to_tx, e.from_tx)
    try:
        sorter.prepare()
    except CycleError as exc:
        # graphlib closes the cycle by repeating its first node.
        raise CycleDetected(list(exc.args[1])[:-1]) from None
    ready = list(sorter.get_ready())
    heapq.heapify(ready)
    order = []
    while ready:
        v = heapq.heappop(ready)
        order.append(v)
        sorter.done(v)
        for w in sorter.get_ready():
            heapq.heappush(ready, w)
    return order


def check_co_opacity(history: History) -> Verdict:
    bad = check_legality(history)
    if bad is not None:
        return Verdict(False, violation=bad)
    graph = build_conflict_graph(history)
    try:
        order = topological_serialize(graph)
    except CycleDetected as exc:
        return Verdict(False, violation=exc.members, edges=graph.edges)
    return Verdict(True, witness=order, edges=graph.edges)


def replay_serial(history: History, order: list[int]) -> list[tuple[MethodRecord, Value]]:
    """Run transactions one after another against a plain map.

    Only committed transactions change the map. Returns every read-like
    record whose recorded value differs from the replay, with the replayed
    value.
    """
    views = _tx_views(history)
    state: dict[tuple[int, int], Value] = {}
    mismatches = []
    for t in order:
        view = views[t]
        overlay: dict[tuple[int, int], Value] = {}
        for r in view.records:
            if r.kind not in OBJECT_KINDS or r.status is OpStatus.ABORT:
                continue
            ok = (r.obj_id, r.key)
            if r.kind in READ_KINDS:
                current = overlay[ok] if ok in overlay else state.get(ok, NIL)
                if r.value != current:
                    mismatches.append((r, current))
            if r.kind is Kind.INSERT:
                overlay[ok] = r.value
            elif r.kind is Kind.DELETE:
                overlay[ok] = NIL
        if view.committed:
            state.update(overlay)
    return mismatches


def brute_force_opacity(history: History, max_methods: int = 64, max_txns: int = 6) -> bool:
    """True iff some serial order respecting real-time order replays legally."""
    txns = sorted({r.t_id for r in history.records})
    if len(txns) > max_txns:
        raise HistoryTooLarge(f"{len(txns)} transactions exceed the limit of {max_txns}")
    n_methods = sum(1 for r in history.records if r.kind in OBJECT_KINDS)
    if n_methods > max_methods:
        raise HistoryTooLarge(f"{n_methods} methods exceed the limit of {max_methods}")
    before = set(history.real_time_pairs())
    for order in itertools.permutations(txns):
        pos = {t: i for i, t in enumerate(order)}
        if any(pos[a] > pos[b] for a, b in before):
            continue
        if not replay_serial(history, list(order)):
            return True
    return False
