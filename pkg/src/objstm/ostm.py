"""Object-level STM over hash tables whose buckets are red/blue lists.

Lookups and deletes validate against shared memory when they run. Inserts
and the structural part of deletes are buffered in the transaction log and
applied at commit while every touched location is latched.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

from .core import (
    NIL,
    ListType,
    OpName,
    OpStatus,
    TimestampSource,
    TransactionNotLive,
    TxStatus,
    UnknownTransaction,
    ValidationType,
    Value,
    check_payload,
    check_user_key,
)
from .history import Kind, MethodRecord, Recorder
from .lazyrb_list import (
    Location,
    Node,
    RblList,
    acquire_sorted,
    get_apt_curr,
    intra_trans_validation,
    method_validation,
    rbl_del,
    rbl_ins,
    rbl_search,
    release_location,
    release_nodes,
    stamp,
    trans_validation,
)

_HASH_MULT = 0x9E3779B97F4A7C15
_MASK64 = (1 << 64) - 1


def bucket_index(key: int, n_buckets: int) -> int:
    """Multiplicative hash of the key, reduced modulo the bucket count."""
    return (((key * _HASH_MULT) & _MASK64) >> 32) % n_buckets


@dataclass(slots=True)
class LogEntry:
    obj_id: int
    key: int
    value: Value
    opn: OpName
    op_status: OpStatus
    location: Optional[Location] = None
    created_node: Optional[Node] = None
    bucket: int = 0


@dataclass
class TxLog:
    t_id: int
    tx_status: TxStatus = TxStatus.LIVE
    entries: dict[tuple[int, int], LogEntry] = field(default_factory=dict)


_KIND = {OpName.LOOKUP: Kind.LOOKUP, OpName.DELETE: Kind.DELETE, OpName.INSERT: Kind.INSERT}


class Ostm:
    """A set of hash-table objects sharing one transaction registry.

    buckets=1 turns every object into a single sorted list.
    """

    def __init__(self, buckets: int = 5, objects: int = 1, *,
                 failed_delete_skip: bool = True, early_abort: bool = True,
                 debug: bool = False, recorder: Optional[Recorder] = None,
                 timestamps: Optional[TimestampSource] = None):
        if buckets < 1 or objects < 1:
            raise ValueError("need at least one bucket and one object")
        self.n_buckets = buckets
        self.failed_delete_skip = failed_delete_skip
        self.early_abort = early_abort
        self.debug = debug
        self.recorder = recorder
        self._ts = timestamps or TimestampSource()
        self._objects = {o: [RblList(debug) for _ in range(buckets)] for o in range(objects)}
        self._logs: dict[int, TxLog] = {}

    # Structure access

    def bucket_of(self, key: int) -> int:
        return bucket_index(key, self.n_buckets)

    def buckets(self, obj_id: int = 0) -> list[RblList]:
        return self._objects[obj_id]

    def list_for(self, obj_id: int, key: int) -> RblList:
        try:
            lists = self._objects[obj_id]
        except KeyError:
            raise KeyError(f"no object {obj_id}") from None
        return lists[self.bucket_of(key)]

    def contents(self, obj_id: int = 0) -> dict[int, Value]:
        """Blue-reachable key/value pairs; only meaningful when quiescent."""
        out = {}
        for lst in self._objects[obj_id]:
            for n in lst.blue_nodes():
                out[n.key] = n.value
        return out

    def live_count(self) -> int:
        return sum(1 for log in list(self._logs.values()) if log.tx_status is TxStatus.LIVE)

    # History plumbing

    def _tick(self) -> int:
        return self.recorder.tick() if self.recorder is not None else 0

    def _record(self, t_id, kind, inv, lp, obj_id=None, key=None, value=NIL,
                status=OpStatus.OK) -> None:
        if self.recorder is not None:
            self.recorder.record(MethodRecord(
                t_id=t_id, kind=kind, obj_id=obj_id, key=key, value=value, status=status,
                inv_seq=inv, lp_seq=lp, rsp_seq=self.recorder.tick()))

    def _live(self, t_id: int) -> TxLog:
        log = self._logs.get(t_id)
        if log is None:
            raise UnknownTransaction(t_id)
        if log.tx_status is not TxStatus.LIVE:
            raise TransactionNotLive(f"transaction {t_id} is {log.tx_status.value}")
        return log

    def _finish(self, log: TxLog, status: TxStatus) -> None:
        log.tx_status = status
        log.entries.clear()

    # Transactional API

    def begin(self) -> int:
        inv = self._tick()
        t_id = self._ts.next()
        lp = self._tick()
        self._logs[t_id] = TxLog(t_id)
        self._record(t_id, Kind.BEGIN, inv, lp)
        return t_id

    def find_in_log(self, t_id: int, obj_id: int, key: int) -> Optional[LogEntry]:
        log = self._logs.get(t_id)
        if log is None:
            raise UnknownTransaction(t_id)
        return log.entries.get((obj_id, key))

    def insert(self, t_id: int, obj_id: int, key: int, value: Value) -> OpStatus:
        check_user_key(key)
        check_payload(value)
        log = self._live(t_id)
        inv = self._tick()
        entry = log.entries.get((obj_id, key))
        if entry is None:
            log.entries[(obj_id, key)] = LogEntry(obj_id, key, value, OpName.INSERT, OpStatus.OK)
        else:
            entry.opn, entry.value, entry.op_status = OpName.INSERT, value, OpStatus.OK
        self._record(t_id, Kind.INSERT, inv, self._tick(), obj_id, key, value)
        return OpStatus.OK

    def lookup(self, t_id: int, obj_id: int, key: int) -> tuple[Value, OpStatus]:
        check_user_key(key)
        log = self._live(t_id)
        inv = self._tick()
        entry = log.entries.get((obj_id, key))
        if entry is None:
            return self._shared_read(log, obj_id, key, OpName.LOOKUP, inv)
        if entry.opn is OpName.DELETE:
            value, status = NIL, OpStatus.FAIL
        else:
            value, status = entry.value, entry.op_status
        self._record(t_id, Kind.LOOKUP, inv, self._tick(), obj_id, key, value, status)
        return value, status

    def delete(self, t_id: int, obj_id: int, key: int) -> tuple[Value, OpStatus]:
        check_user_key(key)
        log = self._live(t_id)
        inv = self._tick()
        entry = log.entries.get((obj_id, key))
        if entry is None:
            return self._shared_read(log, obj_id, key, OpName.DELETE, inv)
        if entry.opn is OpName.INSERT:
            value, status = entry.value, OpStatus.OK
            entry.opn, entry.value, entry.op_status = OpName.DELETE, NIL, OpStatus.OK
        elif entry.opn is OpName.DELETE:
            value, status = NIL, OpStatus.FAIL
        else:
            value, status = entry.value, entry.op_status
            entry.opn = OpName.DELETE
        self._record(t_id, Kind.DELETE, inv, self._tick(), obj_id, key, value, status)
        return value, status

    def _shared_read(self, log: TxLog, obj_id: int, key: int, opn: OpName,
                     inv: int) -> tuple[Value, OpStatus]:
        """Validated read of shared memory for a lookup or the first delete of a key."""
        t_id = log.t_id
        lst = self.list_for(obj_id, key)
        loc, status = rbl_search(lst, t_id, key, ValidationType.RV, self.early_abort)
        if status is OpStatus.ABORT:
            lp = self._tick()
            self._finish(log, TxStatus.ABORT)
            self._record(t_id, _KIND[opn], inv, lp, obj_id, key, NIL, OpStatus.ABORT)
            return NIL, OpStatus.ABORT
        node = get_apt_curr(loc, key)
        created = None
        if node is loc.blue_curr:
            value, status = node.value, OpStatus.OK
        else:
            value, status = NIL, OpStatus.FAIL
            if node is None:
                node = created = rbl_ins(loc, key, NIL, ListType.RL)
        stamp(node, OpName.LOOKUP, t_id)
        lp = self._tick()
        release_location(loc)
        if created is not None:
            created.latch.release()
        log.entries[(obj_id, key)] = LogEntry(obj_id, key, value, opn, status, location=loc)
        self._record(t_id, _KIND[opn], inv, lp, obj_id, key, value, status)
        return value, status

    def try_abort(self, t_id: int) -> OpStatus:
        log = self._live(t_id)
        inv = self._tick()
        lp = self._tick()
        self._finish(log, TxStatus.ABORT)
        self._record(t_id, Kind.TRYA, inv, lp, status=OpStatus.ABORT)
        return OpStatus.ABORT

    def try_commit(self, t_id: int) -> OpStatus:
        log = self._live(t_id)
        inv = self._tick()
        updates = [e for e in log.entries.values() if self._needs_commit_work(e)]
        if not updates:
            lp = self._tick()
            self._finish(log, TxStatus.COMMIT)
            self._record(t_id, Kind.TRYC, inv, lp, status=OpStatus.COMMIT)
            return OpStatus.COMMIT
        updates.sort(key=lambda e: (e.obj_id, e.key))
        for e in updates:
            e.bucket = self.bucket_of(e.key)
        held = self._latch_and_validate(t_id, updates)
        if held is None:
            lp = self._tick()
            self._finish(log, TxStatus.ABORT)
            self._record(t_id, Kind.TRYC, inv, lp, status=OpStatus.ABORT)
            return OpStatus.ABORT
        created = self._apply(t_id, updates, held)
        lp = self._tick()
        release_nodes(held)
        release_nodes(created)
        self._finish(log, TxStatus.COMMIT)
        self._record(t_id, Kind.TRYC, inv, lp, status=OpStatus.COMMIT)
        return OpStatus.COMMIT

    def _needs_commit_work(self, e: LogEntry) -> bool:
        if e.opn is OpName.INSERT:
            return True
        if e.opn is OpName.DELETE:
            return not (self.failed_delete_skip and e.op_status is OpStatus.FAIL)
        return False

    def _latch_and_validate(self, t_id: int, updates: list[LogEntry]) -> Optional[list[Node]]:
        """Latch every update location at once and validate them all.

        Nodes are latched in (obj_id, bucket, key) order across all entries,
        which is a single global order, so concurrent commits cannot deadlock.
        Returns the held nodes, or None after releasing them on abort.
        """
        while True:
            locs = []
            for e in updates:
                lst = self._objects[e.obj_id][e.bucket]
                locs.append(lst.locate(e.key))
                if lst.after_traverse is not None:
                    lst.after_traverse(e.key)
            held = acquire_sorted(
                ((e.obj_id, e.bucket, n.key), n) for e, loc in zip(updates, locs) for n in loc.nodes())
            if any(method_validation(loc) is OpStatus.RETRY for loc in locs):
                doomed = self.early_abort and any(
                    get_apt_curr(loc, e.key) is not None
                    and trans_validation(t_id, e.key, loc, ValidationType.TRYC) is OpStatus.ABORT
                    for e, loc in zip(updates, locs))
                release_nodes(held)
                if doomed:
                    return None
                continue
            if any(trans_validation(t_id, e.key, loc, ValidationType.TRYC) is OpStatus.ABORT
                   for e, loc in zip(updates, locs)):
                release_nodes(held)
                return None
            for e, loc in zip(updates, locs):
                e.location = loc
            return held

    def _apply(self, t_id: int, updates: list[LogEntry], held: list[Node]) -> list[Node]:
        """Apply buffered updates in key order; returns nodes created latched."""
        created: list[Node] = []
        prev_in_bucket: dict[tuple[int, int], LogEntry] = {}
        for e in updates:
            slot = (e.obj_id, e.bucket)
            loc = intra_trans_validation(e, prev_in_bucket.get(slot))
            if self.debug:
                self._check_repaired(e, loc, held, created)
            node = get_apt_curr(loc, e.key)
            if e.opn is OpName.INSERT:
                if node is loc.blue_curr:
                    node.value = e.value
                elif node is not None:
                    rbl_ins(loc, e.key, e.value, ListType.RL_BL)
                else:
                    node = e.created_node = rbl_ins(loc, e.key, e.value, ListType.BL)
                    created.append(node)
                stamp(node, OpName.INSERT, t_id)
            elif e.op_status is OpStatus.OK:
                if node is loc.blue_curr:
                    rbl_del(loc)
                elif node is None:
                    # Delete of a key this transaction inserted itself: leave a
                    # dead node so later readers still see the delete stamp.
                    node = e.created_node = rbl_ins(loc, e.key, NIL, ListType.RL)
                    created.append(node)
                stamp(node, OpName.DELETE, t_id)
            prev_in_bucket[slot] = e
        return created

    @staticmethod
    def _check_repaired(e: LogEntry, loc: Location, held: list[Node], created: list[Node]) -> None:
        owned = {id(n) for n in held} | {id(n) for n in created}
        assert all(id(n) in owned for n in loc.nodes()), f"unlatched node in {loc}"
        assert loc.brackets(e.key), f"repaired location {loc} misses key {e.key}"
        assert method_validation(loc) is OpStatus.OK, f"repaired location {loc} is stale"
