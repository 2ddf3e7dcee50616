"""Read/write STM with basic timestamp ordering, and a hash table built on it.

RwStm manages integer-addressed cells. A read aborts when a younger
transaction already wrote the cell; a commit aborts when any written cell was
read or written by a younger transaction. Writes are buffered until commit.

RwHashTable implements insert/lookup/delete as sorted linked-list buckets
whose heads and nodes are cells, so every traversed node is a transactional
read. This is how a hash table is written against a read/write interface.
"""

from __future__ import annotations

import itertools
import threading
from dataclasses import dataclass, field
from typing import Any, NamedTuple, Optional

from .core import (
    HEAD_KEY,
    NIL,
    OpStatus,
    TimestampSource,
    TransactionNotLive,
    TxStatus,
    UnknownTransaction,
    Value,
    check_payload,
    check_user_key,
)
from .ostm import bucket_index


@dataclass(eq=False)
class RwCell:
    key: int
    value: Any = NIL
    max_read_ts: int = 0
    max_write_ts: int = 0
    latch: threading.Lock = field(default_factory=threading.Lock, repr=False)


@dataclass
class RwTxLog:
    t_id: int
    status: TxStatus = TxStatus.LIVE
    read_set: dict[int, Any] = field(default_factory=dict)
    write_set: dict[int, Any] = field(default_factory=dict)


class RwStm:
    def __init__(self, timestamps: Optional[TimestampSource] = None):
        self._ts = timestamps or TimestampSource()
        self._cells: dict[int, RwCell] = {}
        self._cells_lock = threading.Lock()
        self._logs: dict[int, RwTxLog] = {}

    def cell(self, key: int) -> RwCell:
        c = self._cells.get(key)
        if c is None:
            with self._cells_lock:
                c = self._cells.setdefault(key, RwCell(key))
        return c

    def _live(self, t_id: int) -> RwTxLog:
        log = self._logs.get(t_id)
        if log is None:
            raise UnknownTransaction(t_id)
        if log.status is not TxStatus.LIVE:
            raise TransactionNotLive(f"transaction {t_id} is {log.status.value}")
        return log

    def _abort(self, log: RwTxLog) -> None:
        log.status = TxStatus.ABORT
        log.read_set.clear()
        log.write_set.clear()

    def begin(self) -> int:
        t_id = self._ts.next()
        self._logs[t_id] = RwTxLog(t_id)
        return t_id

    def read(self, t_id: int, key: int) -> tuple[Any, OpStatus]:
        log = self._live(t_id)
        if key in log.write_set:
            return log.write_set[key], OpStatus.OK
        if key in log.read_set:
            return log.read_set[key], OpStatus.OK
        c = self.cell(key)
        with c.latch:
            if t_id < c.max_write_ts:
                stale = True
            else:
                stale = False
                c.max_read_ts = max(c.max_read_ts, t_id)
                value = c.value
        if stale:
            self._abort(log)
            return NIL, OpStatus.ABORT
        log.read_set[key] = value
        return value, OpStatus.OK

    def write(self, t_id: int, key: int, value: Any) -> OpStatus:
        self._live(t_id).write_set[key] = value
        return OpStatus.OK

    def try_abort(self, t_id: int) -> OpStatus:
        self._abort(self._live(t_id))
        return OpStatus.ABORT

    def try_commit(self, t_id: int) -> OpStatus:
        log = self._live(t_id)
        cells = [self.cell(k) for k in sorted(log.write_set)]
        for c in cells:
            c.latch.acquire()
        try:
            if any(t_id < c.max_read_ts or t_id < c.max_write_ts for c in cells):
                self._abort(log)
                return OpStatus.ABORT
            for c in cells:
                c.value = log.write_set[c.key]
                c.max_write_ts = t_id
        finally:
            for c in cells:
                c.latch.release()
        log.status = TxStatus.COMMIT
        log.read_set.clear()
        log.write_set.clear()
        return OpStatus.COMMIT


class ListCell(NamedTuple):
    """Contents of one list cell. Bucket heads use HEAD_KEY."""
    key: int
    value: Value
    next: Optional[int]


class Aborted(Exception):
    """Raised inside RwHashTable traversals; turned into an ABORT status."""


class RwHashTable:
    """Hash table of sorted singly linked buckets stored in RwStm cells."""

    def __init__(self, buckets: int = 5, stm: Optional[RwStm] = None):
        self.stm = stm or RwStm()
        self.n_buckets = buckets
        self._addresses = itertools.count(buckets)
        for b in range(buckets):
            self.stm.cell(b).value = ListCell(HEAD_KEY, NIL, None)

    def begin(self) -> int:
        return self.stm.begin()

    def try_commit(self, t_id: int) -> OpStatus:
        return self.stm.try_commit(t_id)

    def try_abort(self, t_id: int) -> OpStatus:
        return self.stm.try_abort(t_id)

    def _read(self, t_id: int, addr: int) -> ListCell:
        value, status = self.stm.read(t_id, addr)
        if status is OpStatus.ABORT:
            raise Aborted
        return value

    def _find(self, t_id: int, key: int):
        """(pred address, pred cell, curr address, curr cell) with curr.key >= key."""
        pred_addr = bucket_index(key, self.n_buckets)
        pred = self._read(t_id, pred_addr)
        while pred.next is not None:
            curr = self._read(t_id, pred.next)
            if curr.key >= key:
                return pred_addr, pred, pred.next, curr
            pred_addr, pred = pred.next, curr
        return pred_addr, pred, None, None

    def lookup(self, t_id: int, key: int) -> tuple[Value, OpStatus]:
        check_user_key(key)
        try:
            _, _, _, curr = self._find(t_id, key)
        except Aborted:
            return NIL, OpStatus.ABORT
        if curr is not None and curr.key == key:
            return curr.value, OpStatus.OK
        return NIL, OpStatus.FAIL

    def insert(self, t_id: int, key: int, value: Value) -> OpStatus:
        check_user_key(key)
        check_payload(value)
        try:
            pred_addr, pred, curr_addr, curr = self._find(t_id, key)
        except Aborted:
            return OpStatus.ABORT
        if curr is not None and curr.key == key:
            self.stm.write(t_id, curr_addr, curr._replace(value=value))
        else:
            addr = next(self._addresses)
            self.stm.write(t_id, addr, ListCell(key, value, curr_addr))
            self.stm.write(t_id, pred_addr, pred._replace(next=addr))
        return OpStatus.OK

    def delete(self, t_id: int, key: int) -> tuple[Value, OpStatus]:
        check_user_key(key)
        try:
            pred_addr, pred, curr_addr, curr = self._find(t_id, key)
        except Aborted:
            return NIL, OpStatus.ABORT
        if curr is None or curr.key != key:
            return NIL, OpStatus.FAIL
        # Unlink and overwrite the removed node so concurrent readers of it conflict.
        self.stm.write(t_id, pred_addr, pred._replace(next=curr.next))
        self.stm.write(t_id, curr_addr, curr._replace(value=NIL, next=None))
        return curr.value, OpStatus.OK

    def contents(self) -> dict[int, Value]:
        """Committed key/value pairs; only meaningful when quiescent."""
        out = {}
        for b in range(self.n_buckets):
            nxt = self.stm.cell(b).value.next
            while nxt is not None:
                c = self.stm.cell(nxt).value
                out[c.key] = c.value
                nxt = c.next
        return out
