"""Sorted concurrent list with two link chains.

Every node sits on the red chain. Only unmarked nodes sit on the blue chain,
so the blue chain is the abstract set while the red chain also keeps deleted
and never-inserted-but-looked-up keys around to carry their timestamps.

Traversals run without latches and may see stale links. A caller latches the
four nodes of a Location and validates them before trusting what it saw.
"""

from __future__ import annotations

import itertools
import threading
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional

from .core import (
    HEAD_KEY,
    NIL,
    TAIL_KEY,
    ListType,
    OpName,
    OpStatus,
    ValidationType,
    Value,
)

_node_ids = itertools.count(1)


@dataclass(slots=True)
class MaxTs:
    lookup_ts: int = 0
    insert_ts: int = 0
    delete_ts: int = 0

    def as_tuple(self) -> tuple[int, int, int]:
        return (self.lookup_ts, self.insert_ts, self.delete_ts)


@dataclass(eq=False, slots=True)
class Node:
    key: int
    value: Value = NIL
    marked: bool = False
    red_next: Optional["Node"] = None
    blue_next: Optional["Node"] = None
    max_ts: MaxTs = field(default_factory=MaxTs)
    latch: threading.Lock = field(default_factory=threading.Lock, repr=False)
    node_id: int = field(default_factory=lambda: next(_node_ids))

    def __repr__(self) -> str:
        flag = "x" if self.marked else ""
        return f"Node({self.key}{flag})"


@dataclass(slots=True)
class Location:
    blue_pred: Node
    red_pred: Node
    red_curr: Node
    blue_curr: Node

    def nodes(self) -> list[Node]:
        """Distinct nodes in latch order (role order, which is also key order).

        Keys satisfy blue_pred <= red_pred < searched key <= red_curr <= blue_curr,
        so only the two pred roles or the two curr roles can share a node.
        """
        out = [self.blue_pred]
        if self.red_pred is not self.blue_pred:
            out.append(self.red_pred)
        out.append(self.red_curr)
        if self.blue_curr is not self.red_curr:
            out.append(self.blue_curr)
        return out

    def brackets(self, key: int) -> bool:
        return (self.blue_pred.key < key <= self.blue_curr.key
                and self.red_pred.key < key <= self.red_curr.key)


class RblList:
    """One bucket: head and tail sentinels, initially linked on both chains."""

    def __init__(self, debug: bool = False):
        self.tail = Node(TAIL_KEY)
        self.head = Node(HEAD_KEY, red_next=self.tail, blue_next=self.tail)
        self.debug = debug
        # Test hook, called between the unlatched traversal and latching.
        self.after_traverse: Optional[Callable[[int], None]] = None

    def locate(self, key: int) -> Location:
        """Unlatched traversal: blue chain first, then red chain from blue_pred."""
        bp = self.head
        bc = bp.blue_next
        while bc.key < key:
            bp = bc
            bc = bc.blue_next
        rp = bp
        rc = rp.red_next
        while rc.key < key:
            rp = rc
            rc = rc.red_next
        return Location(bp, rp, rc, bc)

    # Read-only views, meaningful at quiescent points.

    def red_nodes(self) -> list[Node]:
        out = []
        n = self.head.red_next
        while n is not self.tail:
            out.append(n)
            n = n.red_next
        return out

    def blue_nodes(self) -> list[Node]:
        out = []
        n = self.head.blue_next
        while n is not self.tail:
            out.append(n)
            n = n.blue_next
        return out

    def blue_keys(self) -> list[int]:
        return [n.key for n in self.blue_nodes()]

    def red_keys(self) -> list[int]:
        return [n.key for n in self.red_nodes()]

    def find_node(self, key: int) -> Optional[Node]:
        n = self.head.red_next
        while n.key < key:
            n = n.red_next
        return n if n.key == key else None

    def structural_violations(self) -> list[str]:
        """Check chain invariants; call only while no thread mutates the list."""
        problems = []
        red = [self.head] + self.red_nodes() + [self.tail]
        for a, b in zip(red, red[1:]):
            if not a.key < b.key:
                problems.append(f"red chain out of order: {a.key} !< {b.key}")
        keys = [n.key for n in red]
        if len(keys) != len(set(keys)):
            problems.append("duplicate key on red chain")
        red_ids = {id(n) for n in red}
        blue = [self.head] + self.blue_nodes() + [self.tail]
        for a, b in zip(blue, blue[1:]):
            if not a.key < b.key:
                problems.append(f"blue chain out of order: {a.key} !< {b.key}")
        for n in blue[1:-1]:
            if id(n) not in red_ids:
                problems.append(f"blue node {n.key} not on red chain")
            if n.marked:
                problems.append(f"marked node {n.key} on blue chain")
        blue_ids = {id(n) for n in blue}
        for n in red[1:-1]:
            if not n.marked and id(n) not in blue_ids:
                problems.append(f"unmarked node {n.key} missing from blue chain")
        return problems


def acquire_location(loc: Location) -> list[Node]:
    nodes = loc.nodes()
    for n in nodes:
        n.latch.acquire()
    return nodes


def release_location(loc: Location) -> None:
    for n in loc.nodes():
        n.latch.release()


def acquire_sorted(nodes: Iterable[tuple[tuple, Node]]) -> list[Node]:
    """Latch nodes in ascending order of their sort keys, each node once."""
    seen: dict[int, tuple[tuple, Node]] = {}
    for order, n in nodes:
        seen.setdefault(id(n), (order, n))
    ordered = [n for _, n in sorted(seen.values(), key=lambda p: p[0])]
    for n in ordered:
        n.latch.acquire()
    return ordered


def release_nodes(nodes: Iterable[Node]) -> None:
    for n in nodes:
        n.latch.release()


def release_ordered(entries: Iterable) -> None:
    """Release the location and created-node latches of commit entries.

    Entries are visited in ascending key order; a node shared by several
    entries is released once.
    """
    done: set[int] = set()
    for e in sorted(entries, key=lambda e: (e.obj_id, e.key)):
        nodes = e.location.nodes() if e.location is not None else []
        if e.created_node is not None:
            nodes.append(e.created_node)
        for n in nodes:
            if id(n) not in done:
                done.add(id(n))
                n.latch.release()


def method_validation(loc: Location) -> OpStatus:
    if (loc.blue_pred.marked or loc.blue_curr.marked
            or loc.blue_pred.blue_next is not loc.blue_curr
            or loc.red_pred.red_next is not loc.red_curr):
        return OpStatus.RETRY
    return OpStatus.OK


def get_apt_curr(loc: Location, key: int) -> Optional[Node]:
    if loc.blue_curr.key == key:
        return loc.blue_curr
    if loc.red_curr.key == key:
        return loc.red_curr
    return None


def trans_validation(t_id: int, key: int, loc: Location,
                     val_type: ValidationType) -> OpStatus:
    n = get_apt_curr(loc, key)
    if n is None:
        return OpStatus.OK
    ts = n.max_ts
    if t_id < ts.insert_ts or t_id < ts.delete_ts:
        return OpStatus.ABORT
    if val_type is ValidationType.TRYC and t_id < ts.lookup_ts:
        return OpStatus.ABORT
    return OpStatus.OK


def rbl_search(lst: RblList, t_id: int, key: int, val_type: ValidationType,
               early_abort: bool = False) -> tuple[Optional[Location], OpStatus]:
    """Find, latch and validate the location of `key`.

    Returns (location, OK) with all four latches held, or (None, ABORT) with
    none held. With `early_abort`, a location that fails interference
    validation but already shows a timestamp conflict aborts right away
    instead of retrying.
    """
    while True:
        loc = lst.locate(key)
        if lst.after_traverse is not None:
            lst.after_traverse(key)
        acquire_location(loc)
        if method_validation(loc) is OpStatus.RETRY:
            if (early_abort and get_apt_curr(loc, key) is not None
                    and trans_validation(t_id, key, loc, val_type) is OpStatus.ABORT):
                release_location(loc)
                return None, OpStatus.ABORT
            release_location(loc)
            continue
        if trans_validation(t_id, key, loc, val_type) is OpStatus.ABORT:
            release_location(loc)
            return None, OpStatus.ABORT
        if lst.debug:
            assert loc.brackets(key), f"search({key}) returned {loc}"
        return loc, OpStatus.OK


def rbl_ins(loc: Location, key: int, value: Value, list_type: ListType) -> Node:
    """Splice `key` in at a latched location.

    RL and BL create a fresh node whose latch is already held by the caller
    on return; RL_BL revives loc.red_curr in place.
    """
    if list_type is ListType.RL_BL:
        node = loc.red_curr
        node.value = value
        node.blue_next = loc.blue_curr
        node.marked = False
        loc.blue_pred.blue_next = node
        return node
    node = Node(key, value)
    node.latch.acquire()
    node.red_next = loc.red_curr
    if list_type is ListType.RL:
        node.marked = True
        node.blue_next = loc.red_curr
        loc.red_pred.red_next = node
    else:
        node.blue_next = loc.blue_curr
        loc.red_pred.red_next = node
        loc.blue_pred.blue_next = node
    return node


def rbl_del(loc: Location) -> None:
    node = loc.blue_curr
    node.marked = True
    loc.blue_pred.blue_next = node.blue_next


def intra_trans_validation(entry, prev_entry) -> Location:
    """Repair an entry's cached location after earlier updates of the same commit.

    `prev_entry` is the nearest earlier update entry on the same bucket, or
    None. Replacement nodes are already latched by the committing
    transaction, either as part of a validated location or as nodes it
    created, so no latch changes hands here.
    """
    loc = entry.location
    if prev_entry is None:
        return loc
    prev = prev_entry.location
    bp = loc.blue_pred
    if bp.marked or bp.blue_next is not loc.blue_curr:
        bp = prev.blue_pred.blue_next if prev_entry.opn is OpName.INSERT else prev.blue_pred
    rp = loc.red_pred
    if rp.red_next is not loc.red_curr:
        rp = prev.red_pred.red_next
    entry.location = Location(bp, rp, loc.red_curr, loc.blue_curr)
    return entry.location


def stamp(node: Node, opn: OpName, t_id: int) -> None:
    """Raise one max_ts field to t_id; the fields never move backwards."""
    ts = node.max_ts
    if opn is OpName.LOOKUP:
        ts.lookup_ts = max(ts.lookup_ts, t_id)
    elif opn is OpName.INSERT:
        ts.insert_ts = max(ts.insert_ts, t_id)
    else:
        ts.delete_ts = max(ts.delete_ts, t_id)
