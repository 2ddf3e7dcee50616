"""Method-level histories: recording, ordering, and a tab-separated file format."""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Optional

from .core import NIL, OpStatus, Value

FORMAT_HEADER = "# objstm-history v1"


class Kind(Enum):
    BEGIN = "BEGIN"
    LOOKUP = "LOOKUP"
    INSERT = "INSERT"
    DELETE = "DELETE"
    TRYC = "TRYC"
    TRYA = "TRYA"


OBJECT_KINDS = (Kind.LOOKUP, Kind.INSERT, Kind.DELETE)


@dataclass(frozen=True)
class MethodRecord:
    t_id: int
    kind: Kind
    obj_id: Optional[int] = None
    key: Optional[int] = None
    value: Value = NIL
    status: OpStatus = OpStatus.OK
    inv_seq: int = 0
    rsp_seq: int = 0
    lp_seq: int = 0


class MalformedHistory(ValueError):
    def __init__(self, line_no: int, reason: str):
        super().__init__(f"line {line_no}: {reason}")
        self.line_no = line_no


@dataclass
class History:
    records: list[MethodRecord] = field(default_factory=list)

    def __post_init__(self):
        self.records = sorted(self.records, key=lambda r: r.lp_seq)

    def __len__(self) -> int:
        return len(self.records)

    def __eq__(self, other) -> bool:
        return isinstance(other, History) and self.records == other.records

    def transactions(self) -> dict[int, list[MethodRecord]]:
        """Records grouped per transaction, each group in lp order."""
        out: dict[int, list[MethodRecord]] = {}
        for r in self.records:
            out.setdefault(r.t_id, []).append(r)
        return out

    def tx_status(self) -> dict[int, OpStatus]:
        """COMMIT, ABORT, or OK for a transaction still live at the end."""
        out = {}
        for t, recs in self.transactions().items():
            st = OpStatus.OK
            for r in recs:
                if r.status in (OpStatus.ABORT, OpStatus.COMMIT):
                    st = r.status
            out[t] = st
        return out

    def real_time_pairs(self) -> list[tuple[int, int]]:
        """(a, b) for every pair where a's last response precedes b's first invocation."""
        spans = {}
        for t, recs in self.transactions().items():
            spans[t] = (min(r.inv_seq for r in recs), max(r.rsp_seq for r in recs))
        out = []
        for a, (_, a_end) in spans.items():
            for b, (b_start, _) in spans.items():
                if a != b and a_end < b_start:
                    out.append((a, b))
        return out

    def well_formedness_problems(self) -> list[str]:
        problems = []
        seen_lp = set()
        for r in self.records:
            if r.lp_seq in seen_lp:
                problems.append(f"duplicate lp_seq {r.lp_seq}")
            seen_lp.add(r.lp_seq)
            if not r.inv_seq <= r.lp_seq <= r.rsp_seq:
                problems.append(f"lp_seq outside [inv, rsp] for {r}")
        for t, recs in self.transactions().items():
            if recs[0].kind is not Kind.BEGIN:
                problems.append(f"T{t} does not start with BEGIN")
            for i, r in enumerate(recs):
                closing = r.status in (OpStatus.ABORT, OpStatus.COMMIT)
                if closing and i != len(recs) - 1:
                    problems.append(f"T{t} has methods after it terminated")
                if r.kind in (Kind.TRYC, Kind.TRYA) and i != len(recs) - 1:
                    problems.append(f"T{t} has methods after {r.kind.value}")
        return problems


class Recorder:
    """Thread-safe sink for method records with one global sequence counter.

    inv, lp and rsp numbers all come from the same counter, so an lp drawn
    while holding latches orders correctly against any other thread's draws.
    """

    def __init__(self):
        self._seq = 0
        self._lock = threading.Lock()
        self._records: list[MethodRecord] = []

    def tick(self) -> int:
        with self._lock:
            self._seq += 1
            return self._seq

    def record(self, rec: MethodRecord) -> None:
        with self._lock:
            self._records.append(rec)

    def history(self) -> History:
        with self._lock:
            return History(list(self._records))


def _encode_value(v: Value) -> str:
    if v is NIL:
        return "-"
    if isinstance(v, bytes):
        return "hex:" + v.hex()
    return str(v)


def _decode_value(s: str) -> Value:
    if s == "-":
        return NIL
    if s.startswith("hex:"):
        return bytes.fromhex(s[4:])
    return int(s)


def _encode_opt(v: Optional[int]) -> str:
    return "-" if v is None else str(v)


def _decode_opt(s: str) -> Optional[int]:
    return None if s == "-" else int(s)


def format_record(r: MethodRecord) -> str:
    return "\t".join([
        str(r.lp_seq), str(r.inv_seq), str(r.rsp_seq), str(r.t_id), r.kind.value,
        _encode_opt(r.obj_id), _encode_opt(r.key), _encode_value(r.value), r.status.value,
    ])


def parse_record(line: str, line_no: int) -> MethodRecord:
    parts = line.rstrip("\n").split("\t")
    if len(parts) != 9:
        raise MalformedHistory(line_no, f"expected 9 fields, got {len(parts)}")
    try:
        lp, inv, rsp, t_id = (int(p) for p in parts[:4])
        return MethodRecord(
            t_id=t_id, kind=Kind(parts[4]), obj_id=_decode_opt(parts[5]),
            key=_decode_opt(parts[6]), value=_decode_value(parts[7]),
            status=OpStatus(parts[8]), inv_seq=inv, rsp_seq=rsp, lp_seq=lp,
        )
    except ValueError as exc:
        raise MalformedHistory(line_no, str(exc)) from None


def to_file(history: History, path) -> None:
    with open(path, "w") as fh:
        fh.write(FORMAT_HEADER + "\n")
        for r in history.records:
            fh.write(format_record(r) + "\n")


def from_lines(lines: Iterable[str]) -> History:
    records = []
    header_seen = False
    for no, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        if not header_seen:
            if line.strip() != FORMAT_HEADER:
                raise MalformedHistory(no, f"missing header {FORMAT_HEADER!r}")
            header_seen = True
            continue
        records.append(parse_record(line, no))
    if not header_seen:
        raise MalformedHistory(1, "empty file")
    return History(records)


def from_file(path) -> History:
    return from_lines(Path(path).read_text().splitlines())


class HistoryBuilder:
    """Script a history one complete method at a time.

    Each call takes fresh inv/lp/rsp numbers, so methods never overlap and the
    call order is the lp order. A transaction's BEGIN is added automatically
    in front of its first method.
    """

    def __init__(self, obj_id: int = 0):
        self.obj_id = obj_id
        self._seq = 0
        self._records: list[MethodRecord] = []
        self._started: set[int] = set()

    def _add(self, t_id: int, kind: Kind, key=None, value: Value = NIL,
             status: OpStatus = OpStatus.OK) -> "HistoryBuilder":
        if t_id not in self._started and kind is not Kind.BEGIN:
            self._add(t_id, Kind.BEGIN)
        self._started.add(t_id)
        obj = self.obj_id if kind in OBJECT_KINDS else None
        self._seq += 3
        self._records.append(MethodRecord(t_id, kind, obj, key, value, status,
                                          inv_seq=self._seq - 2, lp_seq=self._seq - 1,
                                          rsp_seq=self._seq))
        return self

    def begin(self, t_id: int) -> "HistoryBuilder":
        return self._add(t_id, Kind.BEGIN)

    def lookup(self, t_id: int, key: int, value: Value) -> "HistoryBuilder":
        return self._add(t_id, Kind.LOOKUP, key, value,
                         OpStatus.FAIL if value is NIL else OpStatus.OK)

    def insert(self, t_id: int, key: int, value: Value) -> "HistoryBuilder":
        return self._add(t_id, Kind.INSERT, key, value)

    def delete(self, t_id: int, key: int, value: Value) -> "HistoryBuilder":
        return self._add(t_id, Kind.DELETE, key, value,
                         OpStatus.FAIL if value is NIL else OpStatus.OK)

    def aborted(self, t_id: int, kind: Kind, key: int) -> "HistoryBuilder":
        """A lookup or delete that returned ABORT."""
        return self._add(t_id, kind, key, NIL, OpStatus.ABORT)

    def commit(self, t_id: int) -> "HistoryBuilder":
        return self._add(t_id, Kind.TRYC, status=OpStatus.COMMIT)

    def commit_failed(self, t_id: int) -> "HistoryBuilder":
        return self._add(t_id, Kind.TRYC, status=OpStatus.ABORT)

    def abort(self, t_id: int) -> "HistoryBuilder":
        return self._add(t_id, Kind.TRYA, status=OpStatus.ABORT)

    def build(self) -> History:
        return History(list(self._records))
