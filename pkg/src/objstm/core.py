"""Shared vocabulary: key sentinels, the NIL value, status enums, timestamps."""

from __future__ import annotations

import enum
import sys
import threading
from typing import Union

# Keys are plain ints. The sentinels sit outside every user key.
HEAD_KEY = -sys.maxsize - 1
TAIL_KEY = sys.maxsize

# NIL is None. Stored payloads are ints or bytes, never None.
NIL = None
Value = Union[int, bytes, None]


class OpStatus(enum.Enum):
    OK = "OK"
    FAIL = "FAIL"
    RETRY = "RETRY"  # internal to the list layer, never returned to callers
    ABORT = "ABORT"
    COMMIT = "COMMIT"


class OpName(enum.Enum):
    INSERT = "INSERT"
    DELETE = "DELETE"
    LOOKUP = "LOOKUP"


class ValidationType(enum.Enum):
    RV = "RV"
    TRYC = "TRYC"


class ListType(enum.Enum):
    RL = "RL"        # new marked node, red chain only
    BL = "BL"        # new unmarked node, both chains
    RL_BL = "RL_BL"  # revive an existing red-only node into the blue chain


class TxStatus(enum.Enum):
    LIVE = "LIVE"
    COMMIT = "COMMIT"
    ABORT = "ABORT"


class StmError(Exception):
    """Base class for misuse errors raised by the engines."""


class TransactionNotLive(StmError):
    """A method was invoked on a transaction that already committed or aborted."""


class UnknownTransaction(StmError):
    """The transaction id was never issued by this engine."""


def check_user_key(key: int) -> None:
    if not isinstance(key, int) or isinstance(key, bool):
        raise TypeError(f"key must be an int, got {type(key).__name__}")
    if not HEAD_KEY < key < TAIL_KEY:
        raise ValueError(f"key {key} collides with a sentinel")


def check_payload(value: Value) -> None:
    if value is NIL:
        raise ValueError("NIL cannot be stored as a value")
    if not isinstance(value, (int, bytes)) or isinstance(value, bool):
        raise TypeError(f"value must be int or bytes, got {type(value).__name__}")


class AtomicCounter:
    """Fetch-and-increment counter shared between threads."""

    def __init__(self, start: int = 0):
        self._value = start
        self._lock = threading.Lock()

    def next(self) -> int:
        with self._lock:
            self._value += 1
            return self._value

    @property
    def value(self) -> int:
        return self._value


class TimestampSource(AtomicCounter):
    """Issues transaction timestamps 1, 2, 3, ... ; 0 belongs to the initial transaction."""


_default_source = TimestampSource()


def next_timestamp() -> int:
    return _default_source.next()
