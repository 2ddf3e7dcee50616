"""Object-level software transactional memory with an offline co-opacity checker."""

from .checker import brute_force_opacity, check_co_opacity
from .core import NIL, OpStatus
from .history import History, Recorder
from .ostm import Ostm
from .rwstm import RwHashTable, RwStm

__all__ = [
    "NIL", "OpStatus", "Ostm", "RwStm", "RwHashTable", "History", "Recorder",
    "check_co_opacity", "brute_force_opacity",
]
