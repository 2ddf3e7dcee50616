import random
import threading

import pytest

from objstm.core import ListType, OpName, OpStatus, ValidationType
from objstm.lazyrb_list import (
    Location, RblList, acquire_sorted, get_apt_curr, intra_trans_validation,
    method_validation, rbl_del, rbl_ins, rbl_search, release_location, release_nodes, stamp,
    trans_validation,
)
from objstm.ostm import LogEntry


LATE = 10**6  # a transaction id newer than every stamp used below


def put(lst, key, list_type=ListType.BL, value=None):
    loc, st = rbl_search(lst, LATE, key, ValidationType.RV)
    assert st is OpStatus.OK
    node = rbl_ins(loc, key, key * 10 if value is None else value, list_type)
    if list_type is not ListType.RL_BL:
        node.latch.release()
    release_location(loc)
    return node


def remove(lst, key):
    loc, _ = rbl_search(lst, LATE, key, ValidationType.RV)
    assert loc.blue_curr.key == key
    rbl_del(loc)
    release_location(loc)


def build(blue=(), red_only=()):
    lst = RblList(debug=True)
    for k in blue:
        put(lst, k)
    for k in red_only:
        put(lst, k, ListType.RL)
    return lst


def search(lst, key, t_id=0, val_type=ValidationType.RV):
    loc, st = rbl_search(lst, t_id, key, val_type)
    if loc is not None:
        release_location(loc)
    return loc, st


def test_search_finds_last_blue_key():
    lst = build(blue=(2, 5, 7, 8))
    loc, st = search(lst, 8)
    assert st is OpStatus.OK
    assert loc.blue_pred.key == 7 and loc.blue_curr.key == 8
    assert loc.red_pred.key == 7 and loc.red_curr.key == 8


def test_search_in_empty_list_brackets_with_sentinels():
    lst = RblList()
    loc, _ = search(lst, 4)
    assert loc.blue_pred is lst.head and loc.red_pred is lst.head
    assert loc.blue_curr is lst.tail and loc.red_curr is lst.tail


def test_search_for_marked_key_splits_blue_and_red():
    lst = build(blue=(1, 5), red_only=(3,))
    loc, _ = search(lst, 3)
    assert (loc.blue_pred.key, loc.red_pred.key, loc.red_curr.key, loc.blue_curr.key) == (1, 1, 3, 5)
    assert loc.red_curr.marked
    assert get_apt_curr(loc, 3) is loc.red_curr
    assert get_apt_curr(loc, 2) is None


def test_get_apt_curr_prefers_blue():
    lst = build(blue=(4,))
    loc, _ = search(lst, 4)
    assert get_apt_curr(loc, 4) is loc.blue_curr is loc.red_curr


def test_rl_insert_is_red_only():
    lst = build(blue=(1, 9))
    node = put(lst, 4, ListType.RL)
    assert node.marked
    assert lst.red_keys() == [1, 4, 9]
    assert lst.blue_keys() == [1, 9]
    assert lst.structural_violations() == []


def test_bl_insert_joins_both_chains():
    lst = build(blue=(1, 9))
    put(lst, 4)
    assert lst.red_keys() == [1, 4, 9] and lst.blue_keys() == [1, 4, 9]
    assert lst.structural_violations() == []


def test_rl_bl_revives_the_same_node():
    lst = build(blue=(1, 9), red_only=(4,))
    dead = lst.find_node(4)
    revived = put(lst, 4, ListType.RL_BL, value=44)
    assert revived is dead and not revived.marked and revived.value == 44
    assert lst.blue_keys() == [1, 4, 9]
    assert lst.structural_violations() == []


def test_delete_then_reinsert_keeps_node_identity_and_timestamps():
    lst = build(blue=(1, 4, 9))
    node = lst.find_node(4)
    stamp(node, OpName.DELETE, 7)
    remove(lst, 4)
    assert node.marked and lst.blue_keys() == [1, 9] and lst.red_keys() == [1, 4, 9]
    put(lst, 4, ListType.RL_BL)
    assert lst.find_node(4) is node and node.max_ts.delete_ts == 7
    assert lst.structural_violations() == []


def paused_search(lst, key, meddle):
    """Run rbl_search, letting `meddle` change the list after the first traversal."""
    calls = []
    me = threading.get_ident()

    def hook(k):
        if threading.get_ident() != me:
            return
        calls.append(k)
        if len(calls) == 1:
            t = threading.Thread(target=meddle)
            t.start()
            t.join()

    lst.after_traverse = hook
    try:
        loc, st = rbl_search(lst, 0, key, ValidationType.RV)
        release_location(loc)
    finally:
        lst.after_traverse = None
    return loc, st, len(calls)


def test_concurrent_insert_between_preds_forces_retry():
    lst = build(blue=(2, 8))
    loc, st, traversals = paused_search(lst, 6, lambda: put(lst, 4))
    assert traversals == 2 and st is OpStatus.OK
    assert loc.red_pred.key == 4 and loc.blue_pred.key == 4


def test_concurrent_delete_of_blue_curr_forces_retry():
    lst = build(blue=(2, 6, 8))
    loc, st, traversals = paused_search(lst, 5, lambda: remove(lst, 6))
    assert traversals == 2
    assert loc.blue_curr.key == 8 and loc.red_curr.key == 6


def test_method_validation_flags_each_stale_link():
    lst = build(blue=(2, 8))
    loc = lst.locate(5)
    assert method_validation(loc) is OpStatus.OK
    loc.blue_curr.marked = True
    assert method_validation(loc) is OpStatus.RETRY
    loc.blue_curr.marked = False
    put(lst, 4)
    assert method_validation(loc) is OpStatus.RETRY


@pytest.mark.parametrize("ts, t_id, val_type, expected", [
    ((0, 5, 0), 4, ValidationType.RV, OpStatus.ABORT),
    ((0, 0, 5), 4, ValidationType.RV, OpStatus.ABORT),
    ((9, 0, 0), 4, ValidationType.RV, OpStatus.OK),
    ((9, 0, 0), 4, ValidationType.TRYC, OpStatus.ABORT),
    ((0, 5, 0), 6, ValidationType.TRYC, OpStatus.OK),
    ((4, 4, 4), 4, ValidationType.TRYC, OpStatus.OK),
])
def test_trans_validation(ts, t_id, val_type, expected):
    lst = build(blue=(3,))
    n = lst.find_node(3)
    n.max_ts.lookup_ts, n.max_ts.insert_ts, n.max_ts.delete_ts = ts
    assert trans_validation(t_id, 3, lst.locate(3), val_type) is expected


def test_trans_validation_ignores_absent_key():
    lst = build(blue=(3,))
    lst.find_node(3).max_ts.insert_ts = 100
    assert trans_validation(1, 2, lst.locate(2), ValidationType.TRYC) is OpStatus.OK


def test_search_aborts_on_newer_writer():
    lst = build(blue=(3,))
    lst.find_node(3).max_ts.insert_ts = 10
    loc, st = rbl_search(lst, 5, 3, ValidationType.RV)
    assert loc is None and st is OpStatus.ABORT
    assert not any(n.latch.locked() for n in [lst.head, lst.find_node(3), lst.tail])


def test_stamp_never_lowers():
    lst = build(blue=(3,))
    n = lst.find_node(3)
    stamp(n, OpName.LOOKUP, 9)
    stamp(n, OpName.LOOKUP, 4)
    stamp(n, OpName.INSERT, 2)
    assert n.max_ts.as_tuple() == (9, 2, 0)


def entry_at(lst, key, opn):
    return LogEntry(0, key, key, opn, OpStatus.OK, location=lst.locate(key))


def test_intra_transaction_repair_after_two_inserts():
    lst = build(blue=(3, 8))
    first = entry_at(lst, 5, OpName.INSERT)
    second = entry_at(lst, 7, OpName.INSERT)
    held = acquire_sorted(((n.key,), n) for e in (first, second) for n in e.location.nodes())
    created = [rbl_ins(first.location, 5, 50, ListType.BL)]
    loc = intra_trans_validation(second, first)
    assert loc.blue_pred.key == 5 and loc.red_pred.key == 5
    assert method_validation(loc) is OpStatus.OK
    created.append(rbl_ins(loc, 7, 70, ListType.BL))
    release_nodes(held + created)
    assert lst.blue_keys() == [3, 5, 7, 8]
    assert lst.structural_violations() == []


def test_intra_transaction_repair_after_delete():
    lst = build(blue=(3, 5, 8))
    first = entry_at(lst, 5, OpName.DELETE)
    second = entry_at(lst, 6, OpName.INSERT)
    acquire_sorted(((n.key,), n) for e in (first, second) for n in e.location.nodes())
    rbl_del(first.location)
    loc = intra_trans_validation(second, first)
    assert loc.blue_pred.key == 3 and loc.red_pred.key == 5
    assert method_validation(loc) is OpStatus.OK
    node = rbl_ins(loc, 6, 60, ListType.BL)
    for n in {id(n): n for e in (first, second) for n in e.location.nodes()}.values():
        n.latch.release()
    node.latch.release()
    assert lst.blue_keys() == [3, 6, 8] and lst.red_keys() == [3, 5, 6, 8]
    assert lst.structural_violations() == []


def test_intra_transaction_repair_without_predecessor_is_identity():
    lst = build(blue=(3,))
    e = entry_at(lst, 4, OpName.INSERT)
    before = e.location
    assert intra_trans_validation(e, None) is before


def test_location_collapses_shared_roles():
    lst = build(blue=(3,))
    loc = lst.locate(3)
    assert loc.nodes() == [lst.head, lst.find_node(3)]
    lst2 = build(blue=(1, 5), red_only=(3,))
    assert len(lst2.locate(3).nodes()) == 3


def test_overlapping_latch_sets_do_not_deadlock():
    lst = build(blue=range(0, 40, 2), red_only=range(1, 40, 4))
    rng = random.Random(7)
    trials = 10_000
    errors = []

    def worker(seed):
        r = random.Random(seed)
        try:
            for _ in range(trials // 4):
                keys = r.sample(range(40), 3)
                held = acquire_sorted(((n.key,), n) for k in keys for n in lst.locate(k).nodes())
                release_nodes(held)
        except Exception as exc:  # pragma: no cover
            errors.append(exc)

    threads = [threading.Thread(target=worker, args=(rng.random(),), daemon=True) for _ in range(4)]
    for t in threads:
        t.start()
    for t in threads:
        t.join(timeout=30)
    assert not any(t.is_alive() for t in threads), "latching deadlocked"
    assert errors == []


def test_location_brackets():
    lst = build(blue=(2, 9))
    assert lst.locate(5).brackets(5)
    assert Location(lst.head, lst.head, lst.tail, lst.tail).brackets(5)
    assert not lst.locate(5).brackets(10)
