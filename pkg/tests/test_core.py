import threading

import pytest

from objstm.core import (
    HEAD_KEY, NIL, TAIL_KEY, TimestampSource, check_payload, check_user_key, next_timestamp,
)


def test_fresh_source_starts_at_one():
    assert TimestampSource().next() == 1


def test_module_source_is_increasing():
    a = next_timestamp()
    b = next_timestamp()
    assert a < b


def test_concurrent_timestamps_are_distinct():
    src = TimestampSource()
    seen = [[] for _ in range(64)]

    def grab(i):
        for _ in range(1000):
            seen[i].append(src.next())

    threads = [threading.Thread(target=grab, args=(i,)) for i in range(64)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    flat = [v for chunk in seen for v in chunk]
    assert len(flat) == 64_000
    assert len(set(flat)) == 64_000
    assert min(flat) == 1 and max(flat) == 64_000
    assert all(chunk == sorted(chunk) for chunk in seen)


def test_sentinels_bound_user_keys():
    assert HEAD_KEY < -10**18 < 10**18 < TAIL_KEY
    check_user_key(0)
    with pytest.raises(ValueError):
        check_user_key(HEAD_KEY)
    with pytest.raises(ValueError):
        check_user_key(TAIL_KEY)
    with pytest.raises(TypeError):
        check_user_key("7")


def test_nil_is_not_a_storable_value():
    check_payload(0)
    check_payload(b"")
    with pytest.raises(ValueError):
        check_payload(NIL)
    with pytest.raises(TypeError):
        check_payload(1.5)
