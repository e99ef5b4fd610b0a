import random

import numpy as np
from hypothesis import given
from hypothesis import strategies as st

from mementofilter import FilterParams, MementoFilter
from mementofilter.oracle import ExactSet, decode_table, ranges_nonempty


def test_exact_set_examples():
    s = ExactSet()
    assert not s.range_nonempty(0, 100)
    s.insert(10)
    assert s.range_nonempty(10, 10)
    assert not s.range_nonempty(11, 12)
    assert 10 in s and 11 not in s


@given(st.lists(st.integers(0, 200)), st.integers(0, 200), st.integers(0, 50))
def test_exact_set_matches_brute_force(keys, lo, width):
    s = ExactSet()
    for k in keys:
        s.insert(k)
    assert s.range_nonempty(lo, lo + width) == any(lo <= k <= lo + width for k in keys)
    if keys:
        s.delete(keys[0])
        assert len(s) == len(keys) - 1
    assert not s.delete(10**6)


def test_vectorised_ranges():
    keys = np.array([3, 10, 20], np.uint64)
    lefts = np.array([0, 4, 11, 20, 21], np.uint64)
    rights = np.array([2, 10, 19, 25, 30], np.uint64)
    assert ranges_nonempty(keys, lefts, rights).tolist() == [False, True, False, True, False]


def test_decode_empty_and_pair():
    p = FilterParams(64, 6, 3)
    flt = MementoFilter(p)
    assert decode_table(flt.table, 6, 3) == {}
    flt.insert(8 * 5 + 1)
    flt.insert(8 * 5 + 4)
    (mems,) = decode_table(flt.table, 6, 3).values()
    assert mems == [1, 4]


def test_decode_agrees_with_insertion_log():
    rng = random.Random(9)
    p = FilterParams(2048, 5, 4, seed=2)
    flt = MementoFilter(p)
    log = [rng.randrange(2**13) for _ in range(1500)]
    flt.insert_many(log)
    total = sum(len(v) for v in decode_table(flt.table, 5, 4).values())
    assert total == len(log)
    assert decode_table(flt.table, 5, 4) == flt.contents()
