import random

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mementofilter.oracle import check_invariants, scan_runs
from mementofilter.rsqf import OFFSET_SAT, RsqfTable, TableFullError, overflow_slots

# The 8-slot example table straddles a block boundary; example slot k lives at
# physical slot BASE + k so that example slot 4 opens the second block.
BASE = 60


def ex(k: int) -> int:
    return BASE + k


def window(t: RsqfTable):
    slots = [t.get_slot(ex(k)) for k in range(8)]
    ends = [int(t.is_runend(ex(k))) for k in range(8)]
    occ = [int(t.is_occupied(ex(k))) for k in range(8)]
    return slots, ends, occ


@pytest.fixture
def example_table() -> RsqfTable:
    t = RsqfTable(128, 4)
    for k, fp in [(0, 0b0110), (0, 0b1011), (1, 0b1000), (3, 0b0000), (3, 0b0001), (3, 0b0101), (5, 0b1111)]:
        t.append_to_run(ex(k), fp)
    return t


def test_example_state(example_table):
    slots, ends, occ = window(example_table)
    assert slots == [0b0110, 0b1011, 0b1000, 0b0000, 0b0001, 0b0101, 0b1111, 0]
    assert ends == [0, 1, 1, 0, 0, 1, 1, 0]
    assert occ == [1, 1, 0, 1, 0, 1, 0, 0]
    assert example_table.offset(1) == 2
    assert example_table.offset(0) == 0
    check_invariants(example_table)


def test_example_locate(example_table):
    assert example_table.locate_run(ex(5)) == (ex(6), ex(6))
    assert example_table.locate_run(ex(3)) == (ex(3), ex(5))
    assert example_table.locate_run(ex(2)) is None


def test_example_insert(example_table):
    example_table.append_to_run(ex(3), 0b1010)
    slots, ends, occ = window(example_table)
    assert slots == [0b0110, 0b1011, 0b1000, 0b0000, 0b0001, 0b0101, 0b1010, 0b1111]
    assert ends == [0, 1, 1, 0, 0, 0, 1, 1]
    assert occ == [1, 1, 0, 1, 0, 1, 0, 0]
    assert example_table.offset(1) == 3
    check_invariants(example_table)


def test_example_delete(example_table):
    example_table.append_to_run(ex(3), 0b1010)
    assert example_table.delete_slot(ex(0)) == 0b0110
    slots, ends, occ = window(example_table)
    assert slots == [0b1011, 0b1000, 0, 0b0000, 0b0001, 0b0101, 0b1010, 0b1111]
    assert ends == [1, 1, 0, 0, 0, 0, 1, 1]
    assert occ == [1, 1, 0, 1, 0, 1, 0, 0]
    assert example_table.offset(1) == 3
    check_invariants(example_table)


def test_example_iteration(example_table):
    homes = [h - BASE for h, _ in example_table.iterate()]
    assert homes == [0, 0, 1, 3, 3, 3, 5]


def test_empty_table():
    t = RsqfTable(256, 9)
    assert list(t.iterate()) == []
    assert all(t.locate_run(h) is None for h in range(256))
    assert t.stored_slots == 0


def test_single_insert_and_inverse():
    t = RsqfTable(256, 9)
    empty = t.to_bytes()
    pos = t.append_to_run(77, 300)
    assert pos == 77
    assert t.is_occupied(77) and t.is_runend(77) and t.get_slot(77) == 300
    t.delete_slot(77)
    assert t.to_bytes() == empty


def _model_items(model: dict[int, list[int]]) -> list[tuple[int, int]]:
    return [(h, v) for h in sorted(model) for v in model[h]]


@settings(max_examples=60)
@given(st.integers(0, 2**32), st.sampled_from([64, 128, 256, 1024]), st.floats(0.3, 0.95))
def test_random_updates_match_model(seed, n, load):
    rng = random.Random(seed)
    t = RsqfTable(n, 7)
    model: dict[int, list[int]] = {}
    # skew homes so that long clusters form
    hot = [rng.randrange(n) for _ in range(3)]
    for _ in range(int(n * load)):
        h = rng.choice(hot) if rng.random() < 0.3 else rng.randrange(n)
        v = rng.randrange(1, 128)
        t.append_to_run(h, v)
        model.setdefault(h, []).append(v)
        if model and rng.random() < 0.3:
            h = rng.choice(sorted(model))
            start, end = t.locate_run(h)
            i = rng.randrange(end - start + 1)
            assert t.delete_slot(start + i) == model[h].pop(i)
            if not model[h]:
                del model[h]
    assert list(t.iterate()) == _model_items(model)
    assert t.stored_slots == sum(map(len, model.values()))
    check_invariants(t)


def test_offsets_saturate_and_recover():
    # one home holding more than 255 slots pushes far into later blocks
    t = RsqfTable(1024, 5)
    for i in range(400):
        t.append_to_run(3, i % 31 + 1)
    for i in range(10):
        t.append_to_run(300, 7)
    # run 3 ends at slot 402
    assert [int(x) for x in t.offsets[:7]] == [0, OFFSET_SAT, OFFSET_SAT, 211, 147, 93, 29]
    assert [t.offset(b) for b in range(1, 3)] == [339, 275]
    check_invariants(t)
    start, end = t.locate_run(300)
    assert (start, end) == (403, 412)
    while t.locate_run(3) is not None:
        t.delete_slot(3)
    assert t.locate_run(300) == (300, 309)
    assert [t.offset(b) for b in range(7)] == [0] * 7
    check_invariants(t)


def test_overflow_area_and_full_table():
    n = 64
    t = RsqfTable(n, 4)
    assert t.n_physical == n + overflow_slots(n)
    for _ in range(t.n_physical - n + 1):
        t.append_to_run(n - 1, 1)
    with pytest.raises(TableFullError):
        t.append_to_run(n - 1, 1)
    check_invariants(t)


def test_insert_position_is_validated():
    t = RsqfTable(128, 4)
    t.append_to_run(10, 1)
    with pytest.raises(ValueError):
        t.insert_slot(10, 20, 3)
    with pytest.raises(ValueError):
        t.insert_slot(11, 20, 3)
    with pytest.raises(IndexError):
        t.append_to_run(128, 3)
    with pytest.raises(KeyError):
        t.delete_slot(50)


def test_serialization_roundtrip():
    rng = random.Random(3)
    t = RsqfTable(512, 13, seed=99)
    for _ in range(400):
        t.append_to_run(rng.randrange(512), rng.randrange(1, 1 << 13))
    data = t.to_bytes()
    u = RsqfTable.from_bytes(data)
    assert (u.n_slots, u.slot_width, u.seed, u.extra_slots) == (512, 13, 99, t.extra_slots)
    assert list(u.iterate()) == list(t.iterate())
    assert u.stored_slots == t.stored_slots
    assert u.to_bytes() == data
    with pytest.raises(ValueError):
        RsqfTable.from_bytes(data + b"\0")
    with pytest.raises(ValueError):
        RsqfTable.from_bytes(b"XXXX" + data[4:])


def test_scan_runs_agrees_with_kernel_listing():
    rng = random.Random(5)
    t = RsqfTable(256, 6)
    for _ in range(200):
        t.append_to_run(rng.randrange(256), rng.randrange(1, 64))
    homes, starts, ends = t.runs()
    scanned = scan_runs(t)
    assert [h for h, _, _ in scanned] == homes.tolist()
    assert [s for _, s, _ in scanned] == starts.tolist()
    assert [s + len(p) - 1 for _, s, p in scanned] == ends.tolist()


def test_constructor_validation():
    with pytest.raises(ValueError):
        RsqfTable(0, 4)
    with pytest.raises(ValueError):
        RsqfTable(64, 0)
    with pytest.raises(ValueError):
        RsqfTable(64, 61)
    assert isinstance(RsqfTable(64, 4).payload, np.ndarray)
