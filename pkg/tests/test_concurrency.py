import threading

import numpy as np

from mementofilter import FilterParams, MementoFilter, RegionLockedFilter


def test_single_thread_matches_plain_filter():
    p = FilterParams(8192, 10, 4, seed=1)
    plain, locked = MementoFilter(p), RegionLockedFilter(MementoFilter(p))
    keys = np.random.default_rng(0).integers(0, 2**40, 5000, dtype=np.uint64).tolist()
    for k in keys:
        plain.insert(k)
        locked.insert(k)
    assert plain.to_bytes() == locked.filter.to_bytes()
    for k in keys[:100]:
        assert locked.point_query(k)
        assert locked.range_query(k, k + 3) == plain.range_query(k, k + 3)


def test_regions_are_ordered_pairs():
    locked = RegionLockedFilter(MementoFilter(FilterParams(2**14, 8, 3)), region_slots=4096)
    for k in range(0, 10**6, 9973):
        regions = locked.regions_for(k)
        assert list(regions) == sorted(set(regions))
        assert len(regions) in (1, 2)


def test_disjoint_writers():
    p = FilterParams(2**17, 10, 4, seed=3)
    locked = RegionLockedFilter(MementoFilter(p))
    batches = [list(range(t * 10**8, t * 10**8 + 10**4 * 16, 16)) for t in range(8)]

    def work(keys):
        for k in keys:
            locked.insert(k)

    threads = [threading.Thread(target=work, args=(b,)) for b in batches]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    every = sorted(k for b in batches for k in b)
    assert locked.filter.to_bytes() == MementoFilter.bulk_load(p, every).to_bytes()


def test_same_prefix_hammering_conserves_count():
    p = FilterParams(1024, 8, 6)
    locked = RegionLockedFilter(MementoFilter(p))
    per_thread = 300

    def work(offset):
        for i in range(per_thread):
            locked.insert(64 * 12345 + (i + offset) % 64)

    threads = [threading.Thread(target=work, args=(o,)) for o in (0, 17)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    ((_, mems),) = locked.filter.contents().items()
    assert len(mems) == 2 * per_thread
