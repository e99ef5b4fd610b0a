"""The static memento filter.

Keys are split into a prefix and an ``r``-bit memento.  The prefix is hashed to a
canonical slot and an ``f``-bit fingerprint; all mementos that share both end up
in one keepsake box (see :mod:`mementofilter.codec`).  A range query looks at the
box of the partition holding the left end and, when the range crosses a partition
boundary, the box of the right end (plus every fully covered partition when the
range is longer than ``2**r``).
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .bitops import U0, U1, bit_length, low_mask
from .codec import box_has_in_range, box_info, box_slots, encode_box, read_box
from .keyspace import KEY_MASK, memento_bits_for, mix64_array, mix64_nb, seed_salt
from .rsqf import (
    RsqfTable,
    TableFullError,
    delete_slot,
    find_first_empty,
    get_bit,
    insert_slot,
    layout_runs,
    list_runs,
    run_bounds,
    run_end,
    set_slot,
)

MAX_LOAD = 0.95
METADATA_BITS_PER_SLOT = 2.125

OK = 0
NO_CAPACITY = 1
NO_ROOM = 2
NOT_FOUND = 1

# Ranges with more whole partitions than this are answered positive outright, as
# are those expected to hit some stored hash value at least this many times.
LONG_SPAN = np.uint64(1 << 24)
SATURATION_HITS = 32.0


class CapacityError(RuntimeError):
    """The operation would push the load factor past its limit."""


class NotFoundError(KeyError):
    """The key to delete is not stored."""


@dataclass(frozen=True)
class FilterParams:
    n_slots: int
    fingerprint_bits: int
    memento_bits: int
    max_load_factor: float = MAX_LOAD
    seed: int = 0

    def __post_init__(self) -> None:
        n = self.n_slots
        if n < 1 or n & (n - 1):
            raise ValueError("n_slots must be a power of two")
        if self.fingerprint_bits < 1 or self.memento_bits < 1:
            raise ValueError("fingerprint and memento widths must be >= 1")
        if self.fingerprint_bits + self.memento_bits + 1 > 60:
            raise ValueError("slot too wide")
        if self.address_bits + self.fingerprint_bits > 64:
            raise ValueError("address plus fingerprint exceed the 64 hash bits")
        if not 0 < self.max_load_factor <= MAX_LOAD:
            raise ValueError(f"max_load_factor must be in (0, {MAX_LOAD}]")
        if not 0 <= self.seed < 1 << 63:
            raise ValueError("seed must be a non-negative 63-bit integer")

    @property
    def address_bits(self) -> int:
        return self.n_slots.bit_length() - 1

    @property
    def capacity(self) -> int:
        """Most slots that may be in use."""
        return int(math.floor(self.max_load_factor * self.n_slots))


def size_for(
    n_keys: int,
    bits_per_key: float,
    max_range: int,
    alpha: float = MAX_LOAD,
    expandable: bool = False,
    seed: int = 0,
) -> FilterParams:
    """Parameters for ``n_keys`` keys within a memory budget.

    The table gets the smallest power-of-two size that holds the keys at load
    ``alpha``.  Each slot costs ``2.125 + f + r`` bits (one more when expandable),
    so at full load the fingerprint takes what is left of ``bits_per_key * alpha``.
    """
    r = memento_bits_for(max_range)
    extra = 1 if expandable else 0
    f = int(round(bits_per_key * alpha - METADATA_BITS_PER_SLOT - r - extra))
    if f < 1:
        raise ValueError("memory budget too small for this range length")
    n = 1
    while n_keys > math.floor(alpha * n):
        n *= 2
    return FilterParams(n, f, r, alpha, seed)


# ---------------------------------------------------------------- kernels


@njit(cache=True, inline="always")
def fluid_match(box_fp, key_fp):
    """Does a variable-length fingerprint agree with the query's full one."""
    plen = bit_length(box_fp) - 1
    return ((box_fp ^ key_fp) & low_mask(plen)) == 0


@njit(cache=True, inline="always")
def hash_address(prefix, salt, abits, fbits, fluid):
    h = mix64_nb(prefix, salt)
    slot = np.int64(h & low_mask(abits))
    fp = (h >> np.uint64(abits)) & low_mask(fbits)
    if fluid:
        fp |= U1 << np.uint64(fbits)
    return slot, fp


@njit(cache=True)
def box_insert(occ, runends, off, payload, counters, n, w, r, cap, h, fp, m):
    """Add memento ``m`` to the box ``(h, fp)``, creating it when needed."""
    value = (np.uint64(fp) << np.uint64(r)) | np.uint64(m)
    if get_bit(occ, h) == 0:
        if counters[0] + 1 > cap:
            return NO_CAPACITY
        pos = max(h, run_end(occ, runends, off, h) + 1)
        if not insert_slot(occ, runends, off, payload, n, w, h, pos, value):
            return NO_ROOM
        counters[0] += 1
        counters[1] += 1
        return OK
    s, e = run_bounds(occ, runends, off, h)
    j = s
    while j <= e:
        bfp, ns, cnt, kind, nch = box_info(payload, w, r, j, e)
        if bfp == fp:
            mems = read_box(payload, w, r, j, kind, cnt, nch)
            merged = np.empty(cnt + 1, np.int64)
            k = 0
            while k < cnt and mems[k] <= m:
                merged[k] = mems[k]
                k += 1
            merged[k] = m
            merged[k + 1 :] = mems[k:]
            repeat = fp == 0 or r == 1
            newlen = box_slots(cnt + 1, r, w, repeat)
            delta = newlen - ns
            if counters[0] + delta > cap:
                return NO_CAPACITY
            p = j + ns
            for _ in range(delta):
                q = find_first_empty(occ, runends, off, n, p)
                if q >= n:
                    return NO_ROOM
                p = q + 1
            for _ in range(delta):
                insert_slot(occ, runends, off, payload, n, w, h, j + ns, np.uint64(0))
            out = np.empty(newlen, np.uint64)
            encode_box(fp, merged, cnt + 1, r, w, repeat, out)
            for i in range(newlen):
                set_slot(payload, w, j + i, out[i])
            counters[0] += delta
            counters[1] += 1
            return OK
        if bfp > fp:
            break
        j += ns
    if counters[0] + 1 > cap:
        return NO_CAPACITY
    if not insert_slot(occ, runends, off, payload, n, w, h, j, value):
        return NO_ROOM
    counters[0] += 1
    counters[1] += 1
    return OK


@njit(cache=True)
def box_delete(occ, runends, off, payload, counters, n, w, r, h, fp, m):
    """Remove one copy of memento ``m`` from the box ``(h, fp)``."""
    if get_bit(occ, h) == 0:
        return NOT_FOUND
    s, e = run_bounds(occ, runends, off, h)
    j = s
    while j <= e:
        bfp, ns, cnt, kind, nch = box_info(payload, w, r, j, e)
        if bfp == fp:
            mems = read_box(payload, w, r, j, kind, cnt, nch)
            idx = -1
            for i in range(cnt):
                if mems[i] == m:
                    idx = i
                    break
            if idx < 0:
                return NOT_FOUND
            rest = np.empty(cnt - 1, np.int64)
            rest[:idx] = mems[:idx]
            rest[idx:] = mems[idx + 1 :]
            repeat = fp == 0 or r == 1
            newlen = box_slots(cnt - 1, r, w, repeat) if cnt > 1 else 0
            for _ in range(ns - newlen):
                delete_slot(occ, runends, off, payload, n, w, h, j + newlen)
            if newlen:
                out = np.empty(newlen, np.uint64)
                encode_box(fp, rest, cnt - 1, r, w, repeat, out)
                for i in range(newlen):
                    set_slot(payload, w, j + i, out[i])
            counters[0] -= ns - newlen
            counters[1] -= 1
            return OK
        if bfp > fp:
            break
        j += ns
    return NOT_FOUND


@njit(cache=True)
def partition_has(occ, runends, off, payload, w, r, h, fp, fluid, lo, hi):
    """Is there a matching box at ``h`` with a memento in ``[lo, hi]``."""
    if get_bit(occ, h) == 0:
        return False
    s, e = run_bounds(occ, runends, off, h)
    j = s
    while j <= e:
        bfp, ns, cnt, kind, nch = box_info(payload, w, r, j, e)
        if bfp > fp:
            return False
        match = fluid_match(bfp, fp) if fluid else bfp == fp
        if match and box_has_in_range(payload, w, r, j, kind, cnt, nch, lo, hi):
            return True
        j += ns
    return False


@njit(cache=True)
def longest_match(occ, runends, off, payload, w, r, h, fp, m):
    """Largest payload length among matching boxes holding ``m`` (-1 if none).

    Returns ``(payload_len, box_fp)``.
    """
    best = -1
    best_fp = np.uint64(0)
    if get_bit(occ, h) == 0:
        return best, best_fp
    s, e = run_bounds(occ, runends, off, h)
    j = s
    while j <= e:
        bfp, ns, cnt, kind, nch = box_info(payload, w, r, j, e)
        if bfp > fp:
            break
        if fluid_match(bfp, fp) and box_has_in_range(payload, w, r, j, kind, cnt, nch, m, m):
            plen = bit_length(bfp) - 1
            if plen > best:
                best = plen
                best_fp = bfp
        j += ns
    return best, best_fp


@njit(cache=True)
def query_range(occ, runends, off, payload, stored, w, r, abits, fbits, fluid, salt, ql, qr, probes):
    """Range emptiness check for ``[ql, qr]``; ``probes[0]`` counts partitions looked at.

    ``stored`` is the number of used slots.  When the whole partitions inside the
    range are so many that nearly every stored hash value would be hit anyway,
    the answer is positive without looking at them.
    """
    rs = np.uint64(r)
    top = np.int64(low_mask(r))
    pl = ql >> rs
    pr = qr >> rs
    ml = np.int64(ql & low_mask(r))
    mr = np.int64(qr & low_mask(r))
    probes[0] += 1
    h, fp = hash_address(pl, salt, abits, fbits, fluid)
    if pl == pr:
        return partition_has(occ, runends, off, payload, w, r, h, fp, fluid, ml, mr)
    if partition_has(occ, runends, off, payload, w, r, h, fp, fluid, ml, top):
        return True
    p = pl + U1
    inner = pr - p
    if stored == 0:
        p = pr
    elif inner > LONG_SPAN or float(inner) * stored >= SATURATION_HITS * 2.0 ** (abits + fbits):
        return True
    while p < pr:
        probes[0] += 1
        h, fp = hash_address(p, salt, abits, fbits, fluid)
        if partition_has(occ, runends, off, payload, w, r, h, fp, fluid, 0, top):
            return True
        p += U1
    probes[0] += 1
    h, fp = hash_address(pr, salt, abits, fbits, fluid)
    return partition_has(occ, runends, off, payload, w, r, h, fp, fluid, 0, mr)


@njit(cache=True, nogil=True)
def query_many(occ, runends, off, payload, stored, w, r, abits, fbits, fluid, salt, lefts, rights, out, probes):
    """Batch range queries; only entries still False in ``out`` are evaluated."""
    for i in range(lefts.shape[0]):
        if not out[i]:
            out[i] = query_range(occ, runends, off, payload, stored, w, r, abits, fbits, fluid, salt, lefts[i], rights[i], probes)


@njit(cache=True)
def insert_many(occ, runends, off, payload, counters, n, w, r, cap, abits, fbits, fluid, salt, keys):
    """Insert keys in order; returns how many went in before the first failure and its status."""
    rs = np.uint64(r)
    for i in range(keys.shape[0]):
        h, fp = hash_address(keys[i] >> rs, salt, abits, fbits, fluid)
        st = box_insert(occ, runends, off, payload, counters, n, w, r, cap, h, fp, np.int64(keys[i] & low_mask(r)))
        if st != OK:
            return i, st
    return keys.shape[0], OK


@njit(cache=True)
def export_boxes(occ, runends, off, payload, w, r, n_items):
    """All stored mementos as parallel arrays ``(slot, fp, memento)`` in layout order."""
    homes, starts, ends = list_runs(occ, runends, 0)
    hs = np.empty(n_items, np.int64)
    fps = np.empty(n_items, np.uint64)
    ms = np.empty(n_items, np.int64)
    k = 0
    for q in range(homes.shape[0]):
        j = starts[q]
        e = ends[q]
        while j <= e:
            bfp, ns, cnt, kind, nch = box_info(payload, w, r, j, e)
            mems = read_box(payload, w, r, j, kind, cnt, nch)
            for i in range(cnt):
                hs[k] = homes[q]
                fps[k] = bfp
                ms[k] = mems[i]
                k += 1
            j += ns
    return hs[:k], fps[:k], ms[:k]


@njit(cache=True)
def box_sizes(occ, runends, off, payload, w, r):
    homes, starts, ends = list_runs(occ, runends, 0)
    sizes = []
    for q in range(homes.shape[0]):
        j = starts[q]
        e = ends[q]
        while j <= e:
            bfp, ns, cnt, kind, nch = box_info(payload, w, r, j, e)
            sizes.append(cnt)
            j += ns
    return np.array(sizes, np.int64)


@njit(cache=True)
def encode_sorted(hs, fps, ms, r, w):
    """Encode entries sorted by (slot, fp, memento) into runs.

    Returns ``(run_homes, run_lengths, slot_values)``.
    """
    n = hs.shape[0]
    values = np.empty(2 * n + 8, np.uint64)
    homes = np.empty(n, np.int64)
    lengths = np.empty(n, np.int64)
    buf = np.empty(2 * n + 8, np.uint64)
    nv = 0
    nr = 0
    i = 0
    while i < n:
        h = hs[i]
        run_len = 0
        while i < n and hs[i] == h:
            fp = fps[i]
            k = i
            while k < n and hs[k] == h and fps[k] == fp:
                k += 1
            cnt = k - i
            repeat = fp == 0 or r == 1
            ns = encode_box(fp, ms[i:k], cnt, r, w, repeat, buf)
            if nv + ns > values.shape[0]:
                grown = np.empty(2 * values.shape[0] + ns, np.uint64)
                grown[:nv] = values[:nv]
                values = grown
            values[nv : nv + ns] = buf[:ns]
            nv += ns
            run_len += ns
            i = k
        homes[nr] = h
        lengths[nr] = run_len
        nr += 1
    return homes[:nr], lengths[:nr], values[:nv]


def _raise_for(status: int, detail: str = "") -> None:
    if status == NO_CAPACITY:
        raise CapacityError("load factor limit reached" + detail)
    if status == NO_ROOM:
        raise TableFullError("no free slot past the end of the cluster" + detail)


def _as_key(key: int) -> np.uint64:
    key = int(key)
    if not 0 <= key <= KEY_MASK:
        raise ValueError(f"key {key} outside the 64-bit universe")
    return np.uint64(key)


def _as_key_array(keys) -> np.ndarray:
    arr = np.asarray(keys)
    if arr.dtype == np.uint64:
        return np.ascontiguousarray(arr)
    if arr.dtype.kind in "iu":
        if arr.size and arr.min() < 0:
            raise ValueError("keys must be non-negative")
        return arr.astype(np.uint64)
    return np.array([int(_as_key(k)) for k in arr.tolist()], np.uint64)


@dataclass
class FilterStats:
    n_slots: int
    stored_slots: int
    n_keys: int
    load_factor: float
    bits_per_key: float
    memory_bytes: int
    n_boxes: int
    avg_partition_size: float
    mean_cluster_length: float
    cluster_length_histogram: dict[int, int] = field(default_factory=dict)
    box_size_histogram: dict[int, int] = field(default_factory=dict)
    queries: int = 0
    partition_probes: int = 0


def cluster_lengths(table: RsqfTable) -> np.ndarray:
    """Lengths, in slots, of the maximal runs of occupied slots."""
    _, starts, ends = table.runs()
    if starts.size == 0:
        return np.zeros(0, np.int64)
    breaks = np.nonzero(starts[1:] != ends[:-1] + 1)[0] + 1
    first = np.concatenate(([0], breaks))
    last = np.concatenate((breaks - 1, [starts.size - 1]))
    return ends[last] - starts[first] + 1


def _histogram(values: np.ndarray) -> dict[int, int]:
    if values.size == 0:
        return {}
    uniq, counts = np.unique(values, return_counts=True)
    return {int(u): int(c) for u, c in zip(uniq, counts)}


class _TableOps:
    """Shared plumbing for anything backed by one memento table."""

    table: RsqfTable
    fluid: bool
    memento_bits: int
    _fp_bits: int
    _abits: int
    _salt: np.uint64

    def _args(self):
        t = self.table
        return t.occupieds, t.runends, t.offsets, t.payload

    def _query_arrays(self, lefts: np.ndarray, rights: np.ndarray, out: np.ndarray) -> int:
        probes = np.zeros(1, np.int64)
        query_many(
            *self._args(),
            self.table.stored_slots,
            self.table.slot_width,
            self.memento_bits,
            self._abits,
            self._fp_bits,
            self.fluid,
            self._salt,
            lefts,
            rights,
            out,
            probes,
        )
        return int(probes[0])

    def export(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        t = self.table
        return export_boxes(*self._args(), t.slot_width, self.memento_bits, int(t.counters[1]))

    def contents(self) -> dict[tuple[int, int], list[int]]:
        """Decoded boxes: ``{(canonical_slot, fingerprint): sorted mementos}``."""
        out: dict[tuple[int, int], list[int]] = {}
        for h, fp, m in zip(*(a.tolist() for a in self.export())):
            out.setdefault((h, fp), []).append(m)
        return out

    def _load_sorted(self, hs: np.ndarray, fps: np.ndarray, ms: np.ndarray, cap: int) -> None:
        t = self.table
        homes, lengths, values = encode_sorted(hs, fps, ms, self.memento_bits, t.slot_width)
        if values.size > cap:
            raise CapacityError(f"{values.size} slots needed, capacity {cap}")
        t.clear()
        if not layout_runs(*self._args(), t.n_physical, t.slot_width, homes, lengths, values):
            t.clear()
            raise CapacityError("runs overflow the end of the table")
        t.counters[0] = values.size
        t.counters[1] = hs.size


class MementoFilter(_TableOps):
    """Fixed-size range filter over 64-bit keys."""

    fluid = False
    _MAGIC = b"MEMF"
    _HEADER = struct.Struct("<4sHQHHdQ")

    def __init__(self, params: FilterParams):
        self.params = params
        self.memento_bits = params.memento_bits
        self._fp_bits = params.fingerprint_bits
        self._abits = params.address_bits
        self._salt = seed_salt(params.seed)
        self.table = RsqfTable(params.n_slots, params.fingerprint_bits + params.memento_bits, params.seed)
        self.queries = 0
        self.partition_probes = 0

    # ------------------------------------------------------------ sizing

    @property
    def n_keys(self) -> int:
        return int(self.table.counters[1])

    @property
    def load_factor(self) -> float:
        return self.table.stored_slots / self.params.n_slots

    @property
    def max_range(self) -> int:
        return 1 << self.memento_bits

    def address(self, key: int) -> tuple[int, int, int]:
        """``(canonical_slot, fingerprint, memento)`` of a key."""
        k = _as_key(key)
        h, fp = hash_address(k >> np.uint64(self.memento_bits), self._salt, self._abits, self._fp_bits, False)
        return int(h), int(fp), int(k) & ((1 << self.memento_bits) - 1)

    def canonical_slot(self, key: int) -> int:
        return self.address(key)[0]

    # ------------------------------------------------------------ updates

    def insert(self, key: int) -> None:
        h, fp, m = self.address(key)
        t = self.table
        st = box_insert(
            *self._args(), t.counters, t.n_physical, t.slot_width, self.memento_bits, self.params.capacity, h, np.uint64(fp), m
        )
        _raise_for(st)

    def insert_many(self, keys) -> None:
        """Insert keys in the given order; stops with CapacityError when full."""
        arr = _as_key_array(keys)
        t = self.table
        done, st = insert_many(
            *self._args(),
            t.counters,
            t.n_physical,
            t.slot_width,
            self.memento_bits,
            self.params.capacity,
            self._abits,
            self._fp_bits,
            False,
            self._salt,
            arr,
        )
        _raise_for(st, f" after {done} of {arr.size} keys")

    def delete(self, key: int) -> None:
        h, fp, m = self.address(key)
        t = self.table
        st = box_delete(*self._args(), t.counters, t.n_physical, t.slot_width, self.memento_bits, h, np.uint64(fp), m)
        if st != OK:
            raise NotFoundError(key)

    @classmethod
    def bulk_load(cls, params: FilterParams, keys) -> MementoFilter:
        """Build a filter from a key collection in one sorted pass."""
        flt = cls(params)
        arr = _as_key_array(keys)
        r = params.memento_bits
        h = mix64_array(arr >> np.uint64(r), params.seed)
        hs = (h & np.uint64(params.n_slots - 1)).astype(np.int64)
        fps = (h >> np.uint64(params.address_bits)) & np.uint64((1 << params.fingerprint_bits) - 1)
        ms = (arr & np.uint64((1 << r) - 1)).astype(np.int64)
        order = np.lexsort((ms, fps, hs))
        flt._load_sorted(hs[order], fps[order], ms[order], params.capacity)
        return flt

    # ------------------------------------------------------------ queries

    def point_query(self, key: int) -> bool:
        k = int(_as_key(key))
        return self.range_query(k, k)

    def range_query(self, left: int, right: int) -> bool:
        """May ``[left, right]`` hold a key?  Never False when it does.

        Ranges longer than ``2**r`` are handled partition by partition.
        """
        lo, hi = _as_key(left), _as_key(right)
        if lo > hi:
            raise ValueError("empty range: left > right")
        out = np.zeros(1, np.bool_)
        self.partition_probes += self._query_arrays(np.array([lo]), np.array([hi]), out)
        self.queries += 1
        return bool(out[0])

    multi_range_query = range_query

    def point_query_many(self, keys) -> np.ndarray:
        arr = _as_key_array(keys)
        return self.range_query_many(arr, arr)

    def range_query_many(self, lefts, rights) -> np.ndarray:
        lo, hi = _as_key_array(lefts), _as_key_array(rights)
        if lo.shape != hi.shape:
            raise ValueError("lefts and rights differ in length")
        if np.any(lo > hi):
            raise ValueError("empty range: left > right")
        out = np.zeros(lo.size, np.bool_)
        self.partition_probes += self._query_arrays(lo, hi, out)
        self.queries += lo.size
        return out

    # ------------------------------------------------------------ introspection

    def stats(self) -> FilterStats:
        t = self.table
        clusters = cluster_lengths(t)
        sizes = box_sizes(*self._args(), t.slot_width, self.memento_bits)
        n_keys = self.n_keys
        prefixes = 0
        if n_keys:
            hs, fps, ms = self.export()
            prefixes = len(set(zip(hs.tolist(), fps.tolist())))
        return FilterStats(
            n_slots=t.n_slots,
            stored_slots=t.stored_slots,
            n_keys=n_keys,
            load_factor=self.load_factor,
            bits_per_key=8 * t.nbytes / n_keys if n_keys else math.inf,
            memory_bytes=t.nbytes,
            n_boxes=int(sizes.size),
            avg_partition_size=n_keys / prefixes if prefixes else 0.0,
            mean_cluster_length=float(clusters.mean()) if clusters.size else 0.0,
            cluster_length_histogram=_histogram(clusters),
            box_size_histogram=_histogram(sizes),
            queries=self.queries,
            partition_probes=self.partition_probes,
        )

    # ------------------------------------------------------------ serialization

    def to_bytes(self) -> bytes:
        p = self.params
        head = self._HEADER.pack(self._MAGIC, 1, p.n_slots, p.fingerprint_bits, p.memento_bits, p.max_load_factor, p.seed)
        return head + struct.pack("<Q", self.n_keys) + self.table.to_bytes()

    @classmethod
    def from_bytes(cls, data: bytes) -> MementoFilter:
        magic, version, n, f, r, alpha, seed = cls._HEADER.unpack_from(data, 0)
        if magic != cls._MAGIC or version != 1:
            raise ValueError("not a serialized memento filter")
        flt = cls(FilterParams(n, f, r, alpha, seed))
        at = cls._HEADER.size
        (n_items,) = struct.unpack_from("<Q", data, at)
        table = RsqfTable.from_bytes(memoryview(data)[at + 8 :])
        if table.n_slots != n or table.slot_width != f + r:
            raise ValueError("table does not match filter parameters")
        table.counters[1] = n_items
        flt.table = table
        return flt
