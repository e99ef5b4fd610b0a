"""A memento filter that grows by doubling.

Fingerprints are *fluid*: the fingerprint field is ``f + 1`` bits wide and holds
``(1 << L) | payload`` where ``payload`` has ``L <= f`` bits, so the leading zeros
count how many expansions the box has seen since it was created (its age).  On an
expansion every box hands the low bit of its payload to the address, which gains
one bit, and no two boxes ever merge.  A box whose payload is already empty can
not move; it is *depleted* and handed to a smaller secondary table that is
addressed by the hash bits the box still knows.  When a secondary itself runs out
of room it is frozen onto a chain and a new one takes its place.

Queries probe every matching box in every table.  A box matches a query when its
payload equals the corresponding low bits of the query's fingerprint bits.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np

from .core import (
    OK,
    FilterParams,
    FilterStats,
    NotFoundError,
    _as_key,
    _as_key_array,
    _histogram,
    _TableOps,
    box_delete,
    box_insert,
    box_sizes,
    cluster_lengths,
    insert_many,
    longest_match,
)
from .keyspace import mix64, seed_salt
from .rsqf import RsqfTable


def fluid_encode(payload: int, payload_len: int) -> int:
    if payload_len < 0 or not 0 <= payload < 1 << payload_len:
        raise ValueError("payload does not fit its length")
    return (1 << payload_len) | payload


def fluid_decode(value: int) -> tuple[int, int]:
    """``(payload_len, payload)`` of a fluid fingerprint."""
    if value <= 0:
        raise ValueError("fluid fingerprints are never zero")
    plen = value.bit_length() - 1
    return plen, value & ((1 << plen) - 1)


def fluid_age(value: int, fresh_bits: int) -> int:
    return fresh_bits - fluid_decode(value)[0]


@dataclass(frozen=True)
class BoxMatch:
    table: int
    payload_len: int
    fluid: int
    address_bits: int

    @property
    def match_len(self) -> int:
        return self.address_bits + self.payload_len


class FluidTable(_TableOps):
    """One table of boxes with fluid fingerprints, addressed by ``log2(n)`` hash bits."""

    fluid = True

    def __init__(self, n_slots: int, fresh_bits: int, memento_bits: int, alpha: float, seed: int):
        if n_slots < 1 or n_slots & (n_slots - 1):
            raise ValueError("n_slots must be a power of two")
        self.n_slots = n_slots
        self.fresh_bits = fresh_bits
        self._fp_bits = fresh_bits
        self.memento_bits = memento_bits
        self.alpha = alpha
        self.seed = seed
        self._abits = n_slots.bit_length() - 1
        self._salt = seed_salt(seed)
        self.table = RsqfTable(n_slots, fresh_bits + 1 + memento_bits, seed)

    @property
    def address_bits(self) -> int:
        return self._abits

    @property
    def capacity(self) -> int:
        return int(math.floor(self.alpha * self.n_slots))

    @property
    def n_keys(self) -> int:
        return int(self.table.counters[1])

    def _sibling(self, n_slots: int) -> FluidTable:
        return FluidTable(n_slots, self.fresh_bits, self.memento_bits, self.alpha, self.seed)

    def insert_entry(self, h: int, payload_len: int, m: int) -> int:
        """Add memento ``m`` under hash bits ``h`` keeping ``payload_len`` of them."""
        slot = h & (self.n_slots - 1)
        fp = fluid_encode((h >> self._abits) & ((1 << payload_len) - 1), payload_len)
        t = self.table
        return box_insert(
            t.occupieds, t.runends, t.offsets, t.payload, t.counters, t.n_physical, t.slot_width,
            self.memento_bits, self.capacity, slot, np.uint64(fp), m,
        )

    def delete_entry(self, slot: int, fp: int, m: int) -> bool:
        t = self.table
        st = box_delete(
            t.occupieds, t.runends, t.offsets, t.payload, t.counters, t.n_physical, t.slot_width,
            self.memento_bits, slot, np.uint64(fp), m,
        )
        return st == OK

    def longest(self, h: int, m: int) -> tuple[int, int]:
        slot = h & (self.n_slots - 1)
        key_fp = fluid_encode((h >> self._abits) & ((1 << self.fresh_bits) - 1), self.fresh_bits)
        t = self.table
        plen, fp = longest_match(
            t.occupieds, t.runends, t.offsets, t.payload, t.slot_width, self.memento_bits, slot, np.uint64(key_fp), m
        )
        return int(plen), int(fp)

    def has_depleted(self) -> bool:
        _, fps, _ = self.export()
        return bool(np.any(fps == 1))

    def expanded(self) -> tuple[FluidTable, tuple[np.ndarray, np.ndarray]]:
        """A table of twice the size plus the ``(slot, memento)`` pairs that could not move."""
        hs, fps, ms = self.export()
        dead = fps == 1
        live = ~dead
        hs_l = hs[live] | ((fps[live] & np.uint64(1)).astype(np.int64) << self._abits)
        fps_l = fps[live] >> np.uint64(1)
        ms_l = ms[live]
        bigger = self._sibling(2 * self.n_slots)
        order = np.lexsort((ms_l, fps_l, hs_l))
        bigger._load_sorted(hs_l[order], fps_l[order], ms_l[order], bigger.table.n_physical)
        return bigger, (hs[dead], ms[dead])

    def contracted(self) -> FluidTable:
        if self.n_slots < 2:
            raise ValueError("cannot contract a one-slot table")
        hs, fps, ms = self.export()
        a = self._abits - 1
        hb = ((hs >> a) & 1).astype(np.uint64)
        hs_n = hs & ((1 << a) - 1)
        full = np.uint64(1 << self.fresh_bits)
        grown = (fps << np.uint64(1)) | hb
        capped = full | (grown & (full - np.uint64(1)))
        fps_n = np.where(fps >= full, capped, grown)
        smaller = self._sibling(self.n_slots // 2)
        order = np.lexsort((ms, fps_n, hs_n))
        smaller._load_sorted(hs_n[order], fps_n[order], ms[order], smaller.capacity)
        return smaller

    def stats_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        t = self.table
        return cluster_lengths(t), box_sizes(t.occupieds, t.runends, t.offsets, t.payload, t.slot_width, self.memento_bits)

    def to_bytes(self) -> bytes:
        return struct.pack("<Q", self.n_keys) + self.table.to_bytes()

    @classmethod
    def read_from(cls, data: memoryview, at: int, fresh_bits: int, r: int, alpha: float, seed: int) -> tuple[FluidTable, int]:
        (n_items,) = struct.unpack_from("<Q", data, at)
        table, end = RsqfTable.read_from(data, at + 8)
        ft = cls(table.n_slots, fresh_bits, r, alpha, seed)
        if table.slot_width != ft.table.slot_width:
            raise ValueError("table width does not match parameters")
        table.counters[1] = n_items
        ft.table = table
        return ft, end


class ExpandableMementoFilter:
    """Range filter that doubles its main table whenever it fills up.

    ``params.n_slots`` is the starting size and ``params.fingerprint_bits`` the
    payload length of a freshly inserted key; the fingerprint field is one bit
    wider.  A box survives ``fingerprint_bits`` expansions in the main table.
    """

    _MAGIC = b"MEMX"
    _HEADER = struct.Struct("<4sHQHHdQqHH")

    def __init__(self, params: FilterParams):
        self.params = params
        self.memento_bits = params.memento_bits
        self.fresh_bits = params.fingerprint_bits
        self.main = FluidTable(params.n_slots, params.fingerprint_bits, params.memento_bits, params.max_load_factor, params.seed)
        self.secondary: FluidTable | None = None
        self.chain: list[FluidTable] = []
        self.expansions = 0
        self.queries = 0
        self.partition_probes = 0

    # ------------------------------------------------------------ structure

    @property
    def tables(self) -> list[FluidTable]:
        out = [self.main]
        if self.secondary is not None:
            out.append(self.secondary)
        return out + self.chain

    @property
    def secondaries(self) -> list[FluidTable]:
        return self.tables[1:]

    @property
    def n_slots(self) -> int:
        return self.main.n_slots

    @property
    def n_keys(self) -> int:
        return sum(t.n_keys for t in self.tables)

    @property
    def load_factor(self) -> float:
        return self.main.table.stored_slots / self.main.n_slots

    @property
    def memory_bytes(self) -> int:
        return sum(t.table.nbytes for t in self.tables)

    def _hash(self, key: int) -> tuple[int, int]:
        k = int(_as_key(key))
        r = self.memento_bits
        return mix64(k >> r, self.params.seed), k & ((1 << r) - 1)

    # ------------------------------------------------------------ growth

    def expand(self) -> None:
        """Double the main table; depleted boxes move to a secondary."""
        known = self.main.address_bits
        bigger, (slots, mems) = self.main.expanded()
        self.main = bigger
        self.expansions += 1
        if slots.size:
            self._absorb(slots, mems, known)

    def contract(self) -> None:
        """Halve the main table, folding one address bit back into each box."""
        self.main = self.main.contracted()
        self.expansions -= 1

    def _fresh_secondary(self, abits: int) -> None:
        if self.secondary is not None and self.secondary.n_keys:
            self.chain.insert(0, self.secondary)
        self.secondary = self.main._sibling(1 << abits)

    def _absorb(self, slots: np.ndarray, mems: np.ndarray, known: int) -> None:
        target = max(0, known - self.fresh_bits)
        sec = self.secondary
        if sec is None or sec.address_bits > known:
            self._fresh_secondary(target)
        while self.secondary.address_bits < target:
            if self.secondary.has_depleted():
                self._fresh_secondary(target)
                break
            self.secondary, _ = self.secondary.expanded()
        for s, m in zip(slots.tolist(), mems.tolist()):
            while True:
                sec = self.secondary
                plen = min(self.fresh_bits, known - sec.address_bits)
                st = sec.insert_entry(s, plen, m)
                if st == OK:
                    break
                if sec.has_depleted() or sec.address_bits >= known:
                    self._fresh_secondary(sec.address_bits)
                else:
                    self.secondary, _ = sec.expanded()

    # ------------------------------------------------------------ updates

    def insert(self, key: int) -> None:
        h, m = self._hash(key)
        while True:
            st = self.main.insert_entry(h, self.fresh_bits, m)
            if st == OK:
                return
            self.expand()

    def insert_many(self, keys) -> int:
        """Insert keys in order, expanding as needed; returns the number of expansions."""
        arr = _as_key_array(keys)
        before = self.expansions
        while arr.size:
            t = self.main.table
            done, st = insert_many(
                t.occupieds, t.runends, t.offsets, t.payload, t.counters, t.n_physical, t.slot_width,
                self.memento_bits, self.main.capacity, self.main.address_bits, self.fresh_bits, True,
                self.main._salt, arr,
            )
            arr = arr[done:]
            if st != OK:
                self.expand()
        return self.expansions - before

    def _best_match(self, h: int, m: int) -> BoxMatch | None:
        best = None
        for i, t in enumerate(self.tables):
            plen, fp = t.longest(h, m)
            if plen < 0:
                continue
            cand = BoxMatch(i, plen, fp, t.address_bits)
            if best is None or cand.match_len > best.match_len:
                best = cand
        return best

    def delete(self, key: int) -> None:
        """Remove one copy of ``key`` from the longest matching box holding it."""
        h, m = self._hash(key)
        best = self._best_match(h, m)
        if best is None:
            raise NotFoundError(key)
        t = self.tables[best.table]
        t.delete_entry(h & (t.n_slots - 1), best.fluid, m)
        self._drop_empty_secondaries()

    def rejuvenate(self, key: int) -> bool:
        """Give ``key`` a full-length fingerprint again.  Returns False if it had one."""
        h, m = self._hash(key)
        best = self._best_match(h, m)
        if best is None:
            raise NotFoundError(key)
        if best.table == 0 and best.payload_len == self.fresh_bits:
            return False
        t = self.tables[best.table]
        t.delete_entry(h & (t.n_slots - 1), best.fluid, m)
        self._drop_empty_secondaries()
        self.insert(key)
        return True

    def _drop_empty_secondaries(self) -> None:
        self.chain = [t for t in self.chain if t.n_keys]

    # ------------------------------------------------------------ queries

    def point_query(self, key: int) -> bool:
        k = int(_as_key(key))
        return self.range_query(k, k)

    def range_query(self, left: int, right: int) -> bool:
        lo, hi = _as_key(left), _as_key(right)
        if lo > hi:
            raise ValueError("empty range: left > right")
        return bool(self.range_query_many(np.array([lo]), np.array([hi]))[0])

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
        for t in self.tables:
            self.partition_probes += t._query_arrays(lo, hi, out)
        self.queries += lo.size
        return out

    # ------------------------------------------------------------ introspection

    def stats(self) -> FilterStats:
        clusters, sizes = self.main.stats_arrays()
        n_keys = self.n_keys
        hs, fps, _ = self.main.export()
        prefixes = len(set(zip(hs.tolist(), fps.tolist())))
        mem = self.memory_bytes
        return FilterStats(
            n_slots=self.main.n_slots,
            stored_slots=self.main.table.stored_slots,
            n_keys=n_keys,
            load_factor=self.load_factor,
            bits_per_key=8 * mem / n_keys if n_keys else math.inf,
            memory_bytes=mem,
            n_boxes=int(sizes.size),
            avg_partition_size=self.main.n_keys / prefixes if prefixes else 0.0,
            mean_cluster_length=float(clusters.mean()) if clusters.size else 0.0,
            cluster_length_histogram=_histogram(clusters),
            box_size_histogram=_histogram(sizes),
            queries=self.queries,
            partition_probes=self.partition_probes,
        )

    # ------------------------------------------------------------ serialization

    def to_bytes(self) -> bytes:
        p = self.params
        head = self._HEADER.pack(
            self._MAGIC, 1, p.n_slots, p.fingerprint_bits, p.memento_bits, p.max_load_factor, p.seed,
            self.expansions, int(self.secondary is not None), len(self.chain),
        )
        return head + b"".join(t.to_bytes() for t in self.tables)

    @classmethod
    def from_bytes(cls, data: bytes) -> ExpandableMementoFilter:
        magic, version, n0, f, r, alpha, seed, expansions, has_sec, n_chain = cls._HEADER.unpack_from(data, 0)
        if magic != cls._MAGIC or version != 1:
            raise ValueError("not a serialized expandable memento filter")
        flt = cls(FilterParams(n0, f, r, alpha, seed))
        view = memoryview(data)
        at = cls._HEADER.size
        tables = []
        for _ in range(1 + has_sec + n_chain):
            t, at = FluidTable.read_from(view, at, f, r, alpha, seed)
            tables.append(t)
        if at != len(data):
            raise ValueError("trailing bytes after filter")
        flt.main = tables[0]
        flt.secondary = tables[1] if has_sec else None
        flt.chain = tables[1 + has_sec :]
        flt.expansions = expansions
        return flt

