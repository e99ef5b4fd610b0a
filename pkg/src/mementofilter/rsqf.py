"""Rank-and-select quotient filter table.

Slots are grouped in blocks of 64.  Each block carries

* ``occupieds``: bit i set when some item has canonical slot ``64*b + i``
* ``runends``:   bit i set when slot ``64*b + i`` ends a run
* ``offset``:    how far the runs of earlier canonical slots reach into the block,
  i.e. ``max(0, e - 64*b + 1)`` where ``e`` ends the last run whose canonical slot
  precedes the block.  Stored in 8 bits; 255 means "255 or more" and the true
  value is recovered by walking back to an unsaturated block.
* a payload of 64 slots of ``slot_width`` bits.

Runs appear in canonical-slot order, each starting at ``max(home, end_of_previous_run + 1)``.
That layout is a pure function of the run contents, which is what makes bulk
construction byte-identical to incremental insertion.

In memory the three metadata fields and the payload live in parallel numpy arrays;
the payload words of block ``b`` are ``payload[b*w:(b+1)*w]`` so the payload is one
flat little-endian bit array with slot ``i`` at bits ``[i*w, (i+1)*w)``.
"""

from __future__ import annotations

import math
import struct
from typing import Iterator

import numpy as np
from numba import njit

from .bitops import U0, U1, low_mask, mask_upto, popcount, select, trailing_zeros

BLOCK = 64
OFFSET_SAT = 255
MAX_SLOT_WIDTH = 60

_MAGIC = b"RSQF"
_VERSION = 1
_HEADER = struct.Struct("<4sHQQHQ")


def overflow_slots(n_slots: int) -> int:
    """Extra slots past the last canonical slot so runs near the end can spill."""
    return max(BLOCK, math.ceil(10 * math.sqrt(n_slots)))


class TableFullError(RuntimeError):
    """No free slot remains to the right of the insertion point."""


# ---------------------------------------------------------------- slot / bit access


@njit(cache=True, inline="always")
def get_slot(payload, w, i):
    bit = i * w
    q = bit >> 6
    s = bit & 63
    v = payload[q] >> np.uint64(s)
    if s + w > 64:
        v |= payload[q + 1] << np.uint64(64 - s)
    return v & low_mask(w)


@njit(cache=True, inline="always")
def set_slot(payload, w, i, value):
    bit = i * w
    q = bit >> 6
    s = bit & 63
    m = low_mask(w)
    v = np.uint64(value) & m
    payload[q] = (payload[q] & ~(m << np.uint64(s))) | (v << np.uint64(s))
    if s + w > 64:
        lo = np.uint64(64 - s)
        payload[q + 1] = (payload[q + 1] & ~(m >> lo)) | (v >> lo)


@njit(cache=True, inline="always")
def get_bit(words, i):
    return (words[i >> 6] >> np.uint64(i & 63)) & U1


@njit(cache=True, inline="always")
def set_bit(words, i):
    words[i >> 6] |= U1 << np.uint64(i & 63)


@njit(cache=True, inline="always")
def clear_bit(words, i):
    words[i >> 6] &= ~(U1 << np.uint64(i & 63))


# ---------------------------------------------------------------- locating runs


@njit(cache=True)
def select_from(runends, start, k):
    """Position of the k-th set runend bit at or after ``start``; -1 if none."""
    nb = runends.shape[0]
    b = start >> 6
    if b >= nb:
        return -1
    word = runends[b] & ~low_mask(start & 63)
    while True:
        c = popcount(word)
        if c >= k:
            return 64 * b + select(word, k)
        k -= c
        b += 1
        if b >= nb:
            return -1
        word = runends[b]


@njit(cache=True)
def recompute_offset(occ, runends, off, b):
    b0 = b - 1
    while b0 > 0 and off[b0] == OFFSET_SAT:
        b0 -= 1
    o = np.int64(off[b0]) if b0 > 0 else 0
    e = 64 * b0 + o - 1
    for bb in range(b0, b):
        k = popcount(occ[bb])
        if k > 0:
            e = select_from(runends, 64 * bb + o, k)
        o = max(0, e - 64 * (bb + 1) + 1)
    return o


@njit(cache=True, inline="always")
def true_offset(occ, runends, off, b):
    o = off[b]
    if o < OFFSET_SAT:
        return np.int64(o)
    return recompute_offset(occ, runends, off, b)


@njit(cache=True)
def run_end(occ, runends, off, i):
    """End of the last run whose canonical slot is <= i.

    Returns a value < i when no such run reaches slot i.
    """
    b = i >> 6
    o = true_offset(occ, runends, off, b)
    k = popcount(occ[b] & mask_upto(i & 63))
    if k == 0:
        return 64 * b + o - 1
    return select_from(runends, 64 * b + o, k)


@njit(cache=True)
def run_start(occ, runends, off, h):
    if h == 0:
        return 0
    return max(h, run_end(occ, runends, off, h - 1) + 1)


@njit(cache=True)
def run_bounds(occ, runends, off, h):
    """``(start, end)`` of the run of an occupied canonical slot ``h``."""
    b = h >> 6
    o = true_offset(occ, runends, off, b)
    k = popcount(occ[b] & mask_upto(h & 63))
    base = 64 * b + o
    if k == 1:
        prev = base - 1
    else:
        prev = select_from(runends, base, k - 1)
    end = select_from(runends, prev + 1, 1)
    return max(h, prev + 1), end


@njit(cache=True)
def find_first_empty(occ, runends, off, n, i):
    while i < n:
        e = run_end(occ, runends, off, i)
        if e < i:
            return i
        i = e + 1
    return n


@njit(cache=True)
def next_occupied(occ, start, limit):
    """First canonical slot in [start, limit] with its occupied bit set, else -1."""
    if start > limit:
        return -1
    b = start >> 6
    word = occ[b] & ~low_mask(start & 63)
    while True:
        if word != U0:
            p = 64 * b + trailing_zeros(word)
            return p if p <= limit else -1
        b += 1
        if 64 * b > limit or b >= occ.shape[0]:
            return -1
        word = occ[b]


# ---------------------------------------------------------------- mutation


@njit(cache=True)
def insert_slot(occ, runends, off, payload, n, w, h, pos, value):
    """Insert ``value`` at ``pos`` into the run of canonical slot ``h``.

    ``pos`` must lie in ``[run_start, run_end + 1]`` for an existing run, or be the
    start position of a new run.  Returns False when the table has no room.
    """
    empty = find_first_empty(occ, runends, off, n, pos)
    if empty >= n:
        return False
    new_run = get_bit(occ, h) == U0
    old_end = -1
    if not new_run:
        old_end = run_end(occ, runends, off, h)
    for i in range(empty - 1, pos - 1, -1):
        set_slot(payload, w, i + 1, get_slot(payload, w, i))
        if get_bit(runends, i) != U0:
            set_bit(runends, i + 1)
        else:
            clear_bit(runends, i + 1)
    set_slot(payload, w, pos, value)
    clear_bit(runends, pos)
    if new_run:
        set_bit(occ, h)
        set_bit(runends, pos)
    elif pos == old_end + 1:
        clear_bit(runends, old_end)
        set_bit(runends, pos)
    for b in range((h >> 6) + 1, (empty >> 6) + 1):
        if off[b] < OFFSET_SAT:
            off[b] += 1
    return True


@njit(cache=True)
def delete_slot(occ, runends, off, payload, n, w, h, pos):
    """Remove the slot at ``pos`` from the run of canonical slot ``h``.

    Later runs of the cluster slide left until one reaches its canonical slot.
    """
    end = run_end(occ, runends, off, h)
    start = run_start(occ, runends, off, h)
    for i in range(pos, end):
        set_slot(payload, w, i, get_slot(payload, w, i + 1))
    clear_bit(runends, end)
    if start == end:
        clear_bit(occ, h)
    else:
        set_bit(runends, end - 1)
    hole = end
    cur = h
    while True:
        h2 = next_occupied(occ, cur + 1, hole)
        if h2 < 0:
            break
        e2 = select_from(runends, hole + 1, 1)
        for i in range(hole + 1, e2 + 1):
            set_slot(payload, w, i - 1, get_slot(payload, w, i))
        clear_bit(runends, e2)
        set_bit(runends, e2 - 1)
        hole = e2
        cur = h2
    set_slot(payload, w, hole, U0)
    for b in range((h >> 6) + 1, (hole >> 6) + 1):
        if off[b] == OFFSET_SAT:
            off[b] = min(OFFSET_SAT, recompute_offset(occ, runends, off, b))
        elif off[b] > 0:
            off[b] -= 1


@njit(cache=True)
def layout_runs(occ, runends, off, payload, n, w, homes, lengths, values):
    """Write runs into a zeroed table.  Returns False on overflow."""
    cursor = 0
    vi = 0
    for k in range(homes.shape[0]):
        h = np.int64(homes[k])
        start = max(h, cursor)
        end = start + np.int64(lengths[k]) - 1
        if end >= n:
            return False
        for p in range(start, end + 1):
            set_slot(payload, w, p, values[vi])
            vi += 1
        set_bit(occ, h)
        set_bit(runends, end)
        for b in range((h >> 6) + 1, (end >> 6) + 1):
            off[b] = min(OFFSET_SAT, end - 64 * b + 1)
        cursor = end + 1
    return True


@njit(cache=True)
def list_runs(occ, runends, n):
    """Sequential scan of all runs: arrays (home, start, end) in layout order."""
    nruns = 0
    for b in range(occ.shape[0]):
        nruns += popcount(occ[b])
    homes = np.empty(nruns, np.int64)
    starts = np.empty(nruns, np.int64)
    ends = np.empty(nruns, np.int64)
    cursor = 0
    k = 0
    for b in range(occ.shape[0]):
        word = occ[b]
        while word != U0:
            h = 64 * b + trailing_zeros(word)
            word &= word - U1
            s = max(h, cursor)
            e = select_from(runends, s, 1)
            homes[k] = h
            starts[k] = s
            ends[k] = e
            k += 1
            cursor = e + 1
    return homes, starts, ends


@njit(cache=True)
def home_of(occ, runends, pos):
    """Canonical slot of the run covering ``pos`` (which must be in use)."""
    t = 0
    b = pos >> 6
    for bb in range(b):
        t += popcount(runends[bb])
    if pos & 63:
        t += popcount(runends[b] & low_mask(pos & 63))
    t += 1
    for bb in range(occ.shape[0]):
        c = popcount(occ[bb])
        if c >= t:
            return 64 * bb + select(occ[bb], t)
        t -= c
    return -1


# ---------------------------------------------------------------- Python wrapper


class RsqfTable:
    """A quotient-filter table with ``n_slots`` canonical slots.

    This is the raw substrate: it stores opaque slot payloads grouped in runs by
    canonical slot and knows nothing about what the payload bits mean.  There is
    no wrap-around; ``extra_slots`` physical slots follow the last canonical one.
    """

    def __init__(self, n_slots: int, slot_width: int, seed: int = 0, extra_slots: int | None = None):
        if n_slots < 1:
            raise ValueError("n_slots must be positive")
        if extra_slots is None:
            extra_slots = overflow_slots(n_slots)
        if extra_slots < 0:
            raise ValueError("extra_slots must be non-negative")
        if not 1 <= slot_width <= MAX_SLOT_WIDTH:
            raise ValueError(f"slot_width must be in [1, {MAX_SLOT_WIDTH}]")
        self.n_slots = int(n_slots)
        self.slot_width = int(slot_width)
        self.seed = int(seed)
        self.extra_slots = int(extra_slots)
        self.n_physical = self.n_slots + self.extra_slots
        nb = max(1, -(-self.n_physical // BLOCK))
        self.occupieds = np.zeros(nb, np.uint64)
        self.runends = np.zeros(nb, np.uint64)
        self.offsets = np.zeros(nb, np.uint8)
        self.payload = np.zeros(nb * self.slot_width, np.uint64)
        # [stored slots, stored items]; kernels update it in place
        self.counters = np.zeros(2, np.int64)

    @property
    def stored_slots(self) -> int:
        return int(self.counters[0])

    @property
    def n_blocks(self) -> int:
        return self.occupieds.shape[0]

    @property
    def nbytes(self) -> int:
        return self.occupieds.nbytes + self.runends.nbytes + self.offsets.nbytes + self.payload.nbytes

    def _arrays(self):
        return self.occupieds, self.runends, self.offsets

    def _check_slot(self, i: int) -> None:
        if not 0 <= i < self.n_physical:
            raise IndexError(f"slot {i} out of range")

    def _check_home(self, h: int) -> None:
        if not 0 <= h < self.n_slots:
            raise IndexError(f"canonical slot {h} out of range")

    def get_slot(self, i: int) -> int:
        self._check_slot(i)
        return int(get_slot(self.payload, self.slot_width, i))

    def is_occupied(self, i: int) -> bool:
        self._check_slot(i)
        return bool(get_bit(self.occupieds, i))

    def is_runend(self, i: int) -> bool:
        self._check_slot(i)
        return bool(get_bit(self.runends, i))

    def offset(self, block: int) -> int:
        """True (unsaturated) offset of ``block``."""
        return int(true_offset(self.occupieds, self.runends, self.offsets, block))

    def is_used(self, i: int) -> bool:
        self._check_slot(i)
        return run_end(*self._arrays(), i) >= i

    def locate_run(self, home: int) -> tuple[int, int] | None:
        """Physical ``(start, end)`` of the run for ``home``, or None if empty."""
        self._check_home(home)
        if not get_bit(self.occupieds, home):
            return None
        arrays = self._arrays()
        return int(run_start(*arrays, home)), int(run_end(*arrays, home))

    def new_run_position(self, home: int) -> int:
        return max(home, int(run_end(*self._arrays(), home)) + 1) if home else 0

    def insert_slot(self, home: int, pos: int, value: int) -> None:
        self._check_home(home)
        loc = self.locate_run(home)
        if loc is None:
            if pos != self.new_run_position(home):
                raise ValueError("a new run must start at its layout position")
        elif not loc[0] <= pos <= loc[1] + 1:
            raise ValueError("position outside the run")
        if not insert_slot(*self._arrays(), self.payload, self.n_physical, self.slot_width, home, pos, np.uint64(value)):
            raise TableFullError("no empty slot to shift into")
        self.counters[0] += 1

    def append_to_run(self, home: int, value: int) -> int:
        """Append ``value`` at the end of the run of ``home``; returns its position."""
        loc = self.locate_run(home)
        pos = self.new_run_position(home) if loc is None else loc[1] + 1
        self.insert_slot(home, pos, value)
        return pos

    def delete_slot(self, pos: int) -> int:
        """Remove the slot at ``pos`` and return its payload."""
        if not self.is_used(pos):
            raise KeyError(f"slot {pos} is empty")
        home = int(home_of(self.occupieds, self.runends, pos))
        value = self.get_slot(pos)
        delete_slot(*self._arrays(), self.payload, self.n_physical, self.slot_width, home, pos)
        self.counters[0] -= 1
        return value

    def runs(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return list_runs(self.occupieds, self.runends, self.n_physical)

    def iterate(self) -> Iterator[tuple[int, int]]:
        """Yield ``(canonical_slot, payload)`` for every stored slot in layout order."""
        homes, starts, ends = self.runs()
        for h, s, e in zip(homes.tolist(), starts.tolist(), ends.tolist()):
            for p in range(s, e + 1):
                yield h, int(get_slot(self.payload, self.slot_width, p))

    def clear(self) -> None:
        for a in (self.occupieds, self.runends, self.offsets, self.payload):
            a.fill(0)
        self.counters.fill(0)

    # ------------------------------------------------------------ serialization

    def _block_dtype(self) -> np.dtype:
        return np.dtype(
            [("occupieds", "<u8"), ("runends", "<u8"), ("offset", "u1"), ("payload", "<u8", (self.slot_width,))]
        )

    def to_bytes(self) -> bytes:
        blocks = np.zeros(self.n_blocks, self._block_dtype())
        blocks["occupieds"] = self.occupieds
        blocks["runends"] = self.runends
        blocks["offset"] = self.offsets
        blocks["payload"] = self.payload.reshape(self.n_blocks, self.slot_width)
        head = _HEADER.pack(_MAGIC, _VERSION, self.n_slots, self.extra_slots, self.slot_width, self.seed)
        return head + blocks.tobytes()

    @classmethod
    def from_bytes(cls, data: bytes | memoryview) -> RsqfTable:
        table, used = cls.read_from(data)
        if used != len(data):
            raise ValueError("trailing bytes after table")
        return table

    @classmethod
    def read_from(cls, data: bytes | memoryview, at: int = 0) -> tuple[RsqfTable, int]:
        """Parse a table starting at byte ``at``; returns ``(table, end_position)``."""
        if len(data) - at < _HEADER.size:
            raise ValueError("truncated table header")
        magic, version, n, extra, w, seed = _HEADER.unpack_from(data, at)
        if magic != _MAGIC or version != _VERSION:
            raise ValueError("not a serialized table")
        table = cls(n, w, seed, extra)
        dt = table._block_dtype()
        start = at + _HEADER.size
        end = start + dt.itemsize * table.n_blocks
        if end > len(data):
            raise ValueError("truncated table body")
        blocks = np.frombuffer(data, dt, count=table.n_blocks, offset=start)
        table.occupieds[:] = blocks["occupieds"]
        table.runends[:] = blocks["runends"]
        table.offsets[:] = blocks["offset"]
        table.payload[:] = blocks["payload"].reshape(-1)
        _, starts, ends = table.runs()
        table.counters[0] = int((ends - starts + 1).sum())
        return table, end
