"""Keepsake-box encoding.

All keys of a partition that land in the same slot with the same fingerprint share
one *box*: a sorted multiset of mementos.  A box occupies consecutive slots whose
value is ``(fingerprint << r) | memento``:

* one memento:   ``<fp, m1>``
* two mementos:  ``<fp, m1> <fp, m2>``
* more:          ``<fp, m1> <0, ml>`` followed by a bit stream holding a counter
  for ``l - 2`` and the mementos ``m2 .. m(l-1)``, each ``r`` bits, packed
  most-significant-first across whole slots and zero padded.

A zero fingerprint cannot be told apart from the escape marker, so such boxes (and
every box when ``r == 1``, where the counter cannot be written) store one
``<fp, m>`` slot per memento instead.  Boxes inside a run are ordered by
fingerprint, so a reader at a box start looks at the next slot: same fingerprint
means more mementos of this box, a smaller one means the escape, a larger one
means the next box.

The counter for ``c = l - 2`` is a single chunk when ``c < 2**r - 1``.  Otherwise
``k`` chunks equal to ``2**r - 1`` announce ``k + 1`` base-``(2**r - 1)`` digits,
with ``k = floor(log_{2**r-1} c)``.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np
from numba import njit

from .bitops import U0, low_mask
from .rsqf import get_slot, set_slot

SINGLE = 0
REPEAT = 1
ESCAPE = 2

LINEAR_SCAN_MAX = 8


# ---------------------------------------------------------------- counter


@njit(cache=True)
def counter_chunks(c, r):
    base = (1 << r) - 1
    if c < base:
        out = np.empty(1, np.int64)
        out[0] = c
        return out
    ndig = 0
    x = c
    while x > 0:
        ndig += 1
        x //= base
    out = np.empty(2 * ndig - 1, np.int64)
    for i in range(ndig - 1):
        out[i] = base
    x = c
    for i in range(2 * ndig - 2, ndig - 2, -1):
        out[i] = x % base
        x //= base
    return out


@njit(cache=True, inline="always")
def counter_len(c, r):
    base = (1 << r) - 1
    if c < base:
        return 1
    ndig = 0
    while c > 0:
        ndig += 1
        c //= base
    return 2 * ndig - 1


@njit(cache=True)
def stream_read(payload, w, base_slot, t, r):
    k = base_slot + t // w
    avail = w - t % w
    v = get_slot(payload, w, k)
    if r <= avail:
        return (v >> np.uint64(avail - r)) & low_mask(r)
    need = r - avail
    lo = get_slot(payload, w, k + 1) >> np.uint64(w - need)
    return ((v & low_mask(avail)) << np.uint64(need)) | lo


@njit(cache=True)
def read_counter(payload, w, r, base_slot):
    """Decode a counter at the head of a stream; returns ``(value, n_chunks)``."""
    top = (1 << r) - 1
    first = np.int64(stream_read(payload, w, base_slot, 0, r))
    if first < top:
        return first, 1
    k = 1
    while np.int64(stream_read(payload, w, base_slot, k * r, r)) == top:
        k += 1
    c = 0
    for i in range(k, 2 * k + 1):
        c = c * top + np.int64(stream_read(payload, w, base_slot, i * r, r))
    return c, 2 * k + 1


# ---------------------------------------------------------------- box layout


@njit(cache=True, inline="always")
def box_slots(count, r, w, repeat):
    if count <= 2 or repeat:
        return count
    c = count - 2
    bits = r * (counter_len(c, r) + c)
    return 2 + (bits + w - 1) // w


@njit(cache=True)
def encode_box(fp, mems, count, r, w, repeat, out):
    """Write the box ``(fp, mems[:count])`` into ``out``; returns the slot count."""
    fpv = np.uint64(fp) << np.uint64(r)
    if count <= 2 or repeat:
        for i in range(count):
            out[i] = fpv | np.uint64(mems[i])
        return count
    out[0] = fpv | np.uint64(mems[0])
    out[1] = np.uint64(mems[count - 1])
    ns = box_slots(count, r, w, False)
    for i in range(2, ns):
        out[i] = U0
    chunks = counter_chunks(count - 2, r)
    t = 0
    nvals = chunks.shape[0] + count - 2
    for idx in range(nvals):
        if idx < chunks.shape[0]:
            v = np.uint64(chunks[idx])
        else:
            v = np.uint64(mems[idx - chunks.shape[0] + 1])
        k = 2 + t // w
        avail = w - t % w
        if r <= avail:
            out[k] |= v << np.uint64(avail - r)
        else:
            need = r - avail
            out[k] |= v >> np.uint64(need)
            out[k + 1] |= (v & low_mask(need)) << np.uint64(w - need)
        t += r
    return ns


@njit(cache=True)
def box_info(payload, w, r, j, e):
    """Describe the box starting at slot ``j`` of a run ending at ``e``.

    Returns ``(fp, n_slots, count, kind, n_chunks)``.
    """
    shift = np.uint64(r)
    fp = get_slot(payload, w, j) >> shift
    if j == e:
        return fp, 1, 1, SINGLE, 0
    fp2 = get_slot(payload, w, j + 1) >> shift
    if fp2 == fp:
        k = j + 1
        while k < e and (get_slot(payload, w, k + 1) >> shift) == fp:
            k += 1
        return fp, k - j + 1, k - j + 1, REPEAT, 0
    if fp2 < fp:
        c, nch = read_counter(payload, w, r, j + 2)
        return fp, 2 + (r * (nch + c) + w - 1) // w, c + 2, ESCAPE, nch
    return fp, 1, 1, SINGLE, 0


@njit(cache=True, inline="always")
def box_memento(payload, w, r, j, kind, count, nch, idx):
    if kind != ESCAPE:
        return np.int64(get_slot(payload, w, j + idx) & low_mask(r))
    if idx == 0:
        return np.int64(get_slot(payload, w, j) & low_mask(r))
    if idx == count - 1:
        return np.int64(get_slot(payload, w, j + 1) & low_mask(r))
    return np.int64(stream_read(payload, w, j + 2, r * (nch + idx - 1), r))


@njit(cache=True)
def box_lower_bound(payload, w, r, j, kind, count, nch, x):
    """Index of the first memento >= x (``count`` if none)."""
    if count <= LINEAR_SCAN_MAX:
        for i in range(count):
            if box_memento(payload, w, r, j, kind, count, nch, i) >= x:
                return i
        return count
    lo = 0
    hi = count
    while lo < hi:
        mid = (lo + hi) >> 1
        if box_memento(payload, w, r, j, kind, count, nch, mid) < x:
            lo = mid + 1
        else:
            hi = mid
    return lo


@njit(cache=True)
def box_has_in_range(payload, w, r, j, kind, count, nch, lo, hi):
    first = box_memento(payload, w, r, j, kind, count, nch, 0)
    if first > hi:
        return False
    if first >= lo:
        return True
    last = box_memento(payload, w, r, j, kind, count, nch, count - 1)
    if last < lo:
        return False
    if last <= hi:
        return True
    i = box_lower_bound(payload, w, r, j, kind, count, nch, lo)
    return box_memento(payload, w, r, j, kind, count, nch, i) <= hi


@njit(cache=True)
def read_box(payload, w, r, j, kind, count, nch):
    out = np.empty(count, np.int64)
    for i in range(count):
        out[i] = box_memento(payload, w, r, j, kind, count, nch, i)
    return out


# ---------------------------------------------------------------- Python API


def encode_counter(c: int, r: int) -> list[int]:
    if c < 0:
        raise ValueError("counter must be non-negative")
    if r < 2:
        raise ValueError("counter needs at least 2-bit chunks")
    return [int(x) for x in counter_chunks(c, r)]


def decode_counter(chunks: Sequence[int], r: int) -> tuple[int, int]:
    """Decode a counter from its chunks; returns ``(value, chunks_consumed)``."""
    w = r
    payload = np.zeros(-(-len(chunks) * w // 64) + 1, np.uint64)
    for i, ch in enumerate(chunks):
        set_slot(payload, w, i, np.uint64(ch))
    c, used = read_counter(payload, w, r, 0)
    return int(c), int(used)


def encode_box_slots(fp: int, mementos: Sequence[int], r: int, fp_bits: int, repeat: bool | None = None) -> list[int]:
    """Slot values for one box.  ``repeat`` defaults to the fallback rule."""
    mems = np.array(sorted(mementos), np.int64)
    if mems.size == 0:
        raise ValueError("a box needs at least one memento")
    if mems[0] < 0 or mems[-1] >= 1 << r:
        raise ValueError("memento out of range")
    if not 0 <= fp < 1 << fp_bits:
        raise ValueError("fingerprint out of range")
    if repeat is None:
        repeat = fp == 0 or r == 1
    w = fp_bits + r
    out = np.zeros(mems.size + 4, np.uint64)
    ns = encode_box(np.uint64(fp), mems, mems.size, r, w, repeat, out)
    return [int(x) for x in out[:ns]]


def decode_box_slots(slots: Sequence[int], r: int, fp_bits: int) -> tuple[int, list[int], int]:
    """Decode the first box of ``slots`` (one run); returns ``(fp, mementos, used)``."""
    w = fp_bits + r
    payload = np.zeros(-(-(len(slots) + 1) * w // 64) + 1, np.uint64)
    for i, v in enumerate(slots):
        set_slot(payload, w, i, np.uint64(v))
    fp, ns, count, kind, nch = box_info(payload, w, r, 0, len(slots) - 1)
    return int(fp), [int(x) for x in read_box(payload, w, r, 0, kind, count, nch)], int(ns)
