"""Ground truth for testing.

``ExactSet`` answers membership and range emptiness exactly.  ``decode_table``
reads a table's raw words with plain Python integers and rebuilds every box by a
linear scan; it deliberately shares nothing with the kernels it is checking.
"""

from __future__ import annotations

import bisect
from collections import deque
from dataclasses import dataclass, field

import numpy as np


@dataclass
class ExactSet:
    """Sorted multiset of integer keys."""

    keys: list[int] = field(default_factory=list)

    def insert(self, key: int) -> None:
        bisect.insort(self.keys, key)

    def delete(self, key: int) -> bool:
        i = bisect.bisect_left(self.keys, key)
        if i < len(self.keys) and self.keys[i] == key:
            del self.keys[i]
            return True
        return False

    def __contains__(self, key: int) -> bool:
        i = bisect.bisect_left(self.keys, key)
        return i < len(self.keys) and self.keys[i] == key

    def __len__(self) -> int:
        return len(self.keys)

    def range_nonempty(self, left: int, right: int) -> bool:
        i = bisect.bisect_left(self.keys, left)
        return i < len(self.keys) and self.keys[i] <= right


def ranges_nonempty(sorted_keys: np.ndarray, lefts: np.ndarray, rights: np.ndarray) -> np.ndarray:
    """Vectorised emptiness check against a sorted uint64 array."""
    idx = np.searchsorted(sorted_keys, lefts, side="left")
    hit = idx < sorted_keys.size
    out = np.zeros(lefts.size, bool)
    out[hit] = sorted_keys[idx[hit]] <= rights[hit]
    return out


def _bit(words: list[int], i: int) -> int:
    return (words[i >> 6] >> (i & 63)) & 1


def _slot(words: list[int], w: int, i: int) -> int:
    bit = i * w
    lo, s = divmod(bit, 64)
    v = words[lo] >> s
    if s + w > 64:
        v |= words[lo + 1] << (64 - s)
    return v & ((1 << w) - 1)


def scan_runs(table) -> list[tuple[int, int, list[int]]]:
    """Runs as ``(home, start, payloads)`` found by walking every slot once."""
    occ = [int(x) for x in table.occupieds]
    ends = [int(x) for x in table.runends]
    words = [int(x) for x in table.payload] + [0]
    pending: deque[int] = deque()
    runs: list[tuple[int, int, list[int]]] = []
    current = None
    for i in range(table.n_physical):
        if i < table.n_slots and _bit(occ, i):
            pending.append(i)
        if current is None:
            if not pending:
                continue
            current = (pending.popleft(), i, [])
            runs.append(current)
        current[2].append(_slot(words, table.slot_width, i))
        if _bit(ends, i):
            current = None
    if current is not None or pending:
        raise AssertionError("unterminated run")
    return runs


def _parse_run(payloads: list[int], fp_bits: int, r: int) -> list[tuple[int, list[int]]]:
    w = fp_bits + r
    pairs = [(v >> r, v & ((1 << r) - 1)) for v in payloads]
    boxes = []
    i = 0
    while i < len(pairs):
        fp, m = pairs[i]
        nxt = pairs[i + 1][0] if i + 1 < len(pairs) else None
        if nxt is None or nxt > fp:
            boxes.append((fp, [m]))
            i += 1
        elif nxt == fp:
            j = i
            while j < len(pairs) and pairs[j][0] == fp:
                j += 1
            boxes.append((fp, [p[1] for p in pairs[i:j]]))
            i = j
        else:
            bits = "".join(format(v, f"0{w}b") for v in payloads[i + 2 :])
            chunk = [int(bits[k : k + r], 2) for k in range(0, len(bits) - r + 1, r)]
            top = (1 << r) - 1
            if chunk[0] < top:
                c, used = chunk[0], 1
            else:
                k = 0
                while chunk[k] == top:
                    k += 1
                digits = chunk[k : 2 * k + 1]
                c = 0
                for d in digits:
                    c = c * top + d
                used = 2 * k + 1
            mids = chunk[used : used + c]
            boxes.append((fp, [m] + mids + [pairs[i + 1][1]]))
            nslots = -(-(used + c) * r // w)
            i += 2 + nslots
    return boxes


def decode_table(table, fp_bits: int, r: int) -> dict[tuple[int, int], list[int]]:
    """``{(canonical_slot, fingerprint): mementos}`` rebuilt from raw table words."""
    out: dict[tuple[int, int], list[int]] = {}
    for home, _, payloads in scan_runs(table):
        for fp, mems in _parse_run(payloads, fp_bits, r):
            if (home, fp) in out:
                raise AssertionError(f"duplicate box {(home, fp)}")
            out[(home, fp)] = mems
    return out


def check_invariants(table, fp_bits: int | None = None, r: int | None = None) -> None:
    """Raise AssertionError if the table layout is not canonical.

    Box order inside runs is only checked when ``fp_bits`` and ``r`` are given.
    """
    runs = scan_runs(table)
    cursor = 0
    last_end = {}
    for home, start, payloads in runs:
        if start != max(home, cursor):
            raise AssertionError(f"run {home} starts at {start}, expected {max(home, cursor)}")
        cursor = start + len(payloads)
        last_end[home] = cursor - 1
        if fp_bits is None or r is None:
            continue
        fps = [fp for fp, _ in _parse_run(payloads, fp_bits, r)]
        if fps != sorted(set(fps)):
            raise AssertionError(f"boxes of run {home} out of order: {fps}")
    for b in range(table.n_blocks):
        lim = 64 * b
        ends = [e for h, e in last_end.items() if h < lim]
        true = max(0, max(ends) - lim + 1) if ends else 0
        if int(table.offsets[b]) != min(true, 255):
            raise AssertionError(f"block {b} offset {int(table.offsets[b])}, expected {true}")
    words = [int(x) for x in table.payload] + [0]
    used = {s + k for _, s, p in runs for k in range(len(p))}
    for i in range(table.n_physical):
        if i not in used and _slot(words, table.slot_width, i):
            raise AssertionError(f"unused slot {i} not zeroed")
    stored = sum(len(p) for _, _, p in runs)
    if stored != table.stored_slots:
        raise AssertionError(f"stored slot count {table.stored_slots} != {stored}")
