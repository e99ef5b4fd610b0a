"""Key splitting and hashing.

A key is an unsigned integer of at most 64 bits.  Its low ``r`` bits are the
*memento*, the rest is the *prefix* and names the partition of ``2**r``
consecutive keys the key lives in.  Only prefixes are hashed.

The hash is the splitmix64 finalizer applied to ``prefix + (seed + 1) * golden``.
For a fixed seed it is a bijection on 64-bit words, so distinct prefixes never
share a full hash.  Three bit-identical implementations live here: plain Python
ints (reference), numpy (bulk paths) and numba (kernels).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

KEY_BITS = 64
KEY_MASK = (1 << KEY_BITS) - 1

_GOLDEN = 0x9E3779B97F4A7C15
_C1 = 0xBF58476D1CE4E5B9
_C2 = 0x94D049BB133111EB

_U_GOLDEN = np.uint64(_GOLDEN)
_U_C1 = np.uint64(_C1)
_U_C2 = np.uint64(_C2)
_U1 = np.uint64(1)


@dataclass(frozen=True)
class KeyParts:
    prefix: int
    memento: int


@dataclass(frozen=True)
class HashAddress:
    canonical_slot: int
    fingerprint: int


def memento_bits_for(max_range: int) -> int:
    """Memento width for ranges up to ``max_range`` keys: ceil(log2 R), at least 1."""
    if max_range < 1:
        raise ValueError("max_range must be >= 1")
    return max(1, (max_range - 1).bit_length())


def _check_key(key: int) -> None:
    if not 0 <= key <= KEY_MASK:
        raise ValueError(f"key {key} outside the 64-bit universe")


def split_key(key: int, r: int) -> KeyParts:
    _check_key(key)
    if not 1 <= r < KEY_BITS:
        raise ValueError("memento width must be in [1, 64)")
    return KeyParts(key >> r, key & ((1 << r) - 1))


def join_key(parts: KeyParts, r: int) -> int:
    if not 0 <= parts.memento < (1 << r):
        raise ValueError("memento does not fit in r bits")
    return (parts.prefix << r) | parts.memento


def pad_key(data: bytes, width_bits: int = KEY_BITS) -> int:
    """Map a variable-length byte key to a fixed-width big-endian integer.

    Shorter keys are right-padded with zero bytes and longer ones truncated, so the
    integer order matches lexicographic byte order up to the truncation point.
    """
    if width_bits % 8 or not 0 < width_bits <= KEY_BITS:
        raise ValueError("width_bits must be a multiple of 8 in (0, 64]")
    nbytes = width_bits // 8
    return int.from_bytes(data[:nbytes].ljust(nbytes, b"\0"), "big")


def mix64(x: int, seed: int = 0) -> int:
    z = (x + (seed + 1) * _GOLDEN) & KEY_MASK
    z = ((z ^ (z >> 30)) * _C1) & KEY_MASK
    z = ((z ^ (z >> 27)) * _C2) & KEY_MASK
    return z ^ (z >> 31)


def mix64_array(x: np.ndarray, seed: int = 0) -> np.ndarray:
    """Vectorised ``mix64`` over a uint64 array."""
    salt = np.uint64(((seed + 1) * _GOLDEN) & KEY_MASK)
    z = x.astype(np.uint64, copy=True)
    with np.errstate(over="ignore"):
        z += salt
        z ^= z >> np.uint64(30)
        z *= _U_C1
        z ^= z >> np.uint64(27)
        z *= _U_C2
        z ^= z >> np.uint64(31)
    return z


@njit(cache=True, inline="always")
def mix64_nb(x, salt):
    """Kernel variant; ``salt`` is ``(seed + 1) * golden`` precomputed as uint64."""
    z = np.uint64(x) + salt
    z = (z ^ (z >> np.uint64(30))) * _U_C1
    z = (z ^ (z >> np.uint64(27))) * _U_C2
    return z ^ (z >> np.uint64(31))


def seed_salt(seed: int) -> np.uint64:
    return np.uint64(((seed + 1) * _GOLDEN) & KEY_MASK)


def address_from_hash(h: int, n_slots: int, fingerprint_bits: int) -> HashAddress:
    """Low log2(n) bits pick the slot, the next ``fingerprint_bits`` bits the fingerprint."""
    if n_slots < 1 or n_slots & (n_slots - 1):
        raise ValueError("n_slots must be a power of two")
    q = n_slots.bit_length() - 1
    return HashAddress(h & (n_slots - 1), (h >> q) & ((1 << fingerprint_bits) - 1))


def address_of(prefix: int, n_slots: int, fingerprint_bits: int, seed: int = 0) -> HashAddress:
    return address_from_hash(mix64(prefix, seed), n_slots, fingerprint_bits)
