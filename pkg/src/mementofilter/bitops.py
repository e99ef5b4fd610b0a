"""Word-level rank/select on 64-bit bitmaps.

The kernels lower to LLVM ``ctpop``/``cttz``/``ctlz`` so they compile to single
instructions where the CPU has them.  Positions are 0-indexed; ``select`` takes a
1-indexed rank (the k-th set bit) and returns 64 when the word has fewer than k
set bits.
"""

from __future__ import annotations

import numpy as np
from numba import njit, types
from numba.extending import intrinsic

U0 = np.uint64(0)
U1 = np.uint64(1)
ALL_ONES = np.uint64(0xFFFFFFFFFFFFFFFF)


@intrinsic
def _ctpop(typingctx, x):
    sig = types.uint64(types.uint64)

    def codegen(context, builder, signature, args):
        return builder.ctpop(args[0])

    return sig, codegen


@intrinsic
def _cttz(typingctx, x):
    sig = types.uint64(types.uint64)

    def codegen(context, builder, signature, args):
        return builder.cttz(args[0], context.get_constant(types.boolean, False))

    return sig, codegen


@intrinsic
def _ctlz(typingctx, x):
    sig = types.uint64(types.uint64)

    def codegen(context, builder, signature, args):
        return builder.ctlz(args[0], context.get_constant(types.boolean, False))

    return sig, codegen


@njit(cache=True, inline="always")
def popcount(x):
    return np.int64(_ctpop(np.uint64(x)))


@njit(cache=True, inline="always")
def trailing_zeros(x):
    return np.int64(_cttz(np.uint64(x)))


@njit(cache=True, inline="always")
def bit_length(x):
    """Number of significant bits; 0 for 0."""
    return 64 - np.int64(_ctlz(np.uint64(x)))


@njit(cache=True, inline="always")
def mask_upto(i):
    # bits 0..i inclusive; i == 63 wraps to all ones
    return (np.uint64(2) << np.uint64(i)) - U1


@njit(cache=True, inline="always")
def low_mask(nbits):
    if nbits >= 64:
        return ALL_ONES
    return (U1 << np.uint64(nbits)) - U1


@njit(cache=True, inline="always")
def rank(word, i):
    return popcount(np.uint64(word) & mask_upto(i))


@njit(cache=True, inline="always")
def select(word, k):
    x = np.uint64(word)
    if popcount(x) < k:
        return 64
    for _ in range(k - 1):
        x &= x - U1
    return trailing_zeros(x)


def rank64(word: int, i: int) -> int:
    """Count set bits of ``word`` at positions ``0..i`` inclusive."""
    if not 0 <= i < 64:
        raise ValueError("bit index must be in [0, 64)")
    return int(rank(np.uint64(word), i))


def select64(word: int, k: int) -> int | None:
    """Position of the k-th (1-indexed) set bit of ``word``, or None."""
    if k < 1:
        raise ValueError("select rank is 1-indexed")
    pos = int(select(np.uint64(word), k))
    return None if pos == 64 else pos
