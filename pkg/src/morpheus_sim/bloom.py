"""Per-set hit/miss predictor built from two alternating Bloom filters.

``bf1`` answers predictions and always contains every block resident in the
tracked set.  ``bf2`` collects the blocks used since the last swap; once it
holds at least ``assoc`` distinct blocks it is guaranteed to cover the whole
set (the set is LRU-managed), so ``bf1`` is dropped and ``bf2`` takes its
place.
"""

from __future__ import annotations

import enum
from functools import lru_cache
from typing import Callable

FILTER_BYTES = 32
DEFAULT_HASHES = 4
HASH_FAMILY = "splitmix64 finalizer, double hashing h1 + i*h2 over block numbers"

_M64 = (1 << 64) - 1
_SEED1 = 0x9E3779B97F4A7C15
_SEED2 = 0xD1B54A32D192ED03


def mix64(x: int) -> int:
    """splitmix64 output function (bijective 64-bit avalanche mixer)."""
    x &= _M64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _M64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _M64
    return x ^ (x >> 31)


@lru_cache(maxsize=1 << 18)
def probe_mask(key: int, bits: int, k: int) -> int:
    h1 = mix64(key ^ _SEED1)
    h2 = mix64(key ^ _SEED2) | 1
    mask = 0
    for i in range(k):
        mask |= 1 << ((h1 + i * h2) % bits)
    return mask


class BloomFilter:
    __slots__ = ("nbits", "k", "bits")

    def __init__(self, nbits: int = FILTER_BYTES * 8, k: int = DEFAULT_HASHES):
        if nbits <= 0 or k <= 0:
            raise ValueError("Bloom filter needs positive size and hash count")
        self.nbits = nbits
        self.k = k
        self.bits = 0

    @property
    def size_bytes(self) -> int:
        return (self.nbits + 7) // 8

    def add(self, key: int) -> bool:
        """Insert ``key``; return whether it was already reported present."""
        m = probe_mask(key, self.nbits, self.k)
        present = self.bits & m == m
        self.bits |= m
        return present

    def __contains__(self, key: int) -> bool:
        m = probe_mask(key, self.nbits, self.k)
        return self.bits & m == m

    def clear(self) -> None:
        self.bits = 0

    def popcount(self) -> int:
        return bin(self.bits).count("1")


class Prediction(enum.Enum):
    HIT = "predict_hit"
    MISS = "predict_miss"


class PredictorSet:
    """BF1/BF2 pair for one extended set.

    ``assoc`` is either a fixed associativity or a zero-argument callable
    returning the set's current capacity, so a set that grows through
    compression raises the swap threshold immediately.
    """

    __slots__ = ("bf1", "bf2", "n", "_assoc", "swaps")

    def __init__(self, assoc: int | Callable[[], int], nbits: int = FILTER_BYTES * 8,
                 k: int = DEFAULT_HASHES):
        self.bf1 = BloomFilter(nbits, k)
        self.bf2 = BloomFilter(nbits, k)
        self.n = 0
        self._assoc = assoc
        self.swaps = 0

    @property
    def assoc(self) -> int:
        a = self._assoc
        return a() if callable(a) else a

    def predict(self, key: int) -> Prediction:
        return Prediction.HIT if key in self.bf1 else Prediction.MISS

    def record_access(self, key: int) -> None:
        """Insertion into, or reuse of, ``key`` in the tracked set."""
        self.bf1.add(key)
        if not self.bf2.add(key):
            self.n += 1
        if self.n >= self.assoc:
            self.bf1.clear()
            self.bf1, self.bf2 = self.bf2, self.bf1
            self.n = 0
            self.swaps += 1

    def forget(self) -> None:
        """A recently used block left the set out of LRU order.

        The block stays in both filters (no false negatives come from extra
        members), but it no longer counts towards the swap threshold.
        Undercounting ``n`` only postpones swaps.
        """
        if self.n:
            self.n -= 1


def storage_bytes(sets_per_partition: int, filter_bytes: int = FILTER_BYTES) -> int:
    """Bloom filter storage of one LLC partition (two filters per set)."""
    return filter_bytes * 2 * sets_per_partition
