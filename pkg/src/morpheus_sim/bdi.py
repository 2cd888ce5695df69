"""Base-Delta-Immediate compression of 128 B blocks and per-set level allocation.

A block is 32 little-endian 4-byte segments.  Segment 0 is the base; every
segment is stored as its signed two's-complement difference from the base.
High level keeps 1-byte deltas (32 B payload), Low keeps 2-byte deltas
(64 B), anything else stays uncompressed (128 B).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

BLOCK_BYTES = 128
SEGMENTS = 32
_M32 = 0xFFFFFFFF

# Lane-wise (SWAR) arithmetic on the block as one 1024-bit little-endian
# integer: 32 lanes of 32 bits, carries and borrows kept inside each lane.
_REP = sum(1 << (32 * i) for i in range(SEGMENTS))
_H = 0x80000000 * _REP
_NH = ((1 << (8 * BLOCK_BYTES)) - 1) ^ _H
_HI24 = 0xFFFFFF00 * _REP
_HI16 = 0xFFFF0000 * _REP
_FLIP7 = bytes(i ^ 0x80 for i in range(256))


def _lane_sub(a: int, b: int) -> int:
    return ((a | _H) - (b & _NH)) ^ ((a ^ ~b) & _H)


def _lane_add(a: int, b: int) -> int:
    return ((a & _NH) + (b & _NH)) ^ ((a ^ b) & _H)


class Level(enum.IntEnum):
    HIGH = 0
    LOW = 1
    UNCOMPRESSED = 2

    @property
    def payload_bytes(self) -> int:
        return (32, 64, 128)[self]

    @property
    def blocks_per_slot(self) -> int:
        return (4, 2, 1)[self]


class CompressionError(ValueError):
    pass


class WrongLength(CompressionError):
    pass


class MalformedPayload(CompressionError):
    pass


@dataclass(frozen=True, slots=True)
class CompressedBlock:
    level: Level
    base: int
    payload: bytes

    def __post_init__(self):
        if len(self.payload) != self.level.payload_bytes:
            raise MalformedPayload(
                f"{self.level.name} payload must be {self.level.payload_bytes} B, got {len(self.payload)}"
            )
        if not 0 <= self.base <= _M32:
            raise MalformedPayload("base must be a 4-byte segment")


def compress(block: bytes) -> CompressedBlock:
    if len(block) != BLOCK_BYTES:
        raise WrongLength(f"expected {BLOCK_BYTES} bytes, got {len(block)}")
    x = int.from_bytes(block, "little")
    base = x & _M32
    # biased deltas: a signed 8-bit delta d fits iff d + 0x80 < 0x100 per lane
    e = _lane_add(_lane_sub(x, base * _REP), 0x80 * _REP)
    if not e & _HI24:
        lanes = e.to_bytes(BLOCK_BYTES, "little")
        return CompressedBlock(Level.HIGH, base, lanes[0::4].translate(_FLIP7))
    e = _lane_add(e, 0x7F80 * _REP)
    if not e & _HI16:
        lanes = e.to_bytes(BLOCK_BYTES, "little")
        payload = bytearray(64)
        payload[0::2] = lanes[0::4]
        payload[1::2] = lanes[1::4].translate(_FLIP7)
        return CompressedBlock(Level.LOW, base, bytes(payload))
    return CompressedBlock(Level.UNCOMPRESSED, base, bytes(block))


def decompress(cb: CompressedBlock) -> bytes:
    level = cb.level
    p = cb.payload
    if len(p) != level.payload_bytes:
        raise MalformedPayload(f"{level.name} payload has {len(p)} bytes")
    if level is Level.UNCOMPRESSED:
        return bytes(p)
    lanes = bytearray(BLOCK_BYTES)
    if level is Level.HIGH:
        lanes[0::4] = p.translate(_FLIP7)
        bias = 0x80
    else:
        lanes[0::4] = p[0::2]
        lanes[1::4] = p[1::2].translate(_FLIP7)
        bias = 0x8000
    x = _lane_add(int.from_bytes(lanes, "little"), ((cb.base - bias) & _M32) * _REP)
    return x.to_bytes(BLOCK_BYTES, "little")


def classify(block: bytes) -> Level:
    return compress(block).level


# ---------------------------------------------------------------------------
# level allocation


@dataclass(frozen=True)
class LevelAllocation:
    """Register slots of one set assigned to each compression level."""

    high: int = 0
    low: int = 0
    uncompressed: int = 32

    def __post_init__(self):
        if min(self.high, self.low, self.uncompressed) < 0:
            raise ValueError("slot counts must be non-negative")

    @classmethod
    def uncompressed_only(cls, slots: int) -> "LevelAllocation":
        return cls(0, 0, slots)

    @property
    def slots(self) -> int:
        return self.high + self.low + self.uncompressed

    @property
    def capacity(self) -> int:
        return 4 * self.high + 2 * self.low + self.uncompressed

    def block_capacity(self, level: Level) -> int:
        return (4 * self.high, 2 * self.low, self.uncompressed)[level]

    def as_tuple(self) -> tuple[int, int, int]:
        return (self.high, self.low, self.uncompressed)


@dataclass
class EpochCounters:
    high: int = 0
    low: int = 0
    uncompressed: int = 0
    epoch_length_cycles: int = 10_000

    def observe(self, level: Level) -> None:
        if level is Level.HIGH:
            self.high += 1
        elif level is Level.LOW:
            self.low += 1
        else:
            self.uncompressed += 1

    def counts(self) -> tuple[int, int, int]:
        return (self.high, self.low, self.uncompressed)

    def total(self) -> int:
        return self.high + self.low + self.uncompressed

    def reset(self) -> None:
        self.high = self.low = self.uncompressed = 0


def apportion(counts: tuple[int, ...], total: int) -> tuple[int, ...]:
    """Largest-remainder (Hamilton) apportionment of ``total`` seats.

    Remainder ties go to the earlier entry.
    """
    weight = sum(counts)
    if weight <= 0:
        raise ValueError("cannot apportion over zero weight")
    quotas = [c * total for c in counts]
    seats = [q // weight for q in quotas]
    remainders = [q % weight for q in quotas]
    left = total - sum(seats)
    order = sorted(range(len(counts)), key=lambda i: (-remainders[i], i))
    for i in order[:left]:
        seats[i] += 1
    return tuple(seats)


def epoch_update(counters: EpochCounters, alloc: LevelAllocation) -> tuple[LevelAllocation, dict[Level, int]]:
    """Redistribute slots in proportion to the epoch's observed levels.

    Returns the new allocation and, per level, how many blocks of capacity
    that level lost (an upper bound on the evictions the shrink forces).
    Counters are reset.  An epoch with no observations leaves the
    allocation unchanged.
    """
    if counters.total() == 0:
        return alloc, {}
    new = LevelAllocation(*apportion(counters.counts(), alloc.slots))
    counters.reset()
    lost = {}
    for level in Level:
        drop = alloc.block_capacity(level) - new.block_capacity(level)
        if drop > 0:
            lost[level] = drop
    return new, lost


def fits(level_counts: tuple[int, int, int], alloc: LevelAllocation) -> bool:
    """Whether blocks with these natural levels can all be stored under ``alloc``.

    A block may sit in a slot of its own level or any less compressed level.
    Greedy placement (rigid blocks first, each in its densest legal level) is
    optimal here because a more compressible block fits everywhere a less
    compressible one does.
    """
    n_high, n_low, n_unc = level_counts
    free_unc = alloc.uncompressed - n_unc
    if free_unc < 0:
        return False
    free_low = 2 * alloc.low
    over_low = max(0, n_low - free_low)
    free_low -= n_low - over_low
    free_unc -= over_low
    if free_unc < 0:
        return False
    over_high = max(0, n_high - 4 * alloc.high)
    return over_high <= free_low + free_unc
