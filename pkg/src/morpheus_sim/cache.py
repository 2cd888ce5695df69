"""Set-associative write-back, write-allocate cache with 12-bit counter LRU.

Every access to a set resets the touched block's counter to ``0xfff`` and
decrements the counters of all other blocks in that set, saturating at zero.
The victim is the valid block with the smallest counter.

Counters are not stored directly.  Each set keeps an access clock and each
way the clock value of its last access; the counter is then
``max(0, 0xfff - (clock - stamp))``, which is exactly the decrement-all
scheme without touching every way on every access.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

COUNTER_MAX = 0xFFF


class Tiebreak(enum.Enum):
    WAY = "way"  # lowest way index among equal counters
    AGE = "age"  # oldest last access among equal counters (true LRU)


class AccessOp(enum.Enum):
    READ = "read"
    WRITE = "write"


@dataclass(frozen=True)
class CacheGeometry:
    total_bytes: int
    ways: int
    block_bytes: int = 128

    def __post_init__(self):
        if self.total_bytes <= 0 or self.ways <= 0 or self.block_bytes <= 0:
            raise ValueError("cache geometry fields must be positive")
        if self.total_bytes % (self.ways * self.block_bytes):
            raise ValueError(
                f"{self.total_bytes} B is not a multiple of {self.ways} ways x {self.block_bytes} B"
            )

    @property
    def set_count(self) -> int:
        return self.total_bytes // (self.ways * self.block_bytes)


@dataclass(frozen=True, slots=True)
class CacheBlockMeta:
    tag: int | None
    valid: bool
    dirty: bool
    lru_counter: int


@dataclass(frozen=True, slots=True)
class Victim:
    tag: int
    dirty: bool


@dataclass(frozen=True, slots=True)
class AccessResult:
    hit: bool
    way: int
    victim: Victim | None = None


@dataclass(frozen=True, slots=True)
class Peek:
    present: bool
    dirty: bool = False


class CacheSet:
    """One set.  Tags are opaque integers (callers use block numbers)."""

    __slots__ = ("tags", "dirty", "stamps", "clock", "tiebreak")

    def __init__(self, ways: int, tiebreak: Tiebreak = Tiebreak.WAY):
        if ways < 0:
            raise ValueError("ways must be >= 0")
        self.tags: list[int | None] = [None] * ways
        self.dirty = [False] * ways
        self.stamps = [0] * ways
        self.clock = 0
        self.tiebreak = tiebreak

    @property
    def ways(self) -> int:
        return len(self.tags)

    @property
    def occupancy(self) -> int:
        return len(self.tags) - self.tags.count(None)

    def counter(self, way: int) -> int:
        if self.tags[way] is None:
            return 0
        return max(0, COUNTER_MAX - (self.clock - self.stamps[way]))

    def meta(self, way: int) -> CacheBlockMeta:
        tag = self.tags[way]
        return CacheBlockMeta(tag, tag is not None, self.dirty[way], self.counter(way))

    def lookup(self, tag: int) -> int | None:
        """Lowest valid way holding ``tag`` (no state change)."""
        try:
            return self.tags.index(tag)
        except ValueError:
            return None

    def touch(self, way: int, write: bool = False) -> None:
        self.clock += 1
        self.stamps[way] = self.clock
        if write:
            self.dirty[way] = True

    def _lru_key(self, way: int):
        age = self.clock - self.stamps[way]
        counter = COUNTER_MAX - age if age < COUNTER_MAX else 0
        if self.tiebreak is Tiebreak.WAY:
            return (counter, way)
        return (counter, -age)

    def lru_way(self) -> int | None:
        """Valid way with the smallest counter, or None if the set is empty."""
        valid = [w for w, t in enumerate(self.tags) if t is not None]
        if not valid:
            return None
        return min(valid, key=self._lru_key)

    def free_way(self) -> int | None:
        try:
            return self.tags.index(None)
        except ValueError:
            return None

    def invalidate(self, way: int) -> Victim:
        victim = Victim(self.tags[way], self.dirty[way])
        self.tags[way] = None
        self.dirty[way] = False
        return victim

    def fill(self, way: int, tag: int, dirty: bool, stamp: int | None = None) -> None:
        """Install ``tag``; ``stamp`` re-places a block keeping its recency."""
        self.tags[way] = tag
        self.dirty[way] = dirty
        if stamp is None:
            self.touch(way)
        else:
            self.stamps[way] = stamp

    def access(self, tag: int, write: bool) -> AccessResult:
        way = self.lookup(tag)
        if way is not None:
            self.touch(way, write)
            return AccessResult(True, way)
        victim = None
        way = self.free_way()
        if way is None:
            way = self.lru_way()
            if way is None:
                raise ValueError("cannot allocate in a zero-way set")
            victim = self.invalidate(way)
        self.fill(way, tag, write)
        return AccessResult(False, way, victim)

    def resize(self, new_ways: int) -> list[Victim]:
        """Change associativity, evicting lowest-counter blocks when shrinking.

        Survivors keep their relative way order and counters.
        """
        if new_ways < 0:
            raise ValueError("new_ways must be >= 0")
        evicted: list[Victim] = []
        while self.occupancy > new_ways:
            evicted.append(self.invalidate(self.lru_way()))
        if new_ways < self.ways:
            keep = [w for w, t in enumerate(self.tags) if t is not None]
            self.tags = [self.tags[w] for w in keep]
            self.dirty = [self.dirty[w] for w in keep]
            self.stamps = [self.stamps[w] for w in keep]
        grow = new_ways - self.ways
        self.tags.extend([None] * grow)
        self.dirty.extend([False] * grow)
        self.stamps.extend([0] * grow)
        return evicted


class Cache:
    """Multi-set cache addressed by 128 B-aligned byte addresses."""

    def __init__(self, geometry: CacheGeometry, tiebreak: Tiebreak = Tiebreak.WAY):
        self.geometry = geometry
        self.block_bytes = geometry.block_bytes
        self.sets = [CacheSet(geometry.ways, tiebreak) for _ in range(geometry.set_count)]

    def set_index(self, block_address: int) -> int:
        return (block_address // self.block_bytes) % len(self.sets)

    def _check(self, block_address: int) -> int:
        if block_address % self.block_bytes:
            raise ValueError(f"{block_address:#x} is not {self.block_bytes} B aligned")
        return block_address // self.block_bytes

    def access(self, block_address: int, op: AccessOp, set_index: int | None = None) -> AccessResult:
        block = self._check(block_address)
        if set_index is None:
            set_index = block % len(self.sets)
        res = self.sets[set_index].access(block, op is AccessOp.WRITE)
        if res.victim is not None:
            # report victims by byte address
            return AccessResult(False, res.way, Victim(res.victim.tag * self.block_bytes, res.victim.dirty))
        return res

    def peek(self, block_address: int, set_index: int | None = None) -> Peek:
        block = self._check(block_address)
        if set_index is None:
            set_index = block % len(self.sets)
        cset = self.sets[set_index]
        way = cset.lookup(block)
        if way is None:
            return Peek(False)
        return Peek(True, cset.dirty[way])

    def resize_ways(self, set_index: int, new_ways: int) -> list[tuple[int, bool]]:
        victims = self.sets[set_index].resize(new_ways)
        return [(v.tag * self.block_bytes, v.dirty) for v in victims]

    def resident_blocks(self) -> int:
        return sum(s.occupancy for s in self.sets)
