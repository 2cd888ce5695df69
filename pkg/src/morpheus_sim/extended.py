"""Functional model of the extended LLC built from cache-mode SMs.

Each helper-kernel warp owns one fully associative set, stored either in
the SM's register file or in its L1.  Register-file sets may hold BDI
compressed blocks, in which case their effective associativity follows the
per-set level allocation.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Callable

from .addressing import IDENTITY_HASH, MIXED_HASH, AddressMap, OutOfPartition
from .bdi import (
    CompressedBlock,
    EpochCounters,
    Level,
    LevelAllocation,
    compress,
    decompress,
    epoch_update,
    fits,
)
from .cache import CacheSet, Tiebreak
from .errors import ConfigError
from .memory import BackingStore, apply_request
from .trace import MemoryRequest

KIB = 1024

# Registers per thread kept back for helper-kernel execution, by warp count.
DEFAULT_AUX_REGISTERS: tuple[tuple[int, int], ...] = ((1, 17), (8, 17), (16, 16), (32, 14), (48, 10))

__all__ = [
    "Backing",
    "CapacityReport",
    "ExtLlcConfig",
    "ExtendedLlc",
    "ExtendedSet",
    "InvalidConfig",
    "LookupResult",
    "OutOfPartition",
    "ServiceOutcome",
    "SetBusy",
    "SetLocation",
    "capacity_bytes",
    "fill",
    "service",
    "tag_lookup",
]


class InvalidConfig(ConfigError):
    pass


class SetBusy(RuntimeError):
    """A set was asked to serve a request while still serving another."""


class Backing(enum.Enum):
    REGISTER_FILE = "rf"
    L1 = "l1"
    SHARED_MEMORY = "shared"  # reserved: unified with L1 on the modeled GPU


def aux_registers(warps: int, table: tuple[tuple[int, int], ...] = DEFAULT_AUX_REGISTERS) -> int:
    """Reserved registers per thread, linearly interpolated between table rows."""
    pts = sorted(table)
    if warps <= pts[0][0]:
        return pts[0][1]
    for (w0, r0), (w1, r1) in zip(pts, pts[1:]):
        if warps <= w1:
            return round(r0 + (r1 - r0) * (warps - w0) / (w1 - w0))
    return pts[-1][1]


@dataclass(frozen=True)
class ExtLlcConfig:
    cache_mode_sms: tuple[int, ...] = ()
    warps_per_sm: int = 48
    rf_warps: int = 32
    l1_warps: int = 16
    blocks_per_rf_set: int = 32  # used when the auxiliary reservation model is off
    block_bytes: int = 128
    l1_bytes_per_sm: int = 128 * KIB
    rf_bytes_per_sm: int = 256 * KIB
    total_sms: int = 68
    aux_reservation: bool = True
    aux_table: tuple[tuple[int, int], ...] = DEFAULT_AUX_REGISTERS
    max_registers_per_thread: int = 256
    compression: bool = False
    set_hash: str = IDENTITY_HASH

    def validate(self) -> None:
        if min(self.rf_warps, self.l1_warps) < 0 or self.warps_per_sm <= 0:
            raise InvalidConfig("warp counts must be non-negative")
        if self.rf_warps + self.l1_warps > self.warps_per_sm:
            raise InvalidConfig(
                f"rf_warps + l1_warps = {self.rf_warps + self.l1_warps} exceeds warps_per_sm = {self.warps_per_sm}"
            )
        if self.cache_mode_sms and self.rf_warps + self.l1_warps == 0:
            raise InvalidConfig("cache-mode SMs need at least one helper warp")
        if len(set(self.cache_mode_sms)) != len(self.cache_mode_sms):
            raise InvalidConfig("duplicate cache-mode SM id")
        if any(not 0 <= sm < self.total_sms for sm in self.cache_mode_sms):
            raise InvalidConfig(f"cache-mode SM ids must lie in [0, {self.total_sms})")
        if 4 * len(self.cache_mode_sms) > 3 * self.total_sms:
            raise InvalidConfig(
                f"{len(self.cache_mode_sms)} cache-mode SMs exceeds the bound of 75% of "
                f"{self.total_sms} SMs ({3 * self.total_sms // 4}) that may run in cache mode"
            )
        if self.block_bytes <= 0 or self.block_bytes % 4:
            raise InvalidConfig("block_bytes must be a positive multiple of 4")
        if self.l1_warps and self.l1_bytes_per_sm < self.l1_warps * self.block_bytes:
            raise InvalidConfig("L1 too small for one block per L1 warp")
        if self.set_hash not in (IDENTITY_HASH, MIXED_HASH):
            raise InvalidConfig(f"unknown extended set hash {self.set_hash!r}")
        if self.rf_warps and self.rf_blocks_per_set() <= 0:
            raise InvalidConfig("no register-file space left for data blocks")

    @property
    def warps_used(self) -> int:
        return self.rf_warps + self.l1_warps

    def rf_blocks_per_set(self) -> int:
        if not self.rf_warps:
            return 0
        if not self.aux_reservation:
            return self.blocks_per_rf_set
        regs = self.rf_bytes_per_sm // self.block_bytes // self.rf_warps
        regs = min(self.max_registers_per_thread, regs)
        return regs - aux_registers(self.rf_warps, self.aux_table)

    def l1_blocks_per_set(self) -> int:
        if not self.l1_warps:
            return 0
        return self.l1_bytes_per_sm // self.l1_warps // self.block_bytes


@dataclass(frozen=True)
class CapacityReport:
    rf_bytes_per_sm: int
    l1_bytes_per_sm: int
    per_sm_bytes: int
    total_bytes: int
    rf_blocks_per_set: int
    l1_blocks_per_set: int
    total_sets: int


def capacity_bytes(cfg: ExtLlcConfig) -> CapacityReport:
    cfg.validate()
    rf_blocks = cfg.rf_blocks_per_set()
    l1_blocks = cfg.l1_blocks_per_set()
    rf = cfg.rf_warps * rf_blocks * cfg.block_bytes
    l1 = cfg.l1_warps * l1_blocks * cfg.block_bytes
    n = len(cfg.cache_mode_sms)
    return CapacityReport(rf, l1, rf + l1, n * (rf + l1), rf_blocks, l1_blocks, n * cfg.warps_used)


@dataclass(frozen=True, slots=True)
class LookupResult:
    hit: bool
    block_index: int | None = None


@dataclass(frozen=True, slots=True)
class Eviction:
    tag: int
    dirty: bool
    data: bytes


class OutcomeKind(enum.Enum):
    HIT_DATA = "hit_data"
    MISS_FILLED = "miss_filled"
    ATOMIC_RESULT = "atomic_result"


@dataclass(frozen=True)
class ServiceOutcome:
    kind: OutcomeKind
    hit: bool
    value: int | None
    writebacks: tuple[int, ...] = ()  # byte addresses written to DRAM
    evictions: int = 0
    bypassed: bool = False  # miss not allocated: no slot can hold the block
    dropped: bool = False  # rewritten block no longer fits and went to DRAM


class ExtendedSet:
    """One warp-owned, fully associative extended LLC set."""

    def __init__(
        self,
        set_id: int,
        owner: tuple[int, int],
        backing: Backing,
        blocks: int,
        compression: bool = False,
        block_bytes: int = 128,
    ):
        if backing is Backing.SHARED_MEMORY:
            raise InvalidConfig("shared-memory backing is folded into L1")
        self.set_id = set_id
        self.owner = owner
        self.backing = backing
        self.block_bytes = block_bytes
        self.compressed = compression and backing is Backing.REGISTER_FILE
        self.alloc = LevelAllocation.uncompressed_only(blocks) if backing is Backing.REGISTER_FILE else None
        # true-LRU tiebreak: keeps the predictor's LRU assumption exact
        self.lru = CacheSet(blocks, Tiebreak.AGE)
        self.data: dict[int, bytes | CompressedBlock] = {}
        self.natural: dict[int, Level] = {}
        self.stored: dict[int, int] = {}  # slot level per tag
        self.used = [0, 0, 0]
        self.counters = EpochCounters()
        self.busy = False
        self.on_forget: Callable[[], None] | None = None
        self.bypasses = 0
        self.drops = 0

    @property
    def capacity(self) -> int:
        return self.lru.ways

    @property
    def occupancy(self) -> int:
        return len(self.data)

    def __contains__(self, tag: int) -> bool:
        return tag in self.data

    def tag_lookup(self, tag: int) -> LookupResult:
        way = self.lru.lookup(tag)
        if way is None:
            return LookupResult(False)
        self.lru.touch(way)
        return LookupResult(True, way)

    def read(self, tag: int) -> bytes:
        d = self.data[tag]
        return decompress(d) if self.compressed else d

    # -- placement -------------------------------------------------------

    def _evict(self, way: int, out: list[Eviction]) -> None:
        if way != self.lru.lru_way() and self.on_forget is not None:
            # out of LRU order: the predictor must not count this block
            self.on_forget()
        v = self.lru.invalidate(way)
        out.append(Eviction(v.tag, v.dirty, self.read(v.tag)))
        self._forget(v.tag)

    def _forget(self, tag: int) -> None:
        del self.data[tag]
        if self.compressed:
            self.used[self.stored.pop(tag)] -= 1
            del self.natural[tag]

    def _place(self, tag: int, block: bytes, dirty: bool, out: list[Eviction], stamp: int | None = None) -> bool:
        """Install a non-resident block, evicting at most one block.

        Returns False when no slot can ever hold it (block bypassed).
        """
        if not self.compressed:
            if self.lru.ways == 0:
                return False
            way = self.lru.free_way()
            if way is None:
                self._evict(self.lru.lru_way(), out)
                way = self.lru.free_way()
            self.lru.fill(way, tag, dirty, stamp)
            self.data[tag] = block
            return True
        cb = compress(block)
        nat = cb.level
        self.counters.observe(nat)
        a = self.alloc
        caps = (4 * a.high, 2 * a.low, a.uncompressed)
        used = self.used
        slot = next((lv for lv in range(nat, 3) if used[lv] < caps[lv]), None)
        if slot is None:
            if not any(caps[nat:]):
                return False
            # LRU block among those sitting in slots this block may use
            lru = self.lru
            victim = min(
                (w for w, t in enumerate(lru.tags) if t is not None and self.stored[t] >= nat),
                key=lru._lru_key,
            )
            slot = self.stored[lru.tags[victim]]
            self._evict(victim, out)
        self.lru.fill(self.lru.free_way(), tag, dirty, stamp)
        self.data[tag] = cb
        self.natural[tag] = nat
        self.stored[tag] = slot
        self.used[slot] += 1
        return True

    def insert(self, tag: int, block: bytes, dirty: bool) -> tuple[bool, list[Eviction]]:
        out: list[Eviction] = []
        ok = self._place(tag, block, dirty, out)
        if not ok:
            self.bypasses += 1
        return ok, out

    def update(self, tag: int, block: bytes) -> tuple[bool, list[Eviction]]:
        """Rewrite a resident block.  Returns ``(still_resident, evictions)``."""
        way = self.lru.lookup(tag)
        self.lru.dirty[way] = True
        if not self.compressed:
            self.data[tag] = block
            return True, []
        cb = compress(block)
        nat = cb.level
        if nat <= self.stored[tag]:
            self.counters.observe(nat)
            self.data[tag] = cb
            self.natural[tag] = nat
            return True, []
        # grew past its slot level: move it, keeping its recency
        stamp = self.lru.stamps[way]
        self.lru.invalidate(way)
        self._forget(tag)
        out: list[Eviction] = []
        if self._place(tag, block, True, out, stamp):
            return True, out
        self.drops += 1
        out.append(Eviction(tag, True, block))
        return False, out

    # -- compression epochs ---------------------------------------------

    def end_epoch(self) -> list[Eviction]:
        """Reallocate slots from the level mix of this epoch's insertions
        and of the blocks resident at its end.

        Shrinking evicts blocks oldest first until the survivors fit.
        """
        if not self.compressed:
            return []
        for lv in self.natural.values():
            self.counters.observe(lv)
        new, _ = epoch_update(self.counters, self.alloc)
        if new == self.alloc:
            return []
        out: list[Eviction] = []
        counts = [0, 0, 0]
        for lv in self.natural.values():
            counts[lv] += 1
        while not fits(tuple(counts), new):
            way = self.lru.lru_way()
            counts[self.natural[self.lru.tags[way]]] -= 1
            self._evict(way, out)
        self.alloc = new
        self._repack()
        self.lru.resize(new.capacity)
        return out

    def _repack(self) -> None:
        a = self.alloc
        caps = (4 * a.high, 2 * a.low, a.uncompressed)
        free = list(caps)
        natural = self.natural
        stored = self.stored
        for nat in (2, 1, 0):  # rigid blocks first
            for tag, lv in natural.items():
                if lv == nat:
                    slot = nat
                    while not free[slot]:
                        slot += 1
                    free[slot] -= 1
                    stored[tag] = slot
        self.used = [c - f for c, f in zip(caps, free)]

    def dirty_blocks(self) -> list[tuple[int, bytes]]:
        out = []
        for way, tag in enumerate(self.lru.tags):
            if tag is not None and self.lru.dirty[way]:
                out.append((tag, self.read(tag)))
        return out

    def check(self) -> None:
        """Assert internal consistency (used by tests and debug runs)."""
        tags = [t for t in self.lru.tags if t is not None]
        assert len(tags) == len(set(tags)), "duplicate tag in set"
        assert set(tags) == set(self.data), "metadata and data disagree"
        if self.alloc is not None:
            assert len(tags) <= self.alloc.capacity, "capacity law violated"
        if self.compressed:
            used = [0, 0, 0]
            for tag, lv in self.stored.items():
                assert lv >= self.natural[tag]
                used[lv] += 1
            assert used == self.used
            assert all(used[lv] <= self.alloc.block_capacity(lv) for lv in (0, 1, 2))


def tag_lookup(eset: ExtendedSet, tag: int) -> LookupResult:
    return eset.tag_lookup(tag)


def _write_back(memory: BackingStore, evictions: list[Eviction], block_bytes: int) -> tuple[int, ...]:
    out = []
    for ev in evictions:
        if ev.dirty:
            memory.write_block(ev.tag * block_bytes, ev.data)
            out.append(ev.tag * block_bytes)
    return tuple(out)


def service(
    eset: ExtendedSet,
    req: MemoryRequest,
    memory: BackingStore,
    record: Callable[[int], None] | None = None,
    hold: bool = False,
) -> ServiceOutcome:
    """Serve one request in place.

    ``record`` is called with the block number on every insertion and
    reuse.  With ``hold`` the set stays busy afterwards; the timing engine
    clears ``busy`` when the warp's service time has elapsed.
    """
    if eset.busy:
        raise SetBusy(f"set {eset.set_id} is already serving a request")
    eset.busy = True
    bb = eset.block_bytes
    tag = req.block_address // bb
    atomic = req.op.is_atomic
    kind = OutcomeKind.ATOMIC_RESULT if atomic else None
    if eset.tag_lookup(tag).hit:
        if record:
            record(tag)
        value, new = apply_request(eset.read(tag), req)
        resident, evicted = (True, []) if new is None else eset.update(tag, new)
        if not resident and eset.on_forget:
            eset.on_forget()
        wb = _write_back(memory, evicted, bb)
        outcome = ServiceOutcome(kind or OutcomeKind.HIT_DATA, True, value, wb, len(evicted), dropped=not resident)
    else:
        block = memory.read_block(req.block_address)
        value, new = apply_request(block, req)
        ok, evicted = eset.insert(tag, new if new is not None else block, new is not None)
        wb = _write_back(memory, evicted, bb)
        if ok:
            if record:
                record(tag)
        elif new is not None:
            memory.write_block(req.block_address, new)
            wb += (req.block_address,)
        outcome = ServiceOutcome(kind or OutcomeKind.MISS_FILLED, False, value, wb, len(evicted), bypassed=not ok)
    if not hold:
        eset.busy = False
    return outcome


def fill(
    eset: ExtendedSet,
    block_address: int,
    memory: BackingStore,
    record: Callable[[int], None] | None = None,
) -> tuple[bool, tuple[int, ...]]:
    """Install a block fetched on a predicted miss.

    Returns ``(inserted, writebacks)``; a block already resident is left
    untouched.
    """
    tag = block_address // eset.block_bytes
    if tag in eset:
        return False, ()
    ok, evicted = eset.insert(tag, memory.read_block(block_address), False)
    wb = _write_back(memory, evicted, eset.block_bytes)
    if ok and record:
        record(tag)
    return ok, wb


@dataclass(frozen=True, slots=True)
class SetLocation:
    set_id: int
    sm_id: int
    warp_id: int
    backing: Backing


@dataclass
class ExtendedLlc:
    """All extended sets of the GPU together with the address map."""

    cfg: ExtLlcConfig
    partitions: int = 10
    conv_sets_per_partition: int = 256
    conv_bytes_per_partition: int = 512 * KIB
    sets: list[ExtendedSet] = field(init=False)
    amap: AddressMap = field(init=False)
    capacity: CapacityReport = field(init=False)

    def __post_init__(self):
        self.capacity = capacity_bytes(self.cfg)
        cfg = self.cfg
        self.sets = []
        for i, sm in enumerate(cfg.cache_mode_sms):
            for w in range(cfg.warps_used):
                rf = w < cfg.rf_warps
                self.sets.append(
                    ExtendedSet(
                        i * cfg.warps_used + w,
                        (sm, w),
                        Backing.REGISTER_FILE if rf else Backing.L1,
                        self.capacity.rf_blocks_per_set if rf else self.capacity.l1_blocks_per_set,
                        cfg.compression,
                        cfg.block_bytes,
                    )
                )
        self.amap = AddressMap(
            self.partitions,
            self.conv_sets_per_partition,
            self.conv_bytes_per_partition,
            [s.capacity * cfg.block_bytes for s in self.sets],
            cfg.set_hash,
        )

    def location(self, set_id: int) -> SetLocation:
        w = self.cfg.warps_used
        warp = set_id % w
        backing = Backing.REGISTER_FILE if warp < self.cfg.rf_warps else Backing.L1
        return SetLocation(set_id, self.cfg.cache_mode_sms[set_id // w], warp, backing)

    def set_index(self, block_address: int) -> SetLocation:
        return self.location(self.amap.extended_set_of(block_address // self.cfg.block_bytes))
