"""Per-partition LLC controller: routing, prediction and the query logic unit."""

from __future__ import annotations

import enum
from collections import deque
from dataclasses import dataclass, field

from .addressing import AddressSeparator
from .bloom import FILTER_BYTES, Prediction, PredictorSet
from .bloom import storage_bytes as bloom_storage_bytes
from .extended import ExtendedLlc, InvalidConfig
from .memory import BackingStore, apply_request
from .trace import MemoryRequest, Op

WARP_STATUS_ROWS = 256

# Query logic storage per partition (bytes).
WST_ROW_BYTES = 8  # tag, origin, busy, op, result, buffer pointer
REQUEST_QUEUE_ENTRIES = 16
REQUEST_QUEUE_ENTRY_BYTES = 64
READ_BUFFER_ENTRIES = 8
WRITE_BUFFER_ENTRIES = 8
BUFFER_ENTRY_BYTES = 128


class Route(enum.Enum):
    TO_CONVENTIONAL = "conventional"
    TO_EXTENDED_PREDICTED_HIT = "extended"
    TO_DRAM_PREDICTED_MISS = "predicted_miss"


class PredictorMode(enum.Enum):
    BLOOM = "bloom"
    OFF = "off"  # forward every extended-range request
    PERFECT = "perfect"  # oracle residency check


class RowResult(enum.Enum):
    HIT = "hit"
    MISS = "miss"
    PENDING = "pending"


@dataclass
class WarpStatusRow:
    set_id: int
    tag: int | None = None
    origin: tuple[int, int] | None = None  # (sm, request id)
    busy: bool = False
    op: Op | None = None
    result: RowResult | None = None
    data_ptr: int | None = None

    def check(self) -> None:
        assert self.busy == (self.result is RowResult.PENDING)
        if self.busy and self.op is not None and self.op.modifies:
            assert self.data_ptr is not None


class BufferPool:
    """Fixed pool of 128 B buffer entries.  Overflow is a stall, never a drop."""

    def __init__(self, entries: int):
        self.entries = entries
        self.in_use = 0
        self.peak = 0
        self.stalls = 0
        self._free = list(range(entries - 1, -1, -1))
        self._next_virtual = entries

    def acquire(self) -> int:
        self.in_use += 1
        self.peak = max(self.peak, self.in_use)
        if self._free:
            return self._free.pop()
        # the timing model counts the wait instead of blocking
        self.stalls += 1
        self._next_virtual += 1
        return self._next_virtual - 1

    def release(self, idx: int) -> None:
        self.in_use -= 1
        if idx < self.entries:
            self._free.append(idx)


@dataclass
class QueryLogicUnit:
    set_ids: list[int]
    rows: int = WARP_STATUS_ROWS
    queue_entries: int = REQUEST_QUEUE_ENTRIES
    table: dict[int, WarpStatusRow] = field(init=False)
    queues: dict[int, deque] = field(init=False)
    read_buffer: BufferPool = field(init=False)
    write_buffer: BufferPool = field(init=False)
    queued: int = 0
    queue_peak: int = 0
    queue_stalls: int = 0

    def __post_init__(self):
        if len(self.set_ids) > self.rows:
            raise InvalidConfig(
                f"partition owns {len(self.set_ids)} extended sets but the warp status table has {self.rows} rows"
            )
        self.table = {s: WarpStatusRow(s) for s in self.set_ids}
        self.queues = {s: deque() for s in self.set_ids}
        self.read_buffer = BufferPool(READ_BUFFER_ENTRIES)
        self.write_buffer = BufferPool(WRITE_BUFFER_ENTRIES)

    def enqueue(self, set_id: int, item) -> None:
        self.queues[set_id].append(item)
        self.queued += 1
        if self.queued > self.queue_entries:
            self.queue_stalls += 1
        self.queue_peak = max(self.queue_peak, self.queued)

    def next_item(self, set_id: int):
        q = self.queues[set_id]
        if not q or self.table[set_id].busy:
            return None
        self.queued -= 1
        return q.popleft()

    def begin(self, set_id: int, req: MemoryRequest | None, tag: int) -> WarpStatusRow:
        row = self.table[set_id]
        if row.busy:
            raise RuntimeError(f"warp status row {set_id} already busy")
        row.busy = True
        row.tag = tag
        row.result = RowResult.PENDING
        if req is None:  # internal fill
            row.origin = None
            row.op = None
            row.data_ptr = None
        else:
            row.origin = (req.origin_sm, req.id)
            row.op = req.op
            row.data_ptr = self.write_buffer.acquire() if req.op.modifies else None
        return row

    def complete(self, set_id: int, hit: bool) -> None:
        row = self.table[set_id]
        if row.data_ptr is not None:
            self.write_buffer.release(row.data_ptr)
        if row.op is not None and row.op is not Op.WRITE:
            # response payload staged for the trip back to the origin
            self.read_buffer.release(self.read_buffer.acquire())
        row.busy = False
        row.result = RowResult.HIT if hit else RowResult.MISS
        row.data_ptr = None

    @staticmethod
    def storage_bytes(rows: int = WARP_STATUS_ROWS) -> int:
        return (
            rows * WST_ROW_BYTES
            + REQUEST_QUEUE_ENTRIES * REQUEST_QUEUE_ENTRY_BYTES
            + (READ_BUFFER_ENTRIES + WRITE_BUFFER_ENTRIES) * BUFFER_ENTRY_BYTES
        )


def storage_overhead_bytes(
    extended_sets: int,
    rows: int = WARP_STATUS_ROWS,
    filter_bytes: int = FILTER_BYTES,
) -> int:
    """Controller storage of one partition.

    Predictor arrays are provisioned for every warp status row as soon as
    the partition has any extended set.
    """
    predictor = bloom_storage_bytes(rows, filter_bytes) if extended_sets else 0
    return predictor + QueryLogicUnit.storage_bytes(rows)


class Partition:
    """Controller state of one LLC partition."""

    def __init__(
        self,
        index: int,
        separator: AddressSeparator,
        ext: ExtendedLlc,
        mode: PredictorMode = PredictorMode.BLOOM,
        filter_bytes: int = FILTER_BYTES,
        hashes: int = 4,
        rows: int = WARP_STATUS_ROWS,
    ):
        self.index = index
        self.separator = separator
        self.ext = ext
        self.mode = mode
        owned = list(range(index, len(ext.sets), ext.partitions))
        self.qlu = QueryLogicUnit(owned, rows)
        self.predictors: dict[int, PredictorSet] = {}
        if mode is PredictorMode.BLOOM:
            for s in owned:
                eset = ext.sets[s]
                pred = PredictorSet(lambda e=eset: e.capacity, filter_bytes * 8, hashes)
                eset.on_forget = pred.forget
                self.predictors[s] = pred
        self.filter_bytes = filter_bytes
        self.rows = rows

    def predict(self, set_id: int, block: int) -> Prediction:
        if self.mode is PredictorMode.OFF:
            return Prediction.HIT
        if self.mode is PredictorMode.PERFECT:
            return Prediction.HIT if block in self.ext.sets[set_id] else Prediction.MISS
        return self.predictors[set_id].predict(block)

    def route(self, req: MemoryRequest) -> tuple[Route, int]:
        """Route a request of this partition.

        Returns the route and the conventional set index or extended set id.
        """
        block = req.address // self.ext.cfg.block_bytes
        p, extended, index = self.ext.amap.locate(block)
        if p != self.index:
            raise ValueError(f"request {req.id} belongs to partition {p}, not {self.index}")
        if not extended:
            return Route.TO_CONVENTIONAL, index
        if self.predict(index, block) is Prediction.HIT:
            return Route.TO_EXTENDED_PREDICTED_HIT, index
        return Route.TO_DRAM_PREDICTED_MISS, index

    def record(self, set_id: int):
        pred = self.predictors.get(set_id)
        return pred.record_access if pred else None

    def storage_overhead_bytes(self) -> int:
        return storage_overhead_bytes(len(self.qlu.set_ids), self.rows, self.filter_bytes)


def route(partition: Partition, req: MemoryRequest) -> Route:
    return partition.route(req)[0]


def dispatch_extended(qlu: QueryLogicUnit, set_id: int, item) -> bool:
    """Queue ``item`` for its set; True if the owning warp is idle."""
    qlu.enqueue(set_id, item)
    return not qlu.table[set_id].busy


def handle_predicted_miss(memory: BackingStore, req: MemoryRequest) -> tuple[int | None, int]:
    """Serve a predicted miss straight from DRAM.

    Returns the value for the origin and the DRAM bytes moved.  The fill of
    the extended set is scheduled separately by the engine.
    """
    block = memory.read_block(req.block_address)
    value, new = apply_request(block, req)
    if new is not None:
        memory.write_block(req.block_address, new)
    nbytes = len(block) * (2 if req.op.is_atomic else 1)
    return value, nbytes
