"""Discrete-event timing engine.

Requests get end-to-end class latencies (conventional hit or miss,
extended hit or miss, predicted miss); contention enters only as queueing
delay in front of rate-limited resources and busy helper warps.  Functional
effects happen at the instant a request is served, so the data seen by each
request is well defined even when requests overlap.
"""

from __future__ import annotations

import enum
import heapq
from dataclasses import dataclass
from typing import TYPE_CHECKING, Iterable, Sequence

from .addressing import INTERLEAVE_NOTE
from .bloom import HASH_FAMILY
from .cache import AccessOp, Cache, CacheGeometry
from .controller import Partition, PredictorMode, Route, dispatch_extended, handle_predicted_miss
from .errors import ConfigError
from .extended import Backing, ExtendedLlc, fill, service
from .memory import BackingStore, apply_request
from .metrics import RawCounters, SimReport, finalize
from .trace import MemoryRequest, TraceMeta, trace_digest

if TYPE_CHECKING:
    from .config import RunConfig

LATENCY_NOTE = (
    "end-to-end class latencies (conv hit/miss, ext hit/miss, predicted miss) plus queueing at "
    "rate-limited partitions and DRAM and at busy helper warps; no additive component model"
)


class IndirectMov(enum.Enum):
    SOFTWARE = "software"
    NATIVE = "native"


@dataclass(frozen=True)
class LatencyEnergyConfig:
    cycle_ns: float = 1.0
    conv_hit_ns: float = 160.0
    conv_miss_ns: float = 608.0
    ext_hit_ns: float = 185.0
    ext_miss_ns: float = 773.0
    predicted_miss_ns: float = 608.0
    indirect_mov_mode: IndirectMov = IndirectMov.NATIVE
    software_indirect_mov_ns: float = 30.0
    per_warp_service_occupancy_ns: float = 181.0
    conv_partition_bytes_per_s: float = 300e9
    dram_bytes_per_s: float = 700e9
    conv_pj_per_byte: float = 10.0
    ext_pj_per_byte: float = 61.0
    dram_pj_per_byte: float = 120.0

    def validate(self) -> None:
        for name in (
            "cycle_ns", "conv_hit_ns", "conv_miss_ns", "ext_hit_ns", "ext_miss_ns", "predicted_miss_ns",
            "per_warp_service_occupancy_ns", "conv_partition_bytes_per_s", "dram_bytes_per_s",
            "conv_pj_per_byte", "ext_pj_per_byte", "dram_pj_per_byte",
        ):
            if not getattr(self, name) > 0:
                raise ConfigError(f"[timing] {name} must be positive")
        if self.software_indirect_mov_ns < 0:
            raise ConfigError("[timing] software_indirect_mov_ns must be >= 0")
        if self.ext_miss_ns < self.ext_hit_ns:
            raise ConfigError("[timing] ext_miss_ns must be >= ext_hit_ns")

    @property
    def rf_penalty_ns(self) -> float:
        return self.software_indirect_mov_ns if self.indirect_mov_mode is IndirectMov.SOFTWARE else 0.0

    @property
    def miss_extra_occupancy_ns(self) -> float:
        return self.ext_miss_ns - self.ext_hit_ns

    @property
    def pj_per_byte(self) -> dict[str, float]:
        return {"conv": self.conv_pj_per_byte, "ext": self.ext_pj_per_byte, "dram": self.dram_pj_per_byte}


class EventKind(enum.IntEnum):
    ARRIVE = 0
    DISPATCH = 1
    SERVICE_START = 2
    SERVICE_END = 3
    FILL = 4
    RESPOND = 5


@dataclass(order=True, frozen=True, slots=True)
class Event:
    timestamp_ns: float
    resource_id: int
    request_id: int
    kind: EventKind
    seq: int = 0


class ResourceKind(enum.Enum):
    CONV_PARTITION = "conv_partition"
    EXT_WARP = "ext_warp"
    DRAM_CHANNEL = "dram"
    NOC = "noc"


class Resource:
    __slots__ = ("id", "kind", "busy_until_ns", "bytes_served", "busy_ns", "ns_per_byte", "hold_ns")

    def __init__(self, rid: int, kind: ResourceKind, bytes_per_s: float | None = None, hold_ns: float = 0.0):
        self.id = rid
        self.kind = kind
        self.busy_until_ns = 0.0
        self.bytes_served = 0
        self.busy_ns = 0.0
        self.ns_per_byte = 1e9 / bytes_per_s if bytes_per_s else 0.0
        self.hold_ns = hold_ns


def occupancy_delay(resource: Resource, nbytes: int, now_ns: float, hold_ns: float | None = None) -> float:
    """Reserve ``resource`` for a transfer of ``nbytes``; return its start time.

    Helper warps serve one transaction at a time for ``hold_ns`` (default:
    the per-warp service occupancy).  Other resources are serial pipes of a
    fixed byte rate.
    """
    if nbytes <= 0:
        raise ValueError("occupancy needs a positive byte count")
    start = now_ns if now_ns > resource.busy_until_ns else resource.busy_until_ns
    if resource.kind is ResourceKind.EXT_WARP:
        dt = resource.hold_ns if hold_ns is None else hold_ns
    else:
        dt = nbytes * resource.ns_per_byte
    resource.busy_until_ns = start + dt
    resource.bytes_served += nbytes
    resource.busy_ns += dt
    return start


def energy_report(bytes_by_class: dict[str, int], cfg: LatencyEnergyConfig) -> dict:
    pj = cfg.pj_per_byte
    joules = {k: bytes_by_class.get(k, 0) * pj[k] * 1e-12 for k in pj}
    return {
        "joules": joules,
        "total_j": sum(joules.values()),
        "ext_conv_pj_ratio": pj["ext"] / pj["conv"],
    }


class Simulator:
    """One run of a trace through a configured LLC subsystem."""

    def __init__(self, cfg: "RunConfig", log_values: bool = False):
        cfg.validate()
        self.cfg = cfg
        t = cfg.timing
        self.t = t
        g = cfg.gpu
        bb = g.block_bytes
        self.block_bytes = bb
        self.conv = Cache(CacheGeometry(g.llc_bytes, g.llc_ways, bb))
        conv_sets_pp = g.conv_sets // g.partitions
        self.ext = ExtendedLlc(cfg.ext, g.partitions, conv_sets_pp, g.llc_bytes // g.partitions)
        p = cfg.predictor
        self.mode = p.mode
        self.partitions = [
            Partition(i, self.ext.amap.separators[i], self.ext, p.mode, p.filter_bytes, p.hashes, p.warp_status_rows)
            for i in range(g.partitions)
        ]
        self.memory = BackingStore(cfg.memory.fill_pattern, cfg.memory.seed)
        P = g.partitions
        self.conv_res = [Resource(i, ResourceKind.CONV_PARTITION, t.conv_partition_bytes_per_s) for i in range(P)]
        self.dram = Resource(P, ResourceKind.DRAM_CHANNEL, t.dram_bytes_per_s)
        self.warp_res = [
            Resource(P + 1 + s, ResourceKind.EXT_WARP, hold_ns=t.per_warp_service_occupancy_ns)
            for s in range(len(self.ext.sets))
        ]
        self.raw = RawCounters()
        # (request id, value returned, latency class) in service order
        self.log: list[tuple[int, int | None, str]] | None = [] if log_values else None
        self.completion: dict[int, float] = {}
        self._heap: list = []
        self._seq = 0
        self._epoch_ns = cfg.epoch_cycles * t.cycle_ns
        self._next_epoch = self._epoch_ns
        self._touched: set[int] = set()

    # -- event plumbing --------------------------------------------------

    def _push(self, when: float, resource_id: int, request_id: int, kind: EventKind, payload) -> None:
        self._seq += 1
        heapq.heappush(self._heap, (when, resource_id, request_id, kind, self._seq, payload))

    def _respond(self, req: MemoryRequest, arrival: float, done: float, cls: str, value) -> None:
        self.raw.latencies[cls].append(done - arrival)
        self.raw.responses += 1
        self.completion[req.id] = done
        if done > self.raw.last_completion_ns:
            self.raw.last_completion_ns = done
        if self.log is not None:
            self.log.append((req.id, value, cls))

    def _dram(self, nbytes: int, now: float) -> float:
        self.raw.bytes_dram += nbytes
        return occupancy_delay(self.dram, nbytes, now) - now

    # -- request paths ---------------------------------------------------

    def _arrive(self, req: MemoryRequest, now: float) -> None:
        raw = self.raw
        bb = self.block_bytes
        block = req.address // bb
        part = self.partitions[block % len(self.partitions)]
        route, index = part.route(req)
        if route is Route.TO_CONVENTIONAL:
            raw.routed_conventional += 1
            raw.bytes_conv += bb
            start = occupancy_delay(self.conv_res[part.index], bb, now)
            op = AccessOp.WRITE if req.op.modifies else AccessOp.READ
            res = self.conv.access(req.block_address, op, index)
            value, new = apply_request(self.memory.peek_block(req.block_address), req)
            if new is not None:
                self.memory.blocks[req.block_address] = new
            if res.hit:
                raw.conv_hits += 1
                self._respond(req, now, start + self.t.conv_hit_ns, "conv_hit", value)
                return
            raw.conv_misses += 1
            nbytes = bb
            if res.victim is not None and res.victim.dirty:
                raw.conv_writebacks += 1
                nbytes += bb
            wait = self._dram(nbytes, start)
            self._respond(req, now, start + wait + self.t.conv_miss_ns, "conv_miss", value)
        elif route is Route.TO_DRAM_PREDICTED_MISS:
            raw.routed_predicted_miss += 1
            if self.mode is PredictorMode.BLOOM:
                if block in self.ext.sets[index]:
                    raw.false_negative += 1
                else:
                    raw.true_miss += 1
            elif self.mode is PredictorMode.PERFECT:
                raw.true_miss += 1
            value, nbytes = handle_predicted_miss(self.memory, req)
            wait = self._dram(nbytes, now)
            done = now + wait + self.t.predicted_miss_ns
            self._respond(req, now, done, "predicted_miss", value)
            # data returns from DRAM, then the block is installed off the critical path
            self._push(done, self.warp_res[index].id, req.id, EventKind.FILL, (index, req.block_address))
        else:
            raw.routed_extended += 1
            if dispatch_extended(part.qlu, index, (req, now)):
                self._start_next(part, index, now)

    def _start_next(self, part: Partition, set_id: int, now: float) -> None:
        """Start the next queued item of an idle set (skipping no-op fills)."""
        qlu = part.qlu
        raw = self.raw
        t = self.t
        eset = self.ext.sets[set_id]
        warp = self.warp_res[set_id]
        bb = self.block_bytes
        pen = t.rf_penalty_ns if eset.backing is Backing.REGISTER_FILE else 0.0
        while True:
            item = qlu.next_item(set_id)
            if item is None:
                return
            if item[0] == "fill":
                _, block_address, req_id = item
                inserted, wb = fill(eset, block_address, self.memory, part.record(set_id))
                if not inserted:
                    if block_address // bb in eset:
                        raw.fills_redundant += 1
                    else:
                        raw.ext_bypasses += 1
                    continue
                raw.fills_inserted += 1
                raw.bytes_ext += bb
                raw.ext_writebacks += len(wb)
                hold = t.per_warp_service_occupancy_ns + pen
                if wb:
                    hold += self._dram(bb * len(wb), now)
                qlu.begin(set_id, None, block_address // bb)
                eset.busy = True
                occupancy_delay(warp, bb, now, hold)
                self._touched.add(set_id)
                self._push(now + hold, warp.id, req_id, EventKind.SERVICE_END, (part.index, set_id, True))
                return
            req, arrival = item
            qlu.begin(set_id, req, req.block_address // bb)
            out = service(eset, req, self.memory, part.record(set_id), hold=True)
            self._touched.add(set_id)
            raw.bytes_ext += bb
            raw.ext_writebacks += len(out.writebacks)
            raw.ext_bypasses += out.bypassed
            raw.ext_drops += out.dropped
            if self.mode is not PredictorMode.OFF:
                if out.hit:
                    raw.true_hit += 1
                else:
                    raw.false_positive += 1
            if out.hit:
                raw.ext_hits += 1
                hold = t.per_warp_service_occupancy_ns + pen
                latency = t.ext_hit_ns + pen
                if out.writebacks:
                    wait = self._dram(bb * len(out.writebacks), now)
                    hold += wait
                cls = "ext_hit"
            else:
                raw.ext_misses += 1
                wait = self._dram(bb * (1 + len(out.writebacks)), now)
                hold = t.per_warp_service_occupancy_ns + t.miss_extra_occupancy_ns + pen + wait
                latency = t.ext_miss_ns + pen + wait
                cls = "ext_miss"
            occupancy_delay(warp, bb, now, hold)
            self._respond(req, arrival, now + latency, cls, out.value)
            self._push(now + hold, warp.id, req.id, EventKind.SERVICE_END, (part.index, set_id, out.hit))
            return

    def _service_end(self, payload, now: float) -> None:
        p, set_id, hit = payload
        part = self.partitions[p]
        part.qlu.complete(set_id, hit)
        self.ext.sets[set_id].busy = False
        self._start_next(part, set_id, now)

    def _fill_arrives(self, payload, req_id: int, now: float) -> None:
        set_id, block_address = payload
        part = self.partitions[set_id % len(self.partitions)]
        if dispatch_extended(part.qlu, set_id, ("fill", block_address, req_id)):
            self._start_next(part, set_id, now)

    def _epochs_until(self, now: float) -> None:
        while self._next_epoch <= now:
            if self._touched:
                self._end_epoch(self._next_epoch)
                self._next_epoch += self._epoch_ns
            else:
                # nothing to reallocate: skip idle epochs in one step
                n = int((now - self._next_epoch) // self._epoch_ns) + 1
                self._next_epoch += n * self._epoch_ns

    def _end_epoch(self, now: float) -> None:
        raw = self.raw
        raw.epochs += 1
        bb = self.block_bytes
        for set_id in sorted(self._touched):
            evicted = self.ext.sets[set_id].end_epoch()
            raw.epoch_evictions += len(evicted)
            dirty = [ev for ev in evicted if ev.dirty]
            for ev in dirty:
                self.memory.write_block(ev.tag * bb, ev.data)
            if dirty:
                raw.ext_writebacks += len(dirty)
                self._dram(bb * len(dirty), now)
        self._touched.clear()

    # -- driver ----------------------------------------------------------

    def run(self, meta: TraceMeta, requests: Sequence[MemoryRequest]) -> SimReport:
        raw = self.raw
        raw.instructions = meta.total_instructions
        raw.trace_sha256 = trace_digest(meta, requests)
        raw.requests = len(requests)
        cycle = self.t.cycle_ns
        compress = self.cfg.ext.compression and self.ext.sets
        it = iter(requests)
        first = next(it, None)
        if first is not None:
            self._push(first.issue_cycle * cycle, -1, first.id, EventKind.ARRIVE, first)
        heap = self._heap
        pop = heapq.heappop
        while heap:
            now, _, req_id, kind, _, payload = pop(heap)
            if compress:
                self._epochs_until(now)
            if kind is EventKind.ARRIVE:
                nxt = next(it, None)
                if nxt is not None:
                    self._push(nxt.issue_cycle * cycle, -1, nxt.id, EventKind.ARRIVE, nxt)
                self._arrive(payload, now)
            elif kind is EventKind.SERVICE_END:
                self._service_end(payload, now)
            else:
                self._fill_arrives(payload, req_id, now)
        return self.report()

    def flush(self) -> None:
        """Write every dirty extended block back to memory (end-of-run image)."""
        bb = self.block_bytes
        for eset in self.ext.sets:
            for tag, data in eset.dirty_blocks():
                self.memory.blocks[tag * bb] = data

    def report(self) -> SimReport:
        raw = self.raw
        raw.resource_bytes = {
            "conv_partitions": sum(r.bytes_served for r in self.conv_res),
            "ext_warps": sum(r.bytes_served for r in self.warp_res),
            "dram": self.dram.bytes_served,
        }
        raw.resource_busy_ns = {
            "conv_partitions": sum(r.busy_ns for r in self.conv_res),
            "ext_warps": sum(r.busy_ns for r in self.warp_res),
            "dram": self.dram.busy_ns,
        }
        qlus = [p.qlu for p in self.partitions]
        raw.queue_peak = max((q.queue_peak for q in qlus), default=0)
        raw.queue_stalls = sum(q.queue_stalls for q in qlus)
        raw.buffer_peak = max((max(q.read_buffer.peak, q.write_buffer.peak) for q in qlus), default=0)
        raw.buffer_stalls = sum(q.read_buffer.stalls + q.write_buffer.stalls for q in qlus)
        cap = self.ext.capacity
        overhead = [p.storage_overhead_bytes() for p in self.partitions]
        capacity = {
            "cache_mode_sms": len(self.cfg.ext.cache_mode_sms),
            "ext_rf_bytes_per_sm": cap.rf_bytes_per_sm,
            "ext_l1_bytes_per_sm": cap.l1_bytes_per_sm,
            "ext_bytes_per_sm": cap.per_sm_bytes,
            "ext_bytes_total": cap.total_bytes,
            "ext_sets": cap.total_sets,
            "conv_bytes": self.cfg.gpu.llc_bytes,
            "controller_bytes_per_partition": overhead[0] if overhead else 0,
            "controller_bytes_total": sum(overhead),
        }
        notes = {
            "hash_family": HASH_FAMILY,
            "extended_set_hash": self.cfg.ext.set_hash,
            "interleave": INTERLEAVE_NOTE,
            "latency_model": LATENCY_NOTE,
            "filter_keys": "128 B block numbers; probes per key set by predictor.hashes",
            "compression_epochs": "slots apportioned by largest remainder; shrunk levels evict oldest first",
            "percentiles": "nearest rank over the exact latency multiset",
            "replacement": "12-bit counter LRU; conventional ties to the lowest way, extended ties to the oldest block",
        }
        return finalize(
            raw,
            config=self.cfg.echo(),
            notes=notes,
            capacity=capacity,
            predictor_mode=self.mode.value,
            pj_per_byte=self.t.pj_per_byte,
        )


def run(meta: TraceMeta, requests: Sequence[MemoryRequest], cfg: "RunConfig") -> SimReport:
    return Simulator(cfg).run(meta, requests)


def single_request_latency(cfg: "RunConfig", requests: Iterable[MemoryRequest]) -> list[float]:
    """Latencies of ``requests`` in id order (test helper for calibration)."""
    reqs = list(requests)
    sim = Simulator(cfg)
    sim.run(TraceMeta(None, max((r.origin_sm for r in reqs), default=0) + 1), reqs)
    return [sim.completion[r.id] - r.issue_cycle * cfg.timing.cycle_ns for r in reqs]
