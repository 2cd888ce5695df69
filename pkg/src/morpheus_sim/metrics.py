"""Run statistics, their consistency checks and the JSON report format."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields

from .errors import InvariantViolation

SCHEMA_VERSION = "morpheus-sim-report/1"
LATENCY_CLASSES = ("conv_hit", "conv_miss", "ext_hit", "ext_miss", "predicted_miss")


class InconsistentCounters(InvariantViolation):
    pass


class FalseNegative(InconsistentCounters):
    """The predictor sent a resident block to DRAM."""


class TraceMismatch(ValueError):
    pass


@dataclass
class RawCounters:
    requests: int = 0
    responses: int = 0
    instructions: int | None = None
    trace_sha256: str = ""
    routed_conventional: int = 0
    routed_extended: int = 0
    routed_predicted_miss: int = 0
    conv_hits: int = 0
    conv_misses: int = 0
    conv_writebacks: int = 0
    ext_hits: int = 0
    ext_misses: int = 0
    ext_writebacks: int = 0
    ext_bypasses: int = 0
    ext_drops: int = 0
    fills_inserted: int = 0
    fills_redundant: int = 0
    epochs: int = 0
    epoch_evictions: int = 0
    true_hit: int = 0
    false_positive: int = 0
    true_miss: int = 0
    false_negative: int = 0
    bytes_conv: int = 0
    bytes_ext: int = 0
    bytes_dram: int = 0
    latencies: dict[str, list[float]] = field(default_factory=lambda: {c: [] for c in LATENCY_CLASSES})
    last_completion_ns: float = 0.0
    resource_bytes: dict[str, int] = field(default_factory=dict)
    resource_busy_ns: dict[str, float] = field(default_factory=dict)
    queue_peak: int = 0
    queue_stalls: int = 0
    buffer_peak: int = 0
    buffer_stalls: int = 0


def percentile(sorted_values: list[float], q: float) -> float:
    """Nearest-rank percentile of an ascending list (0 for an empty list)."""
    if not sorted_values:
        return 0.0
    rank = max(1, math.ceil(q / 100 * len(sorted_values)))
    return sorted_values[rank - 1]


def latency_summary(values: list[float]) -> dict:
    s = sorted(values)
    n = len(s)
    return {
        "count": n,
        "mean_ns": math.fsum(s) / n if n else 0.0,
        "p50_ns": percentile(s, 50),
        "p90_ns": percentile(s, 90),
        "p99_ns": percentile(s, 99),
        "max_ns": s[-1] if n else 0.0,
    }


def _ratio(num: float, den: float) -> float:
    return num / den if den else 0.0


@dataclass
class SimReport:
    schema_version: str
    config: dict
    notes: dict
    trace: dict
    routes: dict
    conventional: dict
    extended: dict
    predictor: dict
    llc: dict
    latency: dict
    energy: dict
    capacity: dict
    resources: dict

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "SimReport":
        doc = json.loads(text)
        if doc.get("schema_version") != SCHEMA_VERSION:
            raise ValueError(f"unsupported report schema {doc.get('schema_version')!r}")
        names = [f.name for f in fields(cls)]
        if sorted(doc) != sorted(names):
            raise ValueError("report fields do not match the schema")
        return cls(**doc)

    @property
    def mean_latency_ns(self) -> float:
        return self.latency["overall"]["mean_ns"]

    @property
    def llc_misses(self) -> int:
        return self.llc["misses"]

    @property
    def mpki(self) -> float:
        return self.llc["rate"]

    @property
    def energy_j(self) -> float:
        return self.energy["total_j"]


def _check(cond: bool, identity: str) -> None:
    if not cond:
        raise InconsistentCounters(f"counter identity violated: {identity}")


def finalize(
    raw: RawCounters,
    config: dict | None = None,
    notes: dict | None = None,
    capacity: dict | None = None,
    predictor_mode: str = "bloom",
    pj_per_byte: dict[str, float] | None = None,
) -> SimReport:
    r = raw
    if r.false_negative:
        raise FalseNegative(f"{r.false_negative} false negative prediction(s): predictor missed resident blocks")
    routed = r.routed_conventional + r.routed_extended + r.routed_predicted_miss
    _check(routed == r.requests, "conventional + extended + predicted_miss == requests")
    _check(r.responses == r.requests, "responses == requests")
    _check(r.conv_hits + r.conv_misses == r.routed_conventional, "conv hits + misses == routed conventional")
    _check(r.ext_hits + r.ext_misses == r.routed_extended, "ext hits + misses == routed extended")
    _check(r.true_miss + r.false_negative <= r.routed_predicted_miss, "predicted misses classified at most once")
    lat = r.latencies
    _check(len(lat["conv_hit"]) == r.conv_hits and len(lat["conv_miss"]) == r.conv_misses, "conv latency counts")
    _check(len(lat["ext_hit"]) == r.ext_hits and len(lat["ext_miss"]) == r.ext_misses, "ext latency counts")
    _check(len(lat["predicted_miss"]) == r.routed_predicted_miss, "predicted-miss latency count")
    if predictor_mode != "off":
        _check(r.true_hit + r.false_positive == r.routed_extended, "true_hit + false_positive == routed extended")

    misses = r.conv_misses + r.ext_misses + r.routed_predicted_miss
    if r.instructions:
        llc = {"metric": "MPKI", "misses": misses, "per": r.instructions, "rate": 1000 * misses / r.instructions}
    else:
        llc = {"metric": "misses per kilo-request", "misses": misses, "per": r.requests,
               "rate": _ratio(1000 * misses, r.requests)}

    everything = [x for c in LATENCY_CLASSES for x in lat[c]]
    latency = {"overall": latency_summary(everything)}
    for c in LATENCY_CLASSES:
        latency[c] = latency_summary(lat[c])

    pj = pj_per_byte or {"conv": 10.0, "ext": 61.0, "dram": 120.0}
    by_class = {"conv": r.bytes_conv, "ext": r.bytes_ext, "dram": r.bytes_dram}
    energy = {
        "bytes": by_class,
        "pj_per_byte": dict(pj),
        "joules": {k: v * pj[k] * 1e-12 for k, v in by_class.items()},
    }
    energy["total_j"] = math.fsum(energy["joules"].values())
    energy["ext_conv_pj_ratio"] = _ratio(pj["ext"], pj["conv"])

    elapsed = r.last_completion_ns
    resources = {
        "elapsed_ns": elapsed,
        "bytes": dict(r.resource_bytes),
        "busy_ns": dict(r.resource_busy_ns),
        "throughput_gbps": {k: _ratio(v, elapsed) for k, v in r.resource_bytes.items()},
        "queue_peak": r.queue_peak,
        "queue_stalls": r.queue_stalls,
        "buffer_peak": r.buffer_peak,
        "buffer_stalls": r.buffer_stalls,
    }
    forwarded = r.true_hit + r.false_positive
    predicted = forwarded + r.true_miss + r.false_negative
    return SimReport(
        schema_version=SCHEMA_VERSION,
        config=config or {},
        notes=notes or {},
        trace={"sha256": r.trace_sha256, "requests": r.requests, "instructions": r.instructions},
        routes={
            "conventional": r.routed_conventional,
            "extended": r.routed_extended,
            "predicted_miss": r.routed_predicted_miss,
        },
        conventional={"hits": r.conv_hits, "misses": r.conv_misses, "writebacks": r.conv_writebacks,
                      "hit_rate": _ratio(r.conv_hits, r.routed_conventional)},
        extended={
            "hits": r.ext_hits,
            "misses": r.ext_misses,
            "writebacks": r.ext_writebacks,
            "bypasses": r.ext_bypasses,
            "drops": r.ext_drops,
            "fills_inserted": r.fills_inserted,
            "fills_redundant": r.fills_redundant,
            "epochs": r.epochs,
            "epoch_evictions": r.epoch_evictions,
        },
        predictor={
            "mode": predictor_mode,
            "true_hit": r.true_hit,
            "false_positive": r.false_positive,
            "true_miss": r.true_miss,
            "false_negative": r.false_negative,
            "accuracy": _ratio(r.true_hit + r.true_miss, predicted),
            "false_positive_rate": _ratio(r.false_positive, r.false_positive + r.true_miss),
        },
        llc=llc,
        latency=latency,
        energy=energy,
        capacity=capacity or {},
        resources=resources,
    )


@dataclass
class ComparisonReport:
    baseline: SimReport
    variant: SimReport
    deltas: dict

    def to_json(self) -> str:
        doc = {
            "schema_version": SCHEMA_VERSION,
            "deltas": self.deltas,
            "baseline": asdict(self.baseline),
            "variant": asdict(self.variant),
        }
        return json.dumps(doc, indent=2) + "\n"


def _delta(b: float, v: float) -> float | None:
    if b == 0:
        return 0.0 if v == 0 else None
    return (v - b) / b


def compare(baseline: SimReport, variant: SimReport) -> ComparisonReport:
    if baseline.trace["sha256"] != variant.trace["sha256"]:
        raise TraceMismatch("reports were produced from different traces")
    mpki = _delta(baseline.mpki, variant.mpki)
    lat = _delta(baseline.mean_latency_ns, variant.mean_latency_ns)
    energy = _delta(baseline.energy_j, variant.energy_j)

    def pct(x):
        return None if x is None else 100 * x

    deltas = {
        "mpki_change_pct": pct(mpki),
        "mpki_reduction_pct": None if mpki is None else 0.0 - 100 * mpki,
        "mean_latency_change_pct": pct(lat),
        "energy_change_pct": pct(energy),
        "llc_misses_change_pct": pct(_delta(baseline.llc_misses, variant.llc_misses)),
    }
    return ComparisonReport(baseline, variant, deltas)
