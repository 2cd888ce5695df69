"""Run configuration: sectioned key=value files, defaults and validation.

Every default is the RTX 3080-class baseline, so an empty file describes
the unmodified GPU (no SM in cache mode).
"""

from __future__ import annotations

import configparser
import enum
import re
from dataclasses import dataclass, field
from pathlib import Path

from .addressing import IDENTITY_HASH
from .controller import PredictorMode
from .errors import ConfigError
from .extended import DEFAULT_AUX_REGISTERS, ExtLlcConfig, InvalidConfig
from .memory import FillPattern
from .timing import IndirectMov, LatencyEnergyConfig

KIB = 1024
MIB = 1024 * KIB

_SIZE = re.compile(r"^\s*(\d+)\s*(B|KiB|MiB|GiB)?\s*$", re.IGNORECASE)
_UNITS = {None: 1, "b": 1, "kib": KIB, "mib": MIB, "gib": 1024 * MIB}


def parse_size(text: str) -> int:
    m = _SIZE.match(text)
    if not m:
        raise ConfigError(f"not a byte size: {text!r}")
    unit = m.group(2).lower() if m.group(2) else None
    return int(m.group(1)) * _UNITS[unit]


def parse_bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {text!r}")


def parse_aux_table(text: str) -> tuple[tuple[int, int], ...]:
    try:
        pairs = tuple(
            (int(w), int(r)) for w, r in (item.split(":") for item in text.replace(" ", "").split(",") if item)
        )
    except ValueError:
        raise ConfigError(f"aux_table must look like '1:17, 8:17, ...', got {text!r}") from None
    if not pairs:
        raise ConfigError("aux_table is empty")
    return pairs


def _opt_int(text: str) -> int | None:
    return None if text.strip() in ("", "none") else int(text)


def _enum(cls):
    def parse(text: str):
        try:
            return cls(text.strip().lower())
        except ValueError:
            choices = ", ".join(m.value for m in cls)
            raise ConfigError(f"expected one of {choices}, got {text!r}") from None

    return parse


def _fmt(v) -> str:
    if isinstance(v, enum.Enum):
        return v.value
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ", ".join(f"{w}:{r}" for w, r in v)
    return "" if v is None else str(v)


# section -> key -> (parser, default)
SCHEMA: dict[str, dict[str, tuple]] = {
    "run": {
        "name": (str, "baseline"),
        "seed": (int, 0),
    },
    "gpu": {
        "sm_count": (int, 68),
        "partitions": (int, 10),
        "llc_bytes": (parse_size, 5 * MIB),
        "llc_ways": (int, 16),
        "block_bytes": (int, 128),
        "cache_mode_sms": (int, 0),
        "compute_sms": (_opt_int, None),
    },
    "extended": {
        "warps_per_sm": (int, 48),
        "rf_warps": (int, 32),
        "l1_warps": (int, 16),
        "blocks_per_rf_set": (int, 32),
        "l1_bytes_per_sm": (parse_size, 128 * KIB),
        "rf_bytes_per_sm": (parse_size, 256 * KIB),
        "aux_reservation": (parse_bool, True),
        "aux_table": (parse_aux_table, DEFAULT_AUX_REGISTERS),
        "max_registers_per_thread": (int, 256),
        "compression": (parse_bool, False),
        "epoch_cycles": (int, 10_000),
        "set_hash": (str, IDENTITY_HASH),
    },
    "predictor": {
        "mode": (_enum(PredictorMode), PredictorMode.BLOOM),
        "filter_bytes": (int, 32),
        "hashes": (int, 4),
        "warp_status_rows": (int, 256),
    },
    "timing": {
        "cycle_ns": (float, 1.0),
        "conv_hit_ns": (float, 160.0),
        "conv_miss_ns": (float, 608.0),
        "ext_hit_ns": (float, 185.0),
        "ext_miss_ns": (float, 773.0),
        "predicted_miss_ns": (float, 608.0),
        "indirect_mov_mode": (_enum(IndirectMov), IndirectMov.NATIVE),
        "software_indirect_mov_ns": (float, 30.0),
        "per_warp_service_occupancy_ns": (float, 181.0),
        "conv_partition_bytes_per_s": (float, 300e9),
        "dram_bytes_per_s": (float, 700e9),
        "conv_pj_per_byte": (float, 10.0),
        "ext_pj_per_byte": (float, 61.0),
        "dram_pj_per_byte": (float, 120.0),
    },
    "memory": {
        "fill_pattern": (_enum(FillPattern), FillPattern.MIXED),
        "seed": (int, 0),
    },
}

SWEEPABLE = {f"{s}.{k}" for s, keys in SCHEMA.items() for k in keys} - {"run.name"}


def resolve_key(name: str) -> str:
    """Accept ``section.key`` or a bare key that is unique across sections."""
    if name in SWEEPABLE:
        return name
    hits = [q for q in SWEEPABLE if q.split(".", 1)[1] == name]
    if len(hits) == 1:
        return hits[0]
    if hits:
        raise ConfigError(f"ambiguous parameter {name!r}: use one of {', '.join(sorted(hits))}")
    raise ConfigError(f"unknown parameter {name!r}")


@dataclass(frozen=True)
class GpuConfig:
    sm_count: int = 68
    partitions: int = 10
    llc_bytes: int = 5 * MIB
    llc_ways: int = 16
    block_bytes: int = 128

    @property
    def conv_sets(self) -> int:
        return self.llc_bytes // (self.llc_ways * self.block_bytes)


@dataclass(frozen=True)
class PredictorConfig:
    mode: PredictorMode = PredictorMode.BLOOM
    filter_bytes: int = 32
    hashes: int = 4
    warp_status_rows: int = 256


@dataclass(frozen=True)
class MemoryConfig:
    fill_pattern: FillPattern = FillPattern.MIXED
    seed: int = 0


@dataclass(frozen=True)
class RunConfig:
    name: str = "baseline"
    seed: int = 0
    gpu: GpuConfig = field(default_factory=GpuConfig)
    compute_sms: int | None = None
    ext: ExtLlcConfig = field(default_factory=ExtLlcConfig)
    timing: LatencyEnergyConfig = field(default_factory=LatencyEnergyConfig)
    predictor: PredictorConfig = field(default_factory=PredictorConfig)
    memory: MemoryConfig = field(default_factory=MemoryConfig)
    epoch_cycles: int = 10_000
    source: dict = field(default_factory=dict, compare=False, repr=False)

    @classmethod
    def from_sections(cls, sections: dict[str, dict[str, str]]) -> "RunConfig":
        values: dict[str, dict] = {}
        given = set()
        for sec, keys in SCHEMA.items():
            values[sec] = {k: default for k, (_, default) in keys.items()}
        for sec, items in sections.items():
            if sec not in SCHEMA:
                raise ConfigError(f"unknown section [{sec}]")
            for key, text in items.items():
                if key not in SCHEMA[sec]:
                    raise ConfigError(f"unknown key {key!r} in [{sec}]")
                given.add((sec, key))
                parser = SCHEMA[sec][key][0]
                try:
                    values[sec][key] = parser(text)
                except ConfigError as e:
                    raise ConfigError(f"[{sec}] {key}: {e}") from None
                except ValueError:
                    raise ConfigError(f"[{sec}] {key}: cannot parse {text!r}") from None
        return cls._build(values, given)

    @classmethod
    def _build(cls, v: dict[str, dict], given: set[tuple[str, str]]) -> "RunConfig":
        g = v["gpu"]
        gpu = GpuConfig(g["sm_count"], g["partitions"], g["llc_bytes"], g["llc_ways"], g["block_bytes"])
        n_cache = g["cache_mode_sms"]
        compute = g["compute_sms"]
        if compute is not None and ("gpu", "cache_mode_sms") not in given:
            # Table 3 style: every SM not computing lends its memories
            n_cache = gpu.sm_count - compute
        if n_cache < 0 or n_cache > gpu.sm_count:
            raise ConfigError(f"[gpu] cache_mode_sms must lie in [0, {gpu.sm_count}]")
        g["cache_mode_sms"] = n_cache
        e = v["extended"]
        ext = ExtLlcConfig(
            cache_mode_sms=tuple(range(gpu.sm_count - n_cache, gpu.sm_count)),
            warps_per_sm=e["warps_per_sm"],
            rf_warps=e["rf_warps"],
            l1_warps=e["l1_warps"],
            blocks_per_rf_set=e["blocks_per_rf_set"],
            block_bytes=gpu.block_bytes,
            l1_bytes_per_sm=e["l1_bytes_per_sm"],
            rf_bytes_per_sm=e["rf_bytes_per_sm"],
            total_sms=gpu.sm_count,
            aux_reservation=e["aux_reservation"],
            aux_table=e["aux_table"],
            max_registers_per_thread=e["max_registers_per_thread"],
            compression=e["compression"],
            set_hash=e["set_hash"],
        )
        t = v["timing"]
        timing = LatencyEnergyConfig(**t)
        cfg = cls(
            name=v["run"]["name"],
            seed=v["run"]["seed"],
            gpu=gpu,
            compute_sms=compute,
            ext=ext,
            timing=timing,
            predictor=PredictorConfig(**v["predictor"]),
            memory=MemoryConfig(**v["memory"]),
            epoch_cycles=e["epoch_cycles"],
            source={s: {k: _fmt(x) for k, x in keys.items()} for s, keys in v.items() if s in SCHEMA},
        )
        cfg.validate()
        return cfg

    def validate(self) -> None:
        g = self.gpu
        if min(g.sm_count, g.partitions, g.llc_bytes, g.llc_ways, g.block_bytes) <= 0:
            raise ConfigError("[gpu] sizes and counts must be positive")
        if g.block_bytes != 128:
            raise ConfigError("[gpu] block_bytes: only 128 B blocks are modeled")
        if g.llc_bytes % (g.llc_ways * g.block_bytes):
            raise ConfigError("[gpu] llc_bytes must be a multiple of llc_ways x block_bytes")
        if g.conv_sets % g.partitions:
            raise ConfigError(f"[gpu] {g.conv_sets} LLC sets do not divide into {g.partitions} partitions")
        n_cache = len(self.ext.cache_mode_sms)
        if self.compute_sms is not None:
            if self.compute_sms < 0:
                raise ConfigError("[gpu] compute_sms must be >= 0")
            if self.compute_sms + n_cache > g.sm_count:
                raise ConfigError(
                    f"[gpu] compute_sms ({self.compute_sms}) + cache_mode_sms ({n_cache}) exceeds sm_count ({g.sm_count})"
                )
        if self.epoch_cycles <= 0:
            raise ConfigError("[extended] epoch_cycles must be positive")
        p = self.predictor
        if p.filter_bytes <= 0 or p.hashes <= 0 or p.warp_status_rows <= 0:
            raise ConfigError("[predictor] filter_bytes, hashes and warp_status_rows must be positive")
        try:
            self.ext.validate()
        except InvalidConfig as e:
            raise ConfigError(f"[extended] {e}") from None
        owned = -(-n_cache * self.ext.warps_used // g.partitions)
        if owned > p.warp_status_rows:
            raise ConfigError(
                f"[predictor] up to {owned} extended sets per partition exceed warp_status_rows = {p.warp_status_rows}"
            )
        self.timing.validate()

    @property
    def cache_mode_count(self) -> int:
        return len(self.ext.cache_mode_sms)

    def echo(self) -> dict:
        """Every effective setting, as text, in schema order."""
        if self.source:
            return {s: dict(keys) for s, keys in self.source.items()}
        return {s: {k: _fmt(d) for k, (_, d) in keys.items()} for s, keys in SCHEMA.items()}

    def with_override(self, key: str, value: str) -> "RunConfig":
        sec, k = resolve_key(key).split(".", 1)
        sections = self.echo()
        sections[sec][k] = value
        if (sec, k) == ("gpu", "compute_sms"):
            # the cache-mode count follows the new compute count
            del sections["gpu"]["cache_mode_sms"]
        return RunConfig.from_sections(sections)


def load_config(path: str | Path) -> RunConfig:
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    parser.optionxform = str
    try:
        with open(path, encoding="utf-8") as fh:
            parser.read_file(fh)
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e.strerror}") from None
    except configparser.Error as e:
        raise ConfigError(f"malformed config {path}: {e}") from None
    sections = {s: dict(parser[s]) for s in parser.sections()}
    return RunConfig.from_sections(sections)


def dump_config(cfg: RunConfig) -> str:
    lines = []
    for sec, keys in cfg.echo().items():
        lines.append(f"[{sec}]")
        lines.extend(f"{k} = {v}" for k, v in keys.items())
        lines.append("")
    return "\n".join(lines)


@dataclass(frozen=True)
class SweepSpec:
    parameter: str
    values: tuple[str, ...]
    base: RunConfig

    def __post_init__(self):
        object.__setattr__(self, "parameter", resolve_key(self.parameter))
        if not self.values:
            raise ConfigError("sweep value list is empty")

    def configs(self) -> list[RunConfig]:
        return [self.base.with_override(self.parameter, v) for v in self.values]


def load_sweep(path: str | Path) -> SweepSpec:
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    parser.optionxform = str
    try:
        with open(path, encoding="utf-8") as fh:
            parser.read_file(fh)
    except OSError as e:
        raise ConfigError(f"cannot read sweep spec {path}: {e.strerror}") from None
    except configparser.Error as e:
        raise ConfigError(f"malformed sweep spec {path}: {e}") from None
    if "sweep" not in parser:
        raise ConfigError("sweep spec needs a [sweep] section")
    sw = parser["sweep"]
    if "parameter" not in sw:
        raise ConfigError("[sweep] parameter is required")
    values = tuple(x.strip() for x in sw.get("values", "").split(",") if x.strip())
    base_sections = {s: dict(parser[s]) for s in parser.sections() if s != "sweep"}
    if "base" in sw:
        base_path = Path(path).parent / sw["base"]
        base = load_config(base_path)
        merged = base.echo()
        for s, items in base_sections.items():
            merged.setdefault(s, {}).update(items)
        base = RunConfig.from_sections(merged)
    else:
        base = RunConfig.from_sections(base_sections)
    return SweepSpec(sw["parameter"], values, base)
