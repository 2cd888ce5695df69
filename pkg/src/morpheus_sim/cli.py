"""Command-line front end.

Exit status: 0 success, 2 configuration error, 3 trace error,
4 invariant violation.  Progress goes to stdout; all data goes to files.
"""

from __future__ import annotations

import argparse
import configparser
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from .config import RunConfig, SweepSpec, load_config, load_sweep
from .errors import ConfigError, InvariantViolation
from .metrics import TraceMismatch, compare
from .presets import preset_path
from .timing import Simulator
from .trace import InvalidSpec, Pattern, TraceError, TraceSpec, generate, read_trace_file, write_trace

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_TRACE = 3
EXIT_INVARIANT = 4


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def _config(path: str) -> RunConfig:
    """Load a config file, or a bundled one given as ``preset:NAME``."""
    try:
        if path.startswith("preset:"):
            return load_config(preset_path(path[7:]))
        return load_config(path)
    except (ConfigError, FileNotFoundError) as e:
        raise CliError(EXIT_CONFIG, f"config error: {e}") from None


def _trace(path: str):
    try:
        return read_trace_file(path)
    except OSError as e:
        raise CliError(EXIT_TRACE, f"trace error: cannot read {path}: {e.strerror}") from None
    except TraceError as e:
        raise CliError(EXIT_TRACE, f"trace error: {e}") from None


def _simulate(cfg: RunConfig, meta, requests):
    try:
        return Simulator(cfg).run(meta, requests)
    except InvariantViolation as e:
        raise CliError(EXIT_INVARIANT, f"invariant violation: {e}") from None
    except ConfigError as e:
        raise CliError(EXIT_CONFIG, f"config error: {e}") from None


def _write(path: str | Path, text: str) -> None:
    path = Path(path)
    if path.parent != Path(""):
        path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")


def cmd_run(args) -> int:
    cfg = _config(args.config)
    meta, requests = _trace(args.trace)
    print(f"run {cfg.name}: {len(requests)} requests")
    report = _simulate(cfg, meta, requests)
    _write(args.out, report.to_json())
    print(f"wrote {args.out}: {report.llc['metric']} {report.mpki:.3f}, mean latency {report.mean_latency_ns:.1f} ns")
    return EXIT_OK


def cmd_compare(args) -> int:
    cfg_a = _config(args.config_a)
    cfg_b = _config(args.config_b)
    meta, requests = _trace(args.trace)
    print(f"compare {cfg_a.name} vs {cfg_b.name}: {len(requests)} requests")
    base = _simulate(cfg_a, meta, requests)
    variant = _simulate(cfg_b, meta, requests)
    try:
        cmp = compare(base, variant)
    except TraceMismatch as e:
        raise CliError(EXIT_TRACE, f"trace error: {e}") from None
    _write(args.out, cmp.to_json())
    red = cmp.deltas["mpki_reduction_pct"]
    print(f"wrote {args.out}: MPKI reduction {red if red is None else round(red, 2)}%")
    return EXIT_OK


def _sweep_one(job):
    cfg, trace_path, out = job
    meta, requests = read_trace_file(trace_path)
    report = Simulator(cfg).run(meta, requests)
    Path(out).write_text(report.to_json(), encoding="utf-8")
    return out, report.capacity["ext_bytes_total"], report.capacity["ext_rf_bytes_per_sm"], report.mpki


def sweep_workers() -> int:
    env = os.environ.get("MORPHEUS_SIM_THREADS")
    if env:
        try:
            n = int(env)
        except ValueError:
            raise CliError(EXIT_CONFIG, f"config error: MORPHEUS_SIM_THREADS={env!r} is not an integer") from None
        if n <= 0:
            raise CliError(EXIT_CONFIG, "config error: MORPHEUS_SIM_THREADS must be positive")
        return n
    return os.cpu_count() or 1


def cmd_sweep(args) -> int:
    try:
        spec = load_sweep(args.spec)
        configs = spec.configs()
    except ConfigError as e:
        raise CliError(EXIT_CONFIG, f"config error: {e}") from None
    _trace(args.trace)  # fail fast with the trace exit code
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    stem = spec.parameter.replace(".", "_")
    jobs = [(cfg, args.trace, str(out_dir / f"{stem}={v}.json")) for cfg, v in zip(configs, spec.values)]
    workers = min(sweep_workers(), len(jobs))
    print(f"sweep {spec.parameter} over {len(jobs)} values with {workers} worker(s)")
    try:
        if workers == 1:
            results = [_sweep_one(j) for j in jobs]
        else:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                results = list(pool.map(_sweep_one, jobs))
    except InvariantViolation as e:
        raise CliError(EXIT_INVARIANT, f"invariant violation: {e}") from None
    index = {
        "parameter": spec.parameter,
        "runs": [
            {"value": v, "report": Path(out).name, "ext_bytes_total": total, "ext_rf_bytes_per_sm": rf, "rate": rate}
            for v, (out, total, rf, rate) in zip(spec.values, results)
        ],
    }
    _write(out_dir / "index.json", json.dumps(index, indent=2) + "\n")
    print(f"wrote {len(results)} reports and index.json to {out_dir}")
    return EXIT_OK


_SPEC_FIELDS = {
    "kind": lambda s: Pattern(s.strip().lower()),
    "footprint_bytes": None,
    "request_count": int,
    "write_fraction": float,
    "atomic_fraction": float,
    "seed": int,
    "inter_arrival_cycles": float,
    "alpha": float,
    "stride_bytes": int,
    "size": int,
    "sm_count": int,
    "instructions_per_request": float,
}


def load_trace_spec(path: str) -> TraceSpec:
    from .config import parse_size

    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    try:
        with open(path, encoding="utf-8") as fh:
            parser.read_file(fh)
    except OSError as e:
        raise CliError(EXIT_CONFIG, f"config error: cannot read trace spec {path}: {e.strerror}") from None
    except configparser.Error as e:
        raise CliError(EXIT_CONFIG, f"config error: malformed trace spec {path}: {e}") from None
    if "trace" not in parser:
        raise CliError(EXIT_CONFIG, "config error: trace spec needs a [trace] section")
    kwargs = {}
    for key, text in parser["trace"].items():
        if key not in _SPEC_FIELDS:
            raise CliError(EXIT_CONFIG, f"config error: unknown trace spec key {key!r}")
        conv = _SPEC_FIELDS[key] or parse_size
        try:
            kwargs[key] = conv(text)
        except (ValueError, ConfigError):
            raise CliError(EXIT_CONFIG, f"config error: [trace] {key}: cannot parse {text!r}") from None
    spec = TraceSpec(**kwargs)
    try:
        spec.validate()
    except InvalidSpec as e:
        raise CliError(EXIT_CONFIG, f"config error: {e}") from None
    return spec


def cmd_gen_trace(args) -> int:
    spec = load_trace_spec(args.spec)
    meta, requests = generate(spec)
    with open(args.out, "w", encoding="utf-8") as fh:
        write_trace(meta, requests, fh)
    print(f"wrote {len(requests)} requests to {args.out}")
    return EXIT_OK


def cmd_validate(args) -> int:
    cfg = _config(args.config)
    cap = cfg.ext.cache_mode_sms
    print(f"{args.config}: ok ({cfg.name}, {len(cap)} cache-mode SMs)")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="morpheus-sim", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="simulate one trace under one config")
    p.add_argument("--config", required=True, help="config file or preset:NAME")
    p.add_argument("--trace", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("compare", help="baseline vs variant on the same trace")
    p.add_argument("--config-a", required=True)
    p.add_argument("--config-b", required=True)
    p.add_argument("--trace", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("sweep", help="one run per value of a config parameter")
    p.add_argument("--spec", required=True)
    p.add_argument("--trace", required=True)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("gen-trace", help="synthesize a trace from a [trace] spec")
    p.add_argument("--spec", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_trace)

    p = sub.add_parser("validate", help="check a config file")
    p.add_argument("--config", required=True)
    p.set_defaults(func=cmd_validate)
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CliError as e:
        print(str(e), file=sys.stderr)
        return e.code


if __name__ == "__main__":
    sys.exit(main())
