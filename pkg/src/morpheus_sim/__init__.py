"""Trace-driven simulator of a GPU last-level cache extended into idle SMs."""

from .config import RunConfig, load_config
from .metrics import SimReport, compare, finalize
from .timing import LatencyEnergyConfig, Simulator, run
from .trace import MemoryRequest, Op, TraceMeta, TraceSpec, generate, parse_trace

__version__ = "0.1.0"

__all__ = [
    "LatencyEnergyConfig",
    "MemoryRequest",
    "Op",
    "RunConfig",
    "SimReport",
    "Simulator",
    "TraceMeta",
    "TraceSpec",
    "compare",
    "finalize",
    "generate",
    "load_config",
    "parse_trace",
    "run",
]
