"""Memory-access traces: the text format, a parser/serializer, and synthetic workloads.

A trace file looks like::

    #morpheus-trace v1
    #instructions 1000000
    #sms 68
    # cycle sm op address [size] [operands...]
    0 3 R 0x1000 4
    2 7 AADD 0x2040 4 1

Ops are ``R``, ``W``, ``AADD``, ``AEXCH`` and ``ACAS`` (two operands: compare,
swap).  ``#`` starts a comment anywhere on a line.
"""

from __future__ import annotations

import enum
import hashlib
import math
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Sequence, TextIO

import numpy as np

HEADER = "#morpheus-trace v1"
BLOCK_BYTES = 128


class TraceError(Exception):
    """Base class for problems with trace input."""


class HeaderMissing(TraceError):
    def __init__(self, line_no: int | None = None, text: str = ""):
        self.line_no = line_no
        self.text = text
        where = f" (line {line_no}: {text!r})" if line_no else ""
        super().__init__(f"trace must start with {HEADER!r}{where}")


class MalformedLine(TraceError):
    def __init__(self, line_no: int, text: str, reason: str):
        self.line_no = line_no
        self.text = text
        self.reason = reason
        super().__init__(f"line {line_no}: {reason}: {text!r}")


class InvalidSpec(TraceError):
    pass


class Op(enum.Enum):
    READ = "R"
    WRITE = "W"
    ATOMIC_ADD = "AADD"
    ATOMIC_EXCH = "AEXCH"
    ATOMIC_CAS = "ACAS"

    @property
    def is_atomic(self) -> bool:
        return self in _ATOMICS

    @property
    def modifies(self) -> bool:
        return self is not Op.READ

    @property
    def operand_count(self) -> int:
        return _OPERAND_COUNT[self]


_ATOMICS = frozenset({Op.ATOMIC_ADD, Op.ATOMIC_EXCH, Op.ATOMIC_CAS})
_OPERAND_COUNT = {Op.READ: 0, Op.WRITE: 0, Op.ATOMIC_ADD: 1, Op.ATOMIC_EXCH: 1, Op.ATOMIC_CAS: 2}
_OP_BY_TOKEN = {op.value: op for op in Op}


@dataclass(frozen=True, slots=True)
class MemoryRequest:
    """One LLC-level access.

    Writes carry no explicit payload: the stored value is derived from the
    request id (see :attr:`write_value`) so a trace stays one line per access
    and every write is still distinguishable when checking data integrity.
    """

    id: int
    issue_cycle: int
    origin_sm: int
    op: Op
    address: int
    size: int = 4
    operands: tuple[int, ...] = ()

    @property
    def block_address(self) -> int:
        return self.address - self.address % BLOCK_BYTES

    @property
    def offset(self) -> int:
        return self.address % BLOCK_BYTES

    @property
    def value_mask(self) -> int:
        return (1 << (8 * self.size)) - 1

    @property
    def write_value(self) -> int:
        return self.id & self.value_mask


@dataclass(frozen=True)
class TraceMeta:
    total_instructions: int | None = None
    origin_sm_count: int | None = None

    def __post_init__(self):
        if self.total_instructions is not None and self.total_instructions <= 0:
            raise InvalidSpec("total_instructions must be positive when present")


def check_request(req: MemoryRequest) -> str | None:
    """Return the first violated request invariant, or None."""
    if req.size <= 0 or req.size > BLOCK_BYTES:
        return f"size {req.size} outside 1..{BLOCK_BYTES}"
    if req.address < 0 or req.address >= 1 << 64:
        return "address outside the 64-bit range"
    if req.offset + req.size > BLOCK_BYTES:
        return f"access of {req.size} B crosses a {BLOCK_BYTES} B block boundary"
    if len(req.operands) != req.op.operand_count:
        return f"{req.op.value} takes {req.op.operand_count} operand(s), got {len(req.operands)}"
    if req.op.is_atomic and req.size > 8:
        return "atomics are at most 8 bytes wide"
    if req.issue_cycle < 0 or req.origin_sm < 0:
        return "cycle and sm must be non-negative"
    return None


def _parse_int(token: str) -> int:
    return int(token, 0)


def parse_trace(stream: TextIO | Iterable[str]) -> tuple[TraceMeta, list[MemoryRequest]]:
    """Parse a trace; requests get ids 0, 1, 2, ... in file order."""
    saw_header = False
    instructions: int | None = None
    sms: int | None = None
    requests: list[MemoryRequest] = []
    last_cycle = 0
    for line_no, raw in enumerate(stream, start=1):
        line = raw.strip()
        if not line:
            continue
        if not saw_header:
            if line != HEADER:
                raise HeaderMissing(line_no, line)
            saw_header = True
            continue
        if line.startswith("#"):
            directive = line[1:].split()
            try:
                if directive[:1] == ["instructions"] and len(directive) == 2:
                    instructions = int(directive[1])
                    if instructions <= 0:
                        raise ValueError
                elif directive[:1] == ["sms"] and len(directive) == 2:
                    sms = int(directive[1])
                    if sms <= 0:
                        raise ValueError
            except ValueError:
                raise MalformedLine(line_no, line, "bad header value") from None
            continue
        body = line.split("#", 1)[0].split()
        if len(body) < 4:
            raise MalformedLine(line_no, line, "expected <cycle> <sm> <op> <address>")
        op = _OP_BY_TOKEN.get(body[2])
        if op is None:
            raise MalformedLine(line_no, line, f"unknown op {body[2]!r}")
        try:
            cycle = int(body[0])
            sm = int(body[1])
            address = int(body[3], 16)
            rest = [_parse_int(t) for t in body[4:]]
        except ValueError:
            raise MalformedLine(line_no, line, "non-numeric field") from None
        size = rest[0] if rest else 4
        req = MemoryRequest(len(requests), cycle, sm, op, address, size, tuple(rest[1:]))
        problem = check_request(req)
        if problem is None and cycle < last_cycle:
            problem = f"cycle {cycle} goes backwards (previous {last_cycle})"
        if problem is None and sms is not None and sm >= sms:
            problem = f"sm {sm} outside declared #sms {sms}"
        if problem is not None:
            raise MalformedLine(line_no, line, problem)
        last_cycle = cycle
        requests.append(req)
    if not saw_header:
        raise HeaderMissing()
    return TraceMeta(instructions, sms), requests


def format_request(req: MemoryRequest) -> str:
    parts = [str(req.issue_cycle), str(req.origin_sm), req.op.value, f"{req.address:#x}", str(req.size)]
    parts.extend(str(v) for v in req.operands)
    return " ".join(parts)


def iter_trace_lines(meta: TraceMeta, requests: Iterable[MemoryRequest]) -> Iterator[str]:
    yield HEADER
    if meta.total_instructions is not None:
        yield f"#instructions {meta.total_instructions}"
    if meta.origin_sm_count is not None:
        yield f"#sms {meta.origin_sm_count}"
    for req in requests:
        yield format_request(req)


def serialize_trace(meta: TraceMeta, requests: Iterable[MemoryRequest]) -> str:
    return "\n".join(iter_trace_lines(meta, requests)) + "\n"


def write_trace(meta: TraceMeta, requests: Iterable[MemoryRequest], stream: TextIO) -> None:
    for line in iter_trace_lines(meta, requests):
        stream.write(line)
        stream.write("\n")


# ---------------------------------------------------------------------------
# synthetic workloads


class Pattern(enum.Enum):
    UNIFORM = "uniform"
    ZIPFIAN = "zipfian"
    STRIDED = "strided"
    STREAMING = "streaming"
    POINTER_CHASE = "pointer_chase"


@dataclass(frozen=True)
class TraceSpec:
    kind: Pattern = Pattern.UNIFORM
    footprint_bytes: int = 1 << 20
    request_count: int = 10_000
    write_fraction: float = 0.0
    atomic_fraction: float = 0.0
    seed: int = 0
    inter_arrival_cycles: float = 1.0
    alpha: float = 1.0
    stride_bytes: int = BLOCK_BYTES
    size: int = 4
    sm_count: int = 68
    instructions_per_request: float | None = None

    def validate(self) -> None:
        if not isinstance(self.kind, Pattern):
            raise InvalidSpec(f"unknown trace kind {self.kind!r}")
        if self.footprint_bytes < BLOCK_BYTES:
            raise InvalidSpec(f"footprint_bytes must be >= {BLOCK_BYTES}")
        if self.request_count < 0:
            raise InvalidSpec("request_count must be >= 0")
        for name in ("write_fraction", "atomic_fraction"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise InvalidSpec(f"{name} must lie in [0, 1]")
        if self.write_fraction + self.atomic_fraction > 1.0:
            raise InvalidSpec("write_fraction + atomic_fraction exceeds 1")
        if self.kind is Pattern.ZIPFIAN and not self.alpha > 0:
            raise InvalidSpec("zipfian alpha must be > 0")
        if self.kind is Pattern.STRIDED and self.stride_bytes <= 0:
            raise InvalidSpec("stride_bytes must be positive")
        if self.size not in (1, 2, 4, 8):
            raise InvalidSpec("size must be 1, 2, 4 or 8")
        if self.inter_arrival_cycles < 0:
            raise InvalidSpec("inter_arrival_cycles must be >= 0")
        if not 0 <= self.seed < 1 << 64:
            raise InvalidSpec("seed must fit in 64 bits")
        if self.sm_count <= 0:
            raise InvalidSpec("sm_count must be positive")
        if self.instructions_per_request is not None and self.instructions_per_request <= 0:
            raise InvalidSpec("instructions_per_request must be positive")


def zipf_cdf(n: int, alpha: float) -> np.ndarray:
    weights = np.arange(1, n + 1, dtype=np.float64) ** -alpha
    cdf = np.cumsum(weights)
    cdf /= cdf[-1]
    return cdf


def _block_numbers(spec: TraceSpec, rng: np.random.Generator) -> np.ndarray:
    blocks = spec.footprint_bytes // BLOCK_BYTES
    count = spec.request_count
    if spec.kind is Pattern.UNIFORM:
        return rng.integers(0, blocks, size=count)
    if spec.kind is Pattern.ZIPFIAN:
        ranks = np.searchsorted(zipf_cdf(blocks, spec.alpha), rng.random(count), side="right")
        ranks = np.minimum(ranks, blocks - 1)
        # scatter ranks over the footprint so hot blocks do not cluster in a few sets
        return rng.permutation(blocks)[ranks]
    if spec.kind is Pattern.STREAMING:
        return np.arange(count, dtype=np.int64) % blocks
    if spec.kind is Pattern.POINTER_CHASE:
        # Sattolo's algorithm: one cycle through every block
        nxt = np.arange(blocks, dtype=np.int64)
        for i in range(blocks - 1, 0, -1):
            j = int(rng.integers(0, i))
            nxt[i], nxt[j] = nxt[j], nxt[i]
        out = np.empty(count, dtype=np.int64)
        cur = 0
        for i in range(count):
            out[i] = cur
            cur = nxt[cur]
        return out
    raise InvalidSpec(f"no block generator for {spec.kind}")


def generate(spec: TraceSpec) -> tuple[TraceMeta, list[MemoryRequest]]:
    """Synthesize a trace; a pure function of ``spec``."""
    spec.validate()
    rng = np.random.Generator(np.random.PCG64(spec.seed))
    count = spec.request_count
    size = spec.size

    if spec.kind is Pattern.STRIDED:
        span = spec.footprint_bytes - spec.footprint_bytes % size
        addresses = (np.arange(count, dtype=np.int64) * spec.stride_bytes) % span
        addresses -= addresses % size
    else:
        blocks = _block_numbers(spec, rng)
        if spec.kind is Pattern.STREAMING:
            offsets = np.zeros(count, dtype=np.int64)
        else:
            offsets = rng.integers(0, BLOCK_BYTES // size, size=count) * size
        addresses = blocks * BLOCK_BYTES + offsets

    kind_draw = rng.random(count)
    atomic_pick = rng.integers(0, 3, size=count)
    operand_a = rng.integers(0, 1 << 16, size=count)
    operand_b = rng.integers(0, 1 << 16, size=count)
    if spec.inter_arrival_cycles > 0:
        gaps = rng.poisson(spec.inter_arrival_cycles, size=count)
        gaps[0] = 0
        cycles = np.cumsum(gaps)
    else:
        cycles = np.zeros(count, dtype=np.int64)
    sms = rng.integers(0, spec.sm_count, size=count)

    atomic_ops = (Op.ATOMIC_ADD, Op.ATOMIC_EXCH, Op.ATOMIC_CAS)
    requests = []
    for i in range(count):
        u = kind_draw[i]
        if u < spec.atomic_fraction:
            op = atomic_ops[atomic_pick[i]]
            if op is Op.ATOMIC_ADD:
                operands = (int(operand_a[i]) % 16 + 1,)
            elif op is Op.ATOMIC_EXCH:
                operands = (int(operand_a[i]),)
            else:
                operands = (int(operand_a[i]) % 4, int(operand_b[i]))
        elif u < spec.atomic_fraction + spec.write_fraction:
            op, operands = Op.WRITE, ()
        else:
            op, operands = Op.READ, ()
        requests.append(
            MemoryRequest(i, int(cycles[i]), int(sms[i]), op, int(addresses[i]), size, operands)
        )

    instructions = None
    if spec.instructions_per_request is not None and count:
        instructions = max(1, math.ceil(count * spec.instructions_per_request))
    return TraceMeta(instructions, spec.sm_count), requests


def read_trace_file(path) -> tuple[TraceMeta, list[MemoryRequest]]:
    with open(path, encoding="utf-8") as fh:
        return parse_trace(fh)


def trace_digest(meta: TraceMeta, requests: Sequence[MemoryRequest]) -> str:
    h = hashlib.sha256()
    for line in iter_trace_lines(meta, requests):
        h.update(line.encode())
        h.update(b"\n")
    return h.hexdigest()
