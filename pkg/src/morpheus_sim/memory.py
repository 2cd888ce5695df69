"""Main-memory image and the data semantics of individual requests."""

from __future__ import annotations

import enum
import random

from .bdi import _REP, _lane_add
from .bloom import mix64
from .trace import MemoryRequest, Op

BLOCK_BYTES = 128
_INDEX = sum(i << (32 * i) for i in range(BLOCK_BYTES // 4))  # lane i holds i


class FillPattern(enum.Enum):
    ZERO = "zero"
    RAMP = "ramp"  # every block BDI-high compressible
    RANDOM = "random"  # incompressible
    MIXED = "mixed"  # half high, a quarter low, a quarter incompressible


def initial_block(block_number: int, pattern: FillPattern, seed: int = 0) -> bytes:
    if pattern is FillPattern.ZERO:
        return bytes(BLOCK_BYTES)
    h = mix64(block_number ^ mix64(seed + 0x5EED))
    if pattern is FillPattern.MIXED:
        kind = h & 3
        kind = "ramp" if kind < 2 else ("low" if kind == 2 else "random")
    else:
        kind = pattern.value
    if kind == "random":
        return random.Random(h).randbytes(BLOCK_BYTES)
    base = (h >> 8) & 0xFFFFFFFF
    step = 1 if kind == "ramp" else 300
    # segment i = base + step * i (mod 2**32)
    return _lane_add(base * _REP, step * _INDEX).to_bytes(BLOCK_BYTES, "little")


class BackingStore:
    """Byte-accurate DRAM image, populated lazily from a fill pattern."""

    def __init__(self, pattern: FillPattern = FillPattern.MIXED, seed: int = 0):
        self.pattern = pattern
        self.seed = seed
        self.blocks: dict[int, bytes] = {}
        self.reads = 0
        self.writes = 0

    def read_block(self, block_address: int) -> bytes:
        self.reads += 1
        return self.peek_block(block_address)

    def peek_block(self, block_address: int) -> bytes:
        data = self.blocks.get(block_address)
        if data is None:
            data = initial_block(block_address // BLOCK_BYTES, self.pattern, self.seed)
            self.blocks[block_address] = data
        return data

    def write_block(self, block_address: int, data: bytes) -> None:
        if len(data) != BLOCK_BYTES:
            raise ValueError("blocks are written whole")
        self.writes += 1
        self.blocks[block_address] = data


def apply_request(block: bytes, req: MemoryRequest) -> tuple[int | None, bytes | None]:
    """Execute ``req`` against the block holding it.

    Returns ``(value, new_block)``: the value read (old value for atomics,
    None for plain writes) and the modified block (None when unchanged).
    """
    lo = req.offset
    hi = lo + req.size
    op = req.op
    if op is Op.READ:
        return int.from_bytes(block[lo:hi], "little"), None
    mask = req.value_mask
    if op is Op.WRITE:
        new = req.write_value
        old = None
    else:
        old = int.from_bytes(block[lo:hi], "little")
        if op is Op.ATOMIC_ADD:
            new = (old + req.operands[0]) & mask
        elif op is Op.ATOMIC_EXCH:
            new = req.operands[0] & mask
        else:  # compare-and-swap
            new = req.operands[1] & mask if old == req.operands[0] & mask else old
    return old, block[:lo] + new.to_bytes(req.size, "little") + block[hi:]
