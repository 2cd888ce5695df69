import itertools
import os
import random
import struct
from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from morpheus_sim.bdi import (
    CompressedBlock,
    EpochCounters,
    Level,
    LevelAllocation,
    MalformedPayload,
    WrongLength,
    apportion,
    classify,
    compress,
    decompress,
    epoch_update,
    fits,
)


def segs(values):
    return struct.pack("<32I", *[v & 0xFFFFFFFF for v in values])


def reference_level(block):
    """Loop oracle: signed 32-bit deltas from segment 0."""
    s = struct.unpack("<32I", block)
    deltas = [((x - s[0] + 2**31) % 2**32) - 2**31 for x in s]
    if all(-128 <= d < 128 for d in deltas):
        return Level.HIGH
    if all(-32768 <= d < 32768 for d in deltas):
        return Level.LOW
    return Level.UNCOMPRESSED


def test_zero_block():
    cb = compress(bytes(128))
    assert cb.level is Level.HIGH and cb.base == 0 and cb.payload == bytes(32)


def test_small_ramp_is_high():
    block = segs(range(1000, 1032))
    cb = compress(block)
    assert cb.level is Level.HIGH and cb.base == 1000
    assert list(cb.payload) == list(range(32))
    assert decompress(cb) == block


def test_decode_constructed_high():
    cb = CompressedBlock(Level.HIGH, 100, bytes(range(32)))
    assert struct.unpack("<32I", decompress(cb)) == tuple(range(100, 132))


def test_random_block_uncompressed():
    block = os.urandom(128)
    cb = compress(block)
    assert cb.level is Level.UNCOMPRESSED
    assert cb.payload == block and decompress(cb) == block


@pytest.mark.parametrize(
    "values,level",
    [
        ([5] + [5 + 127] * 31, Level.HIGH),
        ([5] + [5 - 128] * 31, Level.HIGH),
        ([5] + [5 + 128] * 31, Level.LOW),
        ([0] + [-1] * 31, Level.HIGH),  # wraps to 0xffffffff, delta -1
        ([0x7FFFFFFF, 0x80000000] * 16, Level.HIGH),  # delta +1 across the sign boundary
        ([0] + [32767] * 31, Level.LOW),
        ([0] + [-32768] * 31, Level.LOW),
        ([0] + [32768] * 31, Level.UNCOMPRESSED),
        ([0] * 31 + [1 << 20], Level.UNCOMPRESSED),
        ([0xFFFFFFFF] + [0x7FFE] * 31, Level.LOW),
        ([0xFFFFFFFF] + [0x7FFF] * 31, Level.UNCOMPRESSED),
    ],
)
def test_classification_boundaries(values, level):
    block = segs(values)
    assert classify(block) is level is reference_level(block)
    assert decompress(compress(block)) == block


def test_wrong_length():
    with pytest.raises(WrongLength):
        compress(bytes(127))
    with pytest.raises(MalformedPayload):
        CompressedBlock(Level.LOW, 0, bytes(32))
    with pytest.raises(MalformedPayload):
        CompressedBlock(Level.HIGH, 1 << 32, bytes(32))


def structured(rng):
    base = rng.randrange(2**32)
    spread = rng.choice([1, 127, 128, 200, 32767, 40000, 2**31])
    return segs([base + rng.randrange(-spread, spread + 1) for _ in range(32)])


def test_roundtrip_and_oracle_agreement():
    rng = random.Random(7)
    for i in range(10**5):
        block = rng.randbytes(128) if i % 2 else structured(rng)
        cb = compress(block)
        assert cb.level is reference_level(block)
        assert decompress(cb) == block


@settings(max_examples=500, deadline=None)
@given(st.lists(st.integers(0, 2**32 - 1), min_size=32, max_size=32), st.integers(0, 2**32 - 1),
       st.sampled_from([127, 128, 32767, 32768, 2**32]))
def test_roundtrip_property_and_monotone_levels(noise, base, spread):
    block = segs([base + n % spread for n in noise])
    cb = compress(block)
    assert decompress(cb) == block
    assert cb.level is reference_level(block)
    if cb.level is Level.HIGH:
        # a High block also satisfies the Low predicate
        s = struct.unpack("<32I", block)
        assert all(abs(((x - s[0] + 2**31) % 2**32) - 2**31) < 32768 for x in s)
    assert len(cb.payload) == cb.level.payload_bytes


def hamilton_oracle(counts, total):
    w = sum(counts)
    quotas = [Fraction(c * total, w) for c in counts]
    seats = [int(q) for q in quotas]
    rest = sorted(range(len(counts)), key=lambda i: (-(quotas[i] - seats[i]), i))
    for i in rest[: total - sum(seats)]:
        seats[i] += 1
    return tuple(seats)


def test_epoch_update_examples():
    c = EpochCounters(0, 0, 40)
    new, lost = epoch_update(c, LevelAllocation())
    assert new == LevelAllocation(0, 0, 32) and lost == {}

    new, lost = epoch_update(EpochCounters(100, 0, 0), LevelAllocation())
    assert new.as_tuple() == (32, 0, 0) and new.capacity == 128
    assert lost == {Level.UNCOMPRESSED: 32}

    c = EpochCounters(50, 25, 25)
    new, _ = epoch_update(c, LevelAllocation())
    assert new.as_tuple() == (16, 8, 8) and new.capacity == 88
    assert c.total() == 0  # counters reset


def test_empty_epoch_keeps_allocation():
    alloc = LevelAllocation(3, 4, 5)
    assert epoch_update(EpochCounters(), alloc) == (alloc, {})


@settings(max_examples=300, deadline=None)
@given(st.tuples(st.integers(0, 500), st.integers(0, 500), st.integers(0, 500)), st.integers(0, 64))
def test_apportion_matches_fraction_oracle(counts, total):
    if sum(counts) == 0:
        with pytest.raises(ValueError):
            apportion(counts, total)
        return
    seats = apportion(counts, total)
    assert seats == hamilton_oracle(counts, total)
    assert sum(seats) == total
    new, _ = epoch_update(EpochCounters(*counts), LevelAllocation(0, 0, total))
    assert new.slots == total  # slots are conserved
    assert new.capacity == 4 * new.high + 2 * new.low + new.uncompressed


def fits_oracle(counts, alloc):
    """Exhaustive: try every split of each level's blocks over admissible slot levels."""
    h, l, u = counts
    caps = [alloc.block_capacity(lv) for lv in Level]
    for h0, h1 in itertools.product(range(h + 1), repeat=2):
        if h0 + h1 > h:
            continue
        h2 = h - h0 - h1
        for l1 in range(l + 1):
            l2 = l - l1
            if h0 <= caps[0] and h1 + l1 <= caps[1] and h2 + l2 + u <= caps[2]:
                return True
    return False


@settings(max_examples=300, deadline=None)
@given(st.tuples(st.integers(0, 9), st.integers(0, 9), st.integers(0, 6)),
       st.tuples(st.integers(0, 3), st.integers(0, 4), st.integers(0, 6)))
def test_fits_matches_exhaustive_oracle(counts, alloc):
    a = LevelAllocation(*alloc)
    assert fits(counts, a) == fits_oracle(counts, a)


def test_allocation_capacity():
    assert LevelAllocation().capacity == 32
    assert LevelAllocation.uncompressed_only(17).as_tuple() == (0, 0, 17)
    with pytest.raises(ValueError):
        LevelAllocation(-1, 0, 0)
