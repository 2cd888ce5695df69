import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from morpheus_sim.bdi import Level, classify
from morpheus_sim.bloom import Prediction, PredictorSet
from morpheus_sim.extended import (
    Backing,
    ExtendedLlc,
    ExtendedSet,
    ExtLlcConfig,
    InvalidConfig,
    OutcomeKind,
    SetBusy,
    aux_registers,
    capacity_bytes,
    fill,
    service,
    tag_lookup,
)
from morpheus_sim.memory import BackingStore, FillPattern, apply_request
from morpheus_sim.trace import Op
from conftest import ListLru, req

KIB = 1024
RF = Backing.REGISTER_FILE


def test_capacity_rf48():
    cap = capacity_bytes(ExtLlcConfig(cache_mode_sms=(0,), rf_warps=48, l1_warps=0))
    assert cap.rf_blocks_per_set == 32
    assert cap.per_sm_bytes == 192 * KIB


def test_capacity_default_split():
    cap = capacity_bytes(ExtLlcConfig(cache_mode_sms=(0, 1)))
    assert (cap.rf_blocks_per_set, cap.l1_blocks_per_set) == (50, 64)
    assert cap.per_sm_bytes == 328 * KIB and cap.total_bytes == 656 * KIB


def test_capacity_no_sms():
    assert capacity_bytes(ExtLlcConfig()).total_bytes == 0


def test_capacity_without_reservation_uses_fixed_sets():
    cap = capacity_bytes(ExtLlcConfig(cache_mode_sms=(0,), rf_warps=48, l1_warps=0, aux_reservation=False))
    assert cap.rf_bytes_per_sm == 48 * 32 * 128


def test_rf_capacity_peaks_at_eight_warps():
    per_sm = {w: capacity_bytes(ExtLlcConfig(cache_mode_sms=(0,), rf_warps=w, l1_warps=0)).rf_bytes_per_sm
              for w in (1, 8, 16, 32, 48)}
    assert max(per_sm, key=per_sm.get) == 8
    assert per_sm[8] == 239 * KIB and per_sm[48] == 192 * KIB


def test_aux_interpolation():
    assert aux_registers(1) == 17 and aux_registers(48) == 10 and aux_registers(40) == 12
    assert aux_registers(64) == 10


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(rf_warps=40, l1_warps=16),
        dict(cache_mode_sms=tuple(range(52))),
        dict(cache_mode_sms=(0, 0)),
        dict(cache_mode_sms=(68,)),
        dict(cache_mode_sms=(0,), rf_warps=0, l1_warps=0),
        dict(set_hash="crc"),
    ],
)
def test_invalid_configs(kwargs):
    with pytest.raises(InvalidConfig):
        ExtLlcConfig(**kwargs).validate()


def test_75_percent_message():
    with pytest.raises(InvalidConfig, match="75%"):
        ExtLlcConfig(cache_mode_sms=tuple(range(52))).validate()
    ExtLlcConfig(cache_mode_sms=tuple(range(51))).validate()


def block(n):
    return n.to_bytes(4, "little") * 32


def test_tag_lookup_examples():
    s = ExtendedSet(0, (0, 0), RF, 32)
    assert not tag_lookup(s, 99).hit
    for t in range(5):
        s.insert(t, block(t), False)
    s.insert(99, block(99), False)
    r = tag_lookup(s, 99)
    assert r.hit and r.block_index == 5


def test_duplicate_tags_resolve_to_first_way():
    s = ExtendedSet(0, (0, 0), RF, 8)
    for t in range(8):
        s.insert(t, block(t), False)
    s.lru.tags[3] = s.lru.tags[6] = 42
    first = next(w for w, t in enumerate(s.lru.tags) if t == 42)
    assert tag_lookup(s, 42).block_index == first == 3
    with pytest.raises(AssertionError):
        s.check()


def test_read_your_writes_and_write_miss_victim():
    mem = BackingStore(FillPattern.ZERO)
    s = ExtendedSet(0, (0, 0), RF, 32, compression=False)
    for t in range(32):
        service(s, req(t, Op.READ, t * 128), mem)
    service(s, req(100, Op.WRITE, 5 * 128 + 8), mem)
    out = service(s, req(101, Op.READ, 5 * 128 + 8), mem)
    assert out.kind is OutcomeKind.HIT_DATA and out.value == 100
    for t in range(32):
        if t != 7:
            service(s, req(200 + t, Op.READ, t * 128), mem)
    expected = min(range(32), key=lambda w: (s.lru.counter(w), w))
    victim_tag = s.lru.tags[expected]
    assert victim_tag == 7
    out = service(s, req(300, Op.WRITE, 40 * 128), mem)
    assert out.kind is OutcomeKind.MISS_FILLED and not out.hit and out.evictions == 1
    assert 7 not in s and 40 in s


def test_atomic_adds_serialize():
    mem = BackingStore(FillPattern.RAMP, seed=3)
    initial = int.from_bytes(mem.peek_block(0x800)[4:8], "little")
    s = ExtendedSet(0, (0, 0), RF, 4, compression=True)
    rng = random.Random(0)
    for i in range(1000):
        out = service(s, req(i, Op.ATOMIC_ADD, 0x804, sm=rng.randrange(68), operands=(1,)), mem)
        assert out.kind is OutcomeKind.ATOMIC_RESULT and out.value == initial + i
        if i % 50 == 0:  # evict the block now and then
            service(s, req(i, Op.READ, 0x10000 + i * 128), mem)
            for k in range(4):
                service(s, req(i, Op.READ, 0x20000 + k * 128), mem)
    value = service(s, req(0, Op.READ, 0x804), mem).value
    assert value == initial + 1000


def test_busy_set_refuses_second_request():
    s = ExtendedSet(0, (0, 0), RF, 4)
    mem = BackingStore()
    service(s, req(0, Op.READ, 0), mem, hold=True)
    with pytest.raises(SetBusy):
        service(s, req(1, Op.READ, 128), mem)
    s.busy = False
    service(s, req(1, Op.READ, 128), mem)


def test_fill_skips_resident_block():
    mem = BackingStore()
    s = ExtendedSet(0, (0, 0), Backing.L1, 4)
    assert fill(s, 0x80, mem)[0]
    assert fill(s, 0x80, mem) == (False, ())


def test_bypass_when_no_slot_can_hold_block():
    s = ExtendedSet(0, (0, 0), RF, 4, compression=True)
    from morpheus_sim.bdi import LevelAllocation
    s.alloc = LevelAllocation(1, 0, 0)
    s.lru.resize(4)
    ok, out = s.insert(1, bytes(range(128)), False)  # incompressible
    assert not ok and out == [] and s.bypasses == 1


def functional_oracle_sequence(trace, ways):
    ref = ListLru(ways)
    return [ref.access(a // 128)[0] for a in trace]


def test_matches_reference_cache_without_compression():
    rng = random.Random(11)
    mem = BackingStore()
    for ways, backing in ((50, RF), (64, Backing.L1), (3, RF)):
        s = ExtendedSet(0, (0, 0), backing, ways)
        trace = [rng.randrange(ways * 3) * 128 for _ in range(10**4)]
        ops = [Op.WRITE if rng.random() < 0.3 else Op.READ for _ in trace]
        got = [service(s, req(i, op, a), mem).hit for i, (op, a) in enumerate(zip(ops, trace))]
        assert got == functional_oracle_sequence(trace, ways)


class FlatMemory:
    def __init__(self, pattern, seed):
        self.store = BackingStore(pattern, seed)

    def apply(self, r):
        value, new = apply_request(self.store.peek_block(r.block_address), r)
        if new is not None:
            self.store.blocks[r.block_address] = new
        return value


def random_request(rng, i, blocks):
    b = rng.randrange(blocks)
    u = rng.random()
    if u < 0.1:
        op = rng.choice([Op.ATOMIC_ADD, Op.ATOMIC_EXCH, Op.ATOMIC_CAS])
        operands = {Op.ATOMIC_ADD: (rng.randrange(1, 9),), Op.ATOMIC_EXCH: (rng.randrange(1 << 20),),
                    Op.ATOMIC_CAS: (rng.randrange(4), rng.randrange(1 << 30))}[op]
        return req(i, op, b * 128 + 4 * rng.randrange(32), operands=operands)
    if u < 0.4:
        size = rng.choice([1, 2, 4, 8])
        return req(i, Op.WRITE, b * 128 + size * rng.randrange(128 // size), size=size)
    return req(i, Op.READ, b * 128 + 4 * rng.randrange(32))


@pytest.mark.parametrize("seed", range(4))
def test_data_integrity_with_compression_and_epochs(seed):
    rng = random.Random(seed)
    mem = BackingStore(FillPattern.MIXED, seed)
    flat = FlatMemory(FillPattern.MIXED, seed)
    s = ExtendedSet(0, (0, 0), RF, 8, compression=True)
    pred = PredictorSet(lambda: s.capacity)
    s.on_forget = pred.forget
    for i in range(6000):
        r = random_request(rng, i, 40)
        tag = r.block_address // 128
        if tag in s:
            assert pred.predict(tag) is Prediction.HIT
        out = service(s, r, mem, pred.record_access)
        assert out.value == flat.apply(r)
        assert s.occupancy <= s.capacity == s.alloc.capacity
        if i % 97 == 0:
            for ev in s.end_epoch():
                if ev.dirty:
                    mem.write_block(ev.tag * 128, ev.data)
            s.check()
        for t in s.data:
            assert pred.predict(t) is Prediction.HIT
    for tag, data in s.dirty_blocks():
        mem.write_block(tag * 128, data)
    for addr, data in flat.store.blocks.items():
        assert mem.peek_block(addr) == data


def test_compression_grows_capacity():
    s = ExtendedSet(0, (0, 0), RF, 8, compression=True)
    mem = BackingStore(FillPattern.RAMP)
    for t in range(8):
        service(s, req(t, Op.READ, t * 128), mem)
    s.end_epoch()
    assert s.alloc.as_tuple() == (8, 0, 0) and s.capacity == 32
    for t in range(8, 32):
        out = service(s, req(t, Op.READ, t * 128), mem)
        assert out.evictions == 0
    assert s.occupancy == 32
    assert all(s.stored[t] == Level.HIGH for t in s.data)
    s.check()


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 30), st.sampled_from(list(FillPattern))), min_size=1, max_size=120),
       st.integers(1, 10))
def test_capacity_law_property(stream, slots):
    s = ExtendedSet(0, (0, 0), RF, slots, compression=True)
    pred = PredictorSet(lambda: s.capacity, 32)
    s.on_forget = pred.forget
    stores = {p: BackingStore(p, 1) for p in FillPattern}
    for i, (b, pattern) in enumerate(stream):
        service(s, req(i, Op.READ, b * 128), stores[pattern], pred.record_access)
        if i % 7 == 3:
            s.end_epoch()
        s.check()
        assert s.occupancy <= s.alloc.capacity
        assert all(pred.predict(t) is Prediction.HIT for t in s.data)


def test_llc_layout():
    llc = ExtendedLlc(ExtLlcConfig(cache_mode_sms=(60, 61)))
    assert len(llc.sets) == 96
    loc = llc.location(50)
    assert (loc.sm_id, loc.warp_id, loc.backing) == (61, 2, RF)
    assert llc.location(40).backing is Backing.L1
    assert sum(s.capacity for s in llc.sets) * 128 == llc.capacity.total_bytes
    with pytest.raises(InvalidConfig):
        ExtendedSet(0, (0, 0), Backing.SHARED_MEMORY, 4)
    assert classify(bytes(128)) is Level.HIGH
