"""Shared builders for simulator-level tests."""

from morpheus_sim.config import RunConfig
from morpheus_sim.timing import Simulator


def make_config(**sections):
    """``make_config(gpu={"cache_mode_sms": "1"}, ...)`` with string values."""
    return RunConfig.from_sections({s: {k: str(v) for k, v in kv.items()} for s, kv in sections.items()})


def one_sm(mode="bloom", mov="native", **extra):
    sec = {"gpu": {"cache_mode_sms": 1}, "predictor": {"mode": mode}, "timing": {"indirect_mov_mode": mov}}
    for s, kv in extra.items():
        sec.setdefault(s, {}).update(kv)
    return make_config(**sec)


def blocks_in_set(cfg, set_id, n, start=0):
    amap = Simulator(cfg).ext.amap
    out = []
    b = start
    while len(out) < n:
        _, ext, index = amap.locate(b)
        if ext and index == set_id:
            out.append(b)
        b += 1
    return out


def conventional_blocks(cfg, n):
    amap = Simulator(cfg).ext.amap
    return [b for b in range(n * 4) if not amap.locate(b)[1]][:n]
