"""Static address separation between the conventional and the extended LLC.

Block numbers are split as follows (P partitions, Sc conventional and Se
extended index slots in partition p, U = Sc + Se):

    p = block mod P                         LLC partition
    q = block // P
    u = q mod U                             unified set index
    u <  Sc  -> conventional set p + P*u
    u >= Sc  -> dense extended index x = (q // U) * Se + (u - Sc)

The extended index is then spread over the extended sets owned by the
partition (sets with ``set_id mod P == p``) through a slot table in which
each set appears in proportion to its byte capacity.  With no extended
capacity, the conventional index reduces to ``block mod (P*Sc)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

from .bloom import mix64

IDENTITY_HASH = "identity"
MIXED_HASH = "mixed"

INTERLEAVE_NOTE = (
    "partition = block mod P; unified index u = (block // P) mod (Sc+Se); "
    "u < Sc -> conventional set p + P*u; otherwise extended, capacity-weighted over the partition's sets"
)


class OutOfPartition(ValueError):
    """The address belongs to the conventional LLC."""


@dataclass(frozen=True)
class AddressSeparator:
    partition: int
    conventional_sets: int
    extended_sets: int

    @property
    def conventional_set_range(self) -> range:
        return range(0, self.conventional_sets)

    @property
    def extended_set_range(self) -> range:
        return range(self.conventional_sets, self.conventional_sets + self.extended_sets)

    @property
    def unified_sets(self) -> int:
        return self.conventional_sets + self.extended_sets

    def is_extended(self, unified_index: int) -> bool:
        return unified_index >= self.conventional_sets


def _slot_table(set_ids: Sequence[int], weights: Sequence[int]) -> list[int]:
    """Round-robin table where set ``i`` appears ``weights[i]`` times."""
    table = []
    for r in range(max(weights, default=0)):
        table.extend(s for s, w in zip(set_ids, weights) if w > r)
    return table


class AddressMap:
    def __init__(
        self,
        partitions: int,
        conv_sets_per_partition: int,
        conv_bytes_per_partition: int,
        ext_set_bytes: Sequence[int],
        set_hash: str = IDENTITY_HASH,
    ):
        if partitions <= 0 or conv_sets_per_partition <= 0:
            raise ValueError("need at least one partition and one conventional set")
        if set_hash not in (IDENTITY_HASH, MIXED_HASH):
            raise ValueError(f"unknown extended set hash {set_hash!r}")
        self.partitions = partitions
        self.set_hash = set_hash
        self.separators: list[AddressSeparator] = []
        self.tables: list[list[int]] = []
        self._sc: list[int] = []
        self._se: list[int] = []
        for p in range(partitions):
            owned = list(range(p, len(ext_set_bytes), partitions))
            caps = [ext_set_bytes[s] for s in owned]
            ext_bytes = sum(caps)
            if ext_bytes:
                se = max(1, math.floor(conv_sets_per_partition * ext_bytes / conv_bytes_per_partition + 0.5))
                g = 0
                for c in caps:
                    g = math.gcd(g, c)
                table = _slot_table(owned, [c // g for c in caps])
            else:
                se = 0
                table = []
            self.separators.append(AddressSeparator(p, conv_sets_per_partition, se))
            self.tables.append(table)
            self._sc.append(conv_sets_per_partition)
            self._se.append(se)

    def partition_of(self, block: int) -> int:
        return block % self.partitions

    def locate(self, block: int) -> tuple[int, bool, int]:
        """Return ``(partition, is_extended, index)``.

        ``index`` is the global conventional set index or the extended set id.
        """
        P = self.partitions
        p = block % P
        q = block // P
        sc = self._sc[p]
        se = self._se[p]
        u = q % (sc + se)
        if u < sc:
            return p, False, p + P * u
        x = (q // (sc + se)) * se + (u - sc)
        if self.set_hash == MIXED_HASH:
            x = mix64(x)
        table = self.tables[p]
        return p, True, table[x % len(table)]

    def extended_set_of(self, block: int) -> int:
        p, ext, index = self.locate(block)
        if not ext:
            raise OutOfPartition(f"block {block:#x} maps to the conventional LLC (partition {p})")
        return index
