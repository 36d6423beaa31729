"""Cyclic Golomb-ruler shard placement.

Shard type ``i`` is hosted by the groups ``H_i = {(i - g) mod N : g in ruler}``
and group ``w`` hosts the types ``T_w = {(w + g) mod N : g in ruler}``. When the
ruler's differences stay distinct modulo ``N``, two distinct types share at
most one host group.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations
from typing import Iterable

__all__ = [
    "GolombRuler",
    "Placement",
    "PlacementInfeasibleError",
    "UnsupportedRedundancyError",
    "OPTIMAL_RULERS",
    "optimal_ruler",
    "build_placement",
    "wiped_out_types",
]


class UnsupportedRedundancyError(ValueError):
    pass


class PlacementInfeasibleError(ValueError):
    pass


# Known optimal Golomb rulers, lexicographically smallest among the optimal
# rulers of each order (mirror images included).
OPTIMAL_RULERS: dict[int, tuple[int, ...]] = {
    2: (0, 1),
    3: (0, 1, 3),
    4: (0, 1, 4, 6),
    5: (0, 1, 4, 9, 11),
    6: (0, 1, 4, 10, 12, 17),
    7: (0, 1, 4, 10, 18, 23, 25),
    8: (0, 1, 4, 9, 15, 22, 32, 34),
    9: (0, 1, 5, 12, 25, 27, 35, 41, 44),
    10: (0, 1, 6, 10, 23, 26, 34, 41, 53, 55),
    11: (0, 1, 4, 13, 28, 33, 47, 54, 64, 70, 72),
    12: (0, 2, 6, 24, 29, 40, 43, 55, 68, 75, 76, 85),
    13: (0, 2, 5, 25, 37, 43, 59, 70, 85, 89, 98, 99, 106),
    14: (0, 4, 6, 20, 35, 52, 59, 77, 78, 86, 89, 99, 122, 127),
    15: (0, 4, 20, 30, 57, 59, 62, 76, 100, 111, 123, 136, 144, 145, 151),
    16: (0, 1, 4, 11, 26, 32, 56, 68, 76, 115, 117, 134, 150, 163, 168, 177),
    17: (0, 5, 7, 17, 52, 56, 67, 80, 81, 100, 122, 138, 159, 165, 168, 191, 199),
    18: (0, 2, 10, 22, 53, 56, 82, 83, 89, 98, 130, 148, 153, 167, 188, 192,
         205, 216),
    19: (0, 1, 6, 25, 32, 72, 100, 108, 120, 130, 153, 169, 187, 190, 204,
         231, 233, 242, 246),
    20: (0, 1, 8, 11, 68, 77, 94, 116, 121, 156, 158, 179, 194, 208, 212,
         228, 240, 253, 259, 283),
    21: (0, 2, 24, 56, 77, 82, 83, 95, 129, 144, 179, 186, 195, 255, 265,
         285, 293, 296, 310, 329, 333),
    22: (0, 1, 9, 14, 43, 70, 106, 122, 124, 128, 159, 179, 204, 223, 253,
         263, 270, 291, 330, 341, 353, 356),
    23: (0, 3, 7, 17, 61, 66, 91, 99, 114, 159, 171, 199, 200, 226, 235,
         246, 277, 316, 329, 348, 350, 366, 372),
    24: (0, 9, 33, 37, 38, 97, 122, 129, 140, 142, 152, 191, 205, 208, 252,
         278, 286, 326, 332, 353, 368, 384, 403, 425),
    25: (0, 12, 29, 39, 72, 91, 146, 157, 160, 161, 166, 191, 207, 214, 258,
         290, 316, 354, 372, 394, 396, 431, 459, 467, 480),
    26: (0, 1, 33, 83, 104, 110, 124, 163, 185, 200, 203, 249, 251, 258, 314,
         318, 343, 356, 386, 430, 440, 456, 464, 475, 487, 492),
    27: (0, 3, 15, 41, 66, 95, 97, 106, 142, 152, 220, 221, 225, 242, 295,
         330, 338, 354, 382, 388, 402, 415, 486, 504, 523, 546, 553),
}

MIN_REDUNDANCY = min(OPTIMAL_RULERS)
MAX_REDUNDANCY = max(OPTIMAL_RULERS)


@dataclass(frozen=True)
class GolombRuler:
    marks: tuple[int, ...]

    def __post_init__(self) -> None:
        if not self.marks or self.marks[0] != 0:
            raise ValueError(f"ruler must start at 0: {self.marks}")
        if any(b <= a for a, b in zip(self.marks, self.marks[1:])):
            raise ValueError(f"ruler marks must be strictly increasing: {self.marks}")

    @property
    def length(self) -> int:
        """Number of marks (the redundancy degree it induces)."""
        return len(self.marks)

    @property
    def span(self) -> int:
        """Largest mark."""
        return self.marks[-1]

    def differences(self, modulus: int | None = None) -> list[int]:
        """All signed pairwise differences, optionally reduced mod ``modulus``."""
        out = []
        for a, b in combinations(self.marks, 2):
            for d in (b - a, a - b):
                out.append(d % modulus if modulus else d)
        return out

    def is_golomb(self, modulus: int | None = None) -> bool:
        diffs = self.differences(modulus)
        return 0 not in diffs and len(set(diffs)) == len(diffs)


def optimal_ruler(r: int) -> GolombRuler:
    """Return the optimal Golomb ruler with ``r`` marks."""
    try:
        return GolombRuler(OPTIMAL_RULERS[r])
    except KeyError:
        raise UnsupportedRedundancyError(
            f"redundancy r={r} outside supported range "
            f"[{MIN_REDUNDANCY}, {MAX_REDUNDANCY}]"
        ) from None


def min_groups(r: int) -> int:
    """Smallest N allowed by the construction caveat N >= 2*g_{r-1} - 1."""
    return 2 * optimal_ruler(r).span - 1


@dataclass(frozen=True)
class Placement:
    n_groups: int
    redundancy: int
    ruler: GolombRuler
    host_sets: tuple[frozenset[int], ...] = field(repr=False)
    type_sets: tuple[frozenset[int], ...] = field(repr=False)
    # Host / type lists in ruler-mark order; the type list of a group is its
    # initial stack order (mark 0 first, so stack 1 covers every type).
    hosts: tuple[tuple[int, ...], ...] = field(repr=False)
    types: tuple[tuple[int, ...], ...] = field(repr=False)

    @classmethod
    def from_ruler(cls, n_groups: int, ruler: GolombRuler) -> "Placement":
        n = n_groups
        hosts = tuple(tuple((i - g) % n for g in ruler.marks) for i in range(n))
        types = tuple(tuple((w + g) % n for g in ruler.marks) for w in range(n))
        return cls(
            n_groups=n,
            redundancy=ruler.length,
            ruler=ruler,
            host_sets=tuple(frozenset(h) for h in hosts),
            type_sets=tuple(frozenset(t) for t in types),
            hosts=hosts,
            types=types,
        )

    def max_pair_overlap(self) -> int:
        """max_{i != j} |H_i & H_j|, computed through shared host groups."""
        worst = 0
        for i in range(self.n_groups):
            seen: dict[int, int] = {}
            for w in self.hosts[i]:
                for j in self.types[w]:
                    if j != i:
                        seen[j] = seen.get(j, 0) + 1
            if seen:
                worst = max(worst, max(seen.values()))
        return worst


def build_placement(n_groups: int, r: int) -> Placement:
    ruler = optimal_ruler(r)
    need = 2 * ruler.span - 1
    if r > n_groups or n_groups < need:
        raise PlacementInfeasibleError(
            f"N={n_groups} too small for r={r}: need N >= {max(need, r)}"
        )
    if not ruler.is_golomb(n_groups):
        raise PlacementInfeasibleError(
            f"ruler {ruler.marks} has colliding differences modulo N={n_groups}"
        )
    placement = Placement.from_ruler(n_groups, ruler)
    for i, hs in enumerate(placement.host_sets):
        if len(hs) != r:
            raise PlacementInfeasibleError(f"type {i} has {len(hs)} hosts, expected {r}")
    return placement


def wiped_out_types(placement: Placement, failed: Iterable[int]) -> set[int]:
    """Shard types whose every host group is in ``failed``."""
    failed = set(failed)
    if len(failed) < placement.redundancy:
        return set()
    # only types hosted by a failed group can be wiped out
    candidates = {i for w in failed for i in placement.types[w]}
    return {i for i in candidates if placement.host_sets[i] <= failed}
