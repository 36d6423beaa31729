"""Bipartite matching primitives over (shard type, stack slot) graphs.

Left vertices are shard types ``0..N-1``. Right vertices are slots ``(w, t)``:
surviving group ``w`` at stack position ``t`` (0-based here, so ``t < S``).
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

from .placement import Placement

__all__ = [
    "SlotGraph",
    "Assignment",
    "MatchingInfeasibleError",
    "hopcroft_karp",
    "max_matching_size",
    "fixed_graph",
    "free_graph",
    "incumbent_matching",
    "min_movement_assignment",
]

UNMATCHED = -1


class MatchingInfeasibleError(RuntimeError):
    pass


@dataclass(frozen=True)
class SlotGraph:
    n_types: int
    slots: tuple[tuple[int, int], ...]
    # adjacency[i] lists slot indices admissible for type i, ascending
    adjacency: tuple[tuple[int, ...], ...]
    mode: str
    depth: int

    @property
    def n_vertices(self) -> int:
        return self.n_types + len(self.slots)

    @property
    def n_edges(self) -> int:
        return sum(len(a) for a in self.adjacency)


@dataclass(frozen=True)
class Assignment:
    slot_of: dict[int, tuple[int, int]]
    movement_cost: int


def _slot_index(survivors: Iterable[int], depth: int, r: int):
    slots = []
    index = {}
    for w in sorted(survivors):
        for t in range(min(depth, r)):
            index[(w, t)] = len(slots)
            slots.append((w, t))
    return tuple(slots), index


def fixed_graph(
    placement: Placement,
    stacks: Mapping[int, Sequence[int]],
    survivors: Iterable[int],
    depth: int,
) -> SlotGraph:
    """Each slot (w, t) is adjacent only to its incumbent type stacks[w][t]."""
    slots, _ = _slot_index(survivors, depth, placement.redundancy)
    adj: list[list[int]] = [[] for _ in range(placement.n_groups)]
    for s, (w, t) in enumerate(slots):
        adj[stacks[w][t]].append(s)
    return SlotGraph(placement.n_groups, slots, tuple(map(tuple, adj)), "fixed", depth)


def free_graph(placement: Placement, survivors: Iterable[int], depth: int) -> SlotGraph:
    """Type i is adjacent to every slot of every surviving host of i."""
    survivors = set(survivors)
    slots, index = _slot_index(survivors, depth, placement.redundancy)
    width = min(depth, placement.redundancy)
    adj = []
    for i in range(placement.n_groups):
        row = [index[(w, t)] for w in sorted(placement.host_sets[i] & survivors)
               for t in range(width)]
        adj.append(tuple(row))
    return SlotGraph(placement.n_groups, slots, tuple(adj), "free", depth)


def hopcroft_karp(
    adjacency: Sequence[Sequence[int]],
    n_right: int,
    initial: Sequence[int] | None = None,
) -> list[int]:
    """Maximum bipartite matching; returns the right vertex matched to each left
    vertex (``-1`` when unmatched).

    ``initial`` may seed the search with any valid partial matching, in which
    case only the missing augmentations are performed.
    """
    n_left = len(adjacency)
    match_l = list(initial) if initial is not None else [UNMATCHED] * n_left
    match_r = [UNMATCHED] * n_right
    for u, v in enumerate(match_l):
        if v != UNMATCHED:
            if match_r[v] != UNMATCHED:
                raise ValueError(f"initial matching reuses right vertex {v}")
            match_r[v] = u

    inf = n_left + n_right + 1
    dist = [inf] * n_left

    def bfs() -> bool:
        queue = deque()
        for u in range(n_left):
            if match_l[u] == UNMATCHED:
                dist[u] = 0
                queue.append(u)
            else:
                dist[u] = inf
        found = False
        while queue:
            u = queue.popleft()
            for v in adjacency[u]:
                w = match_r[v]
                if w == UNMATCHED:
                    found = True
                elif dist[w] == inf:
                    dist[w] = dist[u] + 1
                    queue.append(w)
        return found

    def dfs(root: int) -> bool:
        # iterative DFS along the layered graph
        stack = [(root, iter(adjacency[root]))]
        path: list[tuple[int, int]] = []
        while stack:
            u, it = stack[-1]
            advanced = False
            for v in it:
                w = match_r[v]
                if w == UNMATCHED:
                    path.append((u, v))
                    for pu, pv in path:
                        match_l[pu] = pv
                        match_r[pv] = pu
                    return True
                if dist[w] == dist[u] + 1:
                    path.append((u, v))
                    stack.append((w, iter(adjacency[w])))
                    advanced = True
                    break
            if not advanced:
                dist[u] = inf
                stack.pop()
                if path:
                    path.pop()
        return False

    while bfs():
        for u in range(n_left):
            if match_l[u] == UNMATCHED:
                dfs(u)
    return match_l


def max_matching_size(graph: SlotGraph, initial: Sequence[int] | None = None) -> int:
    match = hopcroft_karp(graph.adjacency, len(graph.slots), initial)
    return sum(1 for v in match if v != UNMATCHED)


def incumbent_matching(
    graph: SlotGraph, stacks: Mapping[int, Sequence[int]]
) -> list[int]:
    """Partial matching placing each type on its first incumbent slot in ``graph``.

    Every slot has exactly one incumbent, so the result is always valid. Types
    with no incumbent slot inside the graph stay unmatched.
    """
    match = [UNMATCHED] * graph.n_types
    for i, row in enumerate(graph.adjacency):
        for s in row:
            w, t = graph.slots[s]
            if stacks[w][t] == i:
                match[i] = s
                break
    return match


def min_movement_assignment(
    graph: SlotGraph, stacks: Mapping[int, Sequence[int]]
) -> Assignment:
    """Size-N assignment of types to slots minimising the number of slots whose
    type differs from the incumbent ``stacks[w][t]``.

    Successive shortest augmenting paths. The incumbent matching has cost 0 and
    is therefore optimal for the set of types it covers; each remaining type is
    then added along a shortest path in the residual graph (reverse edges carry
    negated costs, so a label-correcting search is used).
    """
    n = graph.n_types
    slots = graph.slots
    cost = [[0 if stacks[slots[s][0]][slots[s][1]] == i else 1 for s in row]
            for i, row in enumerate(graph.adjacency)]

    match_l = incumbent_matching(graph, stacks)
    match_r = [UNMATCHED] * len(slots)
    slot_cost = [0] * len(slots)
    for i, s in enumerate(match_l):
        if s != UNMATCHED:
            match_r[s] = i

    big = 1 << 30
    for root in range(n):
        if match_l[root] != UNMATCHED:
            continue
        dist_t = {root: 0}
        dist_s: dict[int, int] = {}
        prev_s: dict[int, int] = {}
        queue = deque([root])
        in_queue = {root}
        while queue:
            u = queue.popleft()
            in_queue.discard(u)
            du = dist_t[u]
            for s, c in zip(graph.adjacency[u], cost[u]):
                if s == match_l[u]:
                    continue
                d = du + c
                if d < dist_s.get(s, big):
                    dist_s[s] = d
                    prev_s[s] = u
                    v = match_r[s]
                    if v != UNMATCHED:
                        dv = d - slot_cost[s]
                        if dv < dist_t.get(v, big):
                            dist_t[v] = dv
                            if v not in in_queue:
                                in_queue.add(v)
                                queue.append(v)
        best, best_d = UNMATCHED, big
        for s, d in dist_s.items():
            if match_r[s] == UNMATCHED and (d < best_d or (d == best_d and s < best)):
                best, best_d = s, d
        if best == UNMATCHED:
            raise MatchingInfeasibleError(f"type {root} cannot be assigned at depth {graph.depth}")
        s = best
        while True:
            u = prev_s[s]
            w, t = slots[s]
            nxt = match_l[u]
            match_l[u] = s
            match_r[s] = u
            slot_cost[s] = 0 if stacks[w][t] == u else 1
            if u == root:
                break
            s = nxt

    slot_of = {i: slots[s] for i, s in enumerate(match_l)}
    movement = sum(1 for i, (w, t) in slot_of.items() if stacks[w][t] != i)
    return Assignment(slot_of, movement)
