"""Three-phase reordering controller.

Phase 0 checks whether the committed stacks still collect every shard type at
the current all-reduce stack. Phase 1 searches the smallest depth that works
under free per-group reordering. Phase 2 rewrites the stacks with the fewest
slot changes that achieve that depth.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Iterable

from . import matching
from .placement import Placement, wiped_out_types

__all__ = [
    "StackState",
    "Outcome",
    "ControllerOutcome",
    "capacity_lower_bound",
    "hk_fixed",
    "hk_free",
    "minimal_free_stack",
    "run_controller",
]


def capacity_lower_bound(n_groups: int, failures: int) -> int:
    """ceil(N / (N - k)): no fewer stacks can cover N types with N - k groups."""
    if not 0 <= failures < n_groups:
        raise ValueError(f"need 0 <= k < N, got k={failures}, N={n_groups}")
    return -(-n_groups // (n_groups - failures))


@dataclass
class StackState:
    placement: Placement
    survivors: set[int]
    stacks: dict[int, list[int]]
    all_reduce_stack: int = 1

    @classmethod
    def fresh(cls, placement: Placement) -> "StackState":
        return cls(
            placement=placement,
            survivors=set(range(placement.n_groups)),
            stacks={w: list(t) for w, t in enumerate(placement.types)},
        )

    def reset(self) -> None:
        """Global restart: every group back, original orders, S_A = 1."""
        fresh = StackState.fresh(self.placement)
        self.survivors = fresh.survivors
        self.stacks = fresh.stacks
        self.all_reduce_stack = 1

    @property
    def failed(self) -> set[int]:
        return set(range(self.placement.n_groups)) - self.survivors

    def prefix_types(self, depth: int | None = None) -> set[int]:
        """Types computed by survivors within the first ``depth`` stacks."""
        depth = self.all_reduce_stack if depth is None else depth
        return {i for w in self.survivors for i in self.stacks[w][:depth]}


class Outcome(enum.Enum):
    NO_REORDER = "no_reorder"
    REORDERED = "reordered"
    SYSTEM_FAILURE = "system_failure"


@dataclass(frozen=True)
class ControllerOutcome:
    kind: Outcome
    all_reduce_stack: int | None = None
    movement_cost: int = 0
    changed_groups: frozenset[int] = field(default_factory=frozenset)


def hk_fixed(state: StackState) -> bool:
    graph = matching.fixed_graph(
        state.placement, state.stacks, state.survivors, state.all_reduce_stack
    )
    return matching.max_matching_size(graph) == state.placement.n_groups


def hk_free(state: StackState, depth: int) -> bool:
    graph = matching.free_graph(state.placement, state.survivors, depth)
    seed = matching.incumbent_matching(graph, state.stacks)
    return matching.max_matching_size(graph, seed) == state.placement.n_groups


def minimal_free_stack(
    placement: Placement, survivors: Iterable[int], start: int = 1
) -> int | None:
    """Smallest depth >= ``start`` at which survivors can collect all types under
    free reordering, or None on wipe-out."""
    survivors = set(survivors)
    for depth in range(start, placement.redundancy + 1):
        graph = matching.free_graph(placement, survivors, depth)
        if matching.max_matching_size(graph) == placement.n_groups:
            return depth
    return None


def _rewrite_stack(old: list[int], assigned: dict[int, int], depth: int) -> list[int]:
    """New stack for one group: assigned types pinned at their positions, other
    positions below ``depth`` keep their incumbent when still free, and every
    remaining position takes the leftover types in ascending order."""
    new: list[int | None] = [None] * len(old)
    for t, i in assigned.items():
        new[t] = i
    used = set(assigned.values())
    for t in range(min(depth, len(old))):
        if new[t] is None and old[t] not in used:
            new[t] = old[t]
            used.add(old[t])
    leftovers = iter(sorted(set(old) - used))
    return [i if i is not None else next(leftovers) for i in new]


def run_controller(state: StackState, newly_failed: Iterable[int]) -> ControllerOutcome:
    """One controller pass for a batch of failures detected at the same all-reduce.

    Mutates ``state`` (survivors, stacks, all-reduce stack) unless the outcome is
    a system failure, in which case only the survivor set is updated and the
    caller is expected to restart.
    """
    newly_failed = set(newly_failed)
    if newly_failed - state.survivors:
        raise ValueError(f"groups already failed: {sorted(newly_failed - state.survivors)}")
    state.survivors -= newly_failed
    placement = state.placement
    n = placement.n_groups

    if not state.survivors or wiped_out_types(placement, state.failed):
        return ControllerOutcome(Outcome.SYSTEM_FAILURE)

    # Phase 0
    if hk_fixed(state):
        return ControllerOutcome(Outcome.NO_REORDER, state.all_reduce_stack)

    # Phase 1
    best = None
    graph = None
    for depth in range(state.all_reduce_stack, placement.redundancy + 1):
        graph = matching.free_graph(placement, state.survivors, depth)
        seed = matching.incumbent_matching(graph, state.stacks)
        if matching.max_matching_size(graph, seed) == n:
            best = depth
            break
    if best is None:
        return ControllerOutcome(Outcome.SYSTEM_FAILURE)

    # Phase 2
    assignment = matching.min_movement_assignment(graph, state.stacks)
    per_group: dict[int, dict[int, int]] = {}
    for i, (w, t) in assignment.slot_of.items():
        per_group.setdefault(w, {})[t] = i
    changed = set()
    for w, assigned in per_group.items():
        old = state.stacks[w]
        if all(old[t] == i for t, i in assigned.items()):
            continue
        state.stacks[w] = _rewrite_stack(old, assigned, best)
        changed.add(w)
    state.all_reduce_stack = best
    return ControllerOutcome(
        Outcome.REORDERED, best, assignment.movement_cost, frozenset(changed)
    )
