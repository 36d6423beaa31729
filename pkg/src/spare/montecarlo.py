"""Monte Carlo failure trails: groups fail one at a time in uniformly random
order until some shard type loses all of its hosts.

After every failure the minimal all-reduce stack under free reordering is
tracked incrementally: the placement of types onto groups is kept as a
capacity-S b-matching, types orphaned by a failure are re-inserted along
augmenting paths, and S grows by one whenever an orphan cannot be placed.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numba
import numpy as np

from . import analytics
from .placement import Placement

__all__ = [
    "TrialResult",
    "MonteCarloSummary",
    "trial_rng",
    "run_trial",
    "run_trial_order",
    "summarize",
    "table_rows",
]


@dataclass(frozen=True)
class TrialResult:
    failures_to_wipeout: int
    stack_sequence: tuple[int, ...]
    failure_order: tuple[int, ...]

    @property
    def mean_stack(self) -> float:
        return sum(self.stack_sequence) / len(self.stack_sequence)


@dataclass(frozen=True)
class MonteCarloSummary:
    trials: int
    mean_F: float
    mean_stack: float
    # survival[k] = fraction of trials with F > k
    survival: tuple[float, ...] | None = None


@numba.njit(cache=True, nogil=True)
def _trial_kernel(hosts, types, order, stack_out):  # pragma: no cover - jitted
    n, r = hosts.shape
    alive = np.ones(n, dtype=np.bool_)
    alive_hosts = np.full(n, r, dtype=np.int64)
    assign = np.arange(n)               # type -> group; type w starts on group w
    members = np.full((n, r), -1, dtype=np.int64)
    load = np.ones(n, dtype=np.int64)
    slot = np.zeros(n, dtype=np.int64)  # index of a type inside members[assign]
    for w in range(n):
        members[w, 0] = w
    cap = 1

    seen_g = np.zeros(n, dtype=np.int64)
    seen_t = np.zeros(n, dtype=np.int64)
    parent_g = np.zeros(n, dtype=np.int64)  # type that reached group g
    via_g = np.zeros(n, dtype=np.int64)     # group through which a type was reached
    queue = np.zeros(n, dtype=np.int64)
    orphans = np.zeros(r, dtype=np.int64)
    stamp = 0

    stack_out[0] = 1
    for k in range(n):
        w = order[k]
        alive[w] = False
        for j in range(r):
            i = types[w, j]
            alive_hosts[i] -= 1
            if alive_hosts[i] == 0:
                return k + 1
        n_orphans = load[w]
        for j in range(n_orphans):
            orphans[j] = members[w, j]
            members[w, j] = -1
        load[w] = 0

        for j in range(n_orphans):
            root = orphans[j]
            while True:
                stamp += 1
                head = 0
                tail = 1
                queue[0] = root
                seen_t[root] = stamp
                via_g[root] = -1
                found = -1
                while head < tail and found < 0:
                    x = queue[head]
                    head += 1
                    for h in range(r):
                        g = hosts[x, h]
                        if not alive[g] or seen_g[g] == stamp:
                            continue
                        seen_g[g] = stamp
                        parent_g[g] = x
                        if load[g] < cap:
                            found = g
                            break
                        for m in range(load[g]):
                            y = members[g, m]
                            if seen_t[y] != stamp:
                                seen_t[y] = stamp
                                via_g[y] = g
                                queue[tail] = y
                                tail += 1
                if found < 0:
                    cap += 1
                    continue
                # shift types along the path towards the free group
                g = found
                while True:
                    x = parent_g[g]
                    src = via_g[x]
                    if src >= 0:
                        # remove x from src (swap with last)
                        p = slot[x]
                        last = members[src, load[src] - 1]
                        members[src, p] = last
                        slot[last] = p
                        members[src, load[src] - 1] = -1
                        load[src] -= 1
                    members[g, load[g]] = x
                    slot[x] = load[g]
                    load[g] += 1
                    assign[x] = g
                    if src < 0:
                        break
                    g = src
                break
        stack_out[k + 1] = cap
    return n


def _arrays(placement: Placement) -> tuple[np.ndarray, np.ndarray]:
    hosts = np.asarray(placement.hosts, dtype=np.int64)
    types = np.asarray(placement.types, dtype=np.int64)
    return hosts, types


def trial_rng(base_seed: int, trial: int) -> np.random.Generator:
    """Generator for one trial, derived from (base_seed, trial index)."""
    return np.random.default_rng(np.random.SeedSequence([base_seed, trial]))


def run_trial_order(placement: Placement, order: Sequence[int]) -> TrialResult:
    """Replay an explicit failure order (a permutation of the groups)."""
    order = np.asarray(order, dtype=np.int64)
    n = placement.n_groups
    if sorted(order.tolist()) != list(range(n)):
        raise ValueError("order must be a permutation of the groups")
    hosts, types = _arrays(placement)
    stacks = np.zeros(n + 1, dtype=np.int64)
    f = _trial_kernel(hosts, types, order, stacks)
    return TrialResult(int(f), tuple(int(s) for s in stacks[:f]), tuple(order[:f].tolist()))


def run_trial(placement: Placement, rng_seed: int | np.random.Generator) -> TrialResult:
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
    return run_trial_order(placement, rng.permutation(placement.n_groups))


def summarize(
    placement: Placement, trials: int, base_seed: int = 0, *, tail: bool = False
) -> MonteCarloSummary:
    """Average F and per-trial mean stack over ``trials`` independent trails."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    n = placement.n_groups
    hosts, types = _arrays(placement)
    stacks = np.zeros(n + 1, dtype=np.int64)
    fs = np.zeros(trials, dtype=np.int64)
    means = np.zeros(trials)
    for t in range(trials):
        order = trial_rng(base_seed, t).permutation(n)
        f = _trial_kernel(hosts, types, order, stacks)
        fs[t] = f
        means[t] = stacks[:f].mean()
    survival = None
    if tail:
        survival = tuple(float((fs > k).mean()) for k in range(int(fs.max()) + 1))
    return MonteCarloSummary(trials, float(fs.mean()), float(means.mean()), survival)


def table_rows(
    n_groups: int, redundancies: Sequence[int], trials: int, base_seed: int = 0
) -> list[dict[str, float]]:
    """Theory-vs-simulation rows: r, mu_theory, mu_sim, stack_theory, stack_sim."""
    from .placement import build_placement

    rows = []
    for r in redundancies:
        summary = summarize(build_placement(n_groups, r), trials, base_seed)
        rows.append({
            "r": r,
            "mu_theory": analytics.mean_failures_to_wipeout(n_groups, r),
            "mu_sim": summary.mean_F,
            "stack_theory": analytics.mean_overhead_lower_bound(n_groups, r),
            "stack_sim": summary.mean_stack,
        })
    return rows
