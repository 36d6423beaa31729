"""Discrete-event simulation of data-parallel training under group failures.

Three schemes are modelled, each combined with availability-optimal periodic
checkpointing:

* ``SPARE_CKPT``: stacked shards with the reordering controller;
* ``REP_CKPT``:   every group computes all ``r`` replicated shards per step;
* ``CKPT_ONLY``:  plain data parallelism, any failure forces a restart.

Failures are detected only when an all-reduce is attempted. A global restart
restores every group and rolls training back to the last checkpoint.
"""

from __future__ import annotations

import enum
import heapq
import itertools
import math
from collections import Counter
from dataclasses import asdict, dataclass, field, fields
from typing import Any

import numpy as np

from . import analytics
from .placement import PlacementInfeasibleError, build_placement
from .rectlr import Outcome, StackState, run_controller

__all__ = [
    "Scheme",
    "ConfigError",
    "ClusterConfig",
    "EventKind",
    "SimEvent",
    "EventQueue",
    "RunReport",
    "REFERENCE_ALLREDUCE",
    "sample_failure_interarrival",
    "checkpoint_schedule",
    "failure_interval",
    "simulate",
]

# all-reduce time per N for the reference cluster
REFERENCE_ALLREDUCE = {200: 2.0, 600: 6.0, 1000: 10.0}


class Scheme(str, enum.Enum):
    SPARE_CKPT = "spare_ckpt"
    REP_CKPT = "rep_ckpt"
    CKPT_ONLY = "ckpt_only"


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ClusterConfig:
    n_groups: int = 200
    redundancy: int = 9
    node_mtbf: float = 300.0
    weibull_shape: float = 0.78
    restart_cost: float = 3600.0
    ckpt_save: float = 60.0
    compute_per_stack: float = 64.0
    allreduce_time: float = 2.0
    failed_allreduce_factor: float = 0.5
    shrink_cost: float = 0.1
    controller_cost: float = 0.1
    jitter_mean: float = 1.0
    jitter_std: float = 0.05
    horizon_steps: int = 10_000
    scheme: Scheme = Scheme.SPARE_CKPT
    seed: int = 0
    # stop after this many T_0 of simulated time; None = 10 for CKPT_ONLY,
    # unbounded otherwise
    max_ttt_ratio: float | None = None
    # fixed checkpoint interval in steps, overriding the optimal period
    ckpt_interval_steps: int | None = None

    @classmethod
    def reference(cls, n_groups: int = 200, **overrides: Any) -> "ClusterConfig":
        overrides.setdefault("allreduce_time", REFERENCE_ALLREDUCE.get(n_groups, 2.0))
        return cls(n_groups=n_groups, **overrides)

    def __post_init__(self) -> None:
        object.__setattr__(self, "scheme", Scheme(self.scheme))

    @property
    def base_time(self) -> float:
        """T_0: failure-free time-to-train of plain data parallelism."""
        return self.horizon_steps * (self.compute_per_stack + self.allreduce_time)

    @property
    def wall_cap(self) -> float:
        ratio = self.max_ttt_ratio
        if ratio is None:
            ratio = 10.0 if self.scheme is Scheme.CKPT_ONLY else math.inf
        return ratio * self.base_time

    def validate(self) -> "ClusterConfig":
        durations = ("node_mtbf", "restart_cost", "ckpt_save", "compute_per_stack",
                     "allreduce_time", "failed_allreduce_factor", "shrink_cost",
                     "controller_cost", "jitter_mean", "jitter_std")
        for name in durations:
            value = getattr(self, name)
            if not value >= 0:
                raise ConfigError(f"{name} must be >= 0, got {value}")
        if self.node_mtbf <= 0:
            raise ConfigError("node_mtbf must be > 0")
        if self.weibull_shape <= 0:
            raise ConfigError("weibull_shape must be > 0")
        if self.horizon_steps < 1:
            raise ConfigError("horizon_steps must be >= 1")
        if self.n_groups < 2:
            raise ConfigError("n_groups must be >= 2")
        if self.max_ttt_ratio is not None and self.max_ttt_ratio <= 0:
            raise ConfigError("max_ttt_ratio must be > 0")
        if self.ckpt_interval_steps is not None and self.ckpt_interval_steps < 0:
            raise ConfigError("ckpt_interval_steps must be >= 0")
        if self.scheme is Scheme.SPARE_CKPT:
            try:
                build_placement(self.n_groups, self.redundancy)
            except (PlacementInfeasibleError, ValueError) as exc:
                raise ConfigError(str(exc)) from exc
        elif self.scheme is Scheme.REP_CKPT:
            if not 2 <= self.redundancy <= self.n_groups:
                raise ConfigError(f"replication needs 2 <= r <= N, got r={self.redundancy}")
        return self

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["scheme"] = self.scheme.value
        return d

    @classmethod
    def field_names(cls) -> list[str]:
        return [f.name for f in fields(cls)]


class EventKind(enum.IntEnum):
    # value doubles as the tie-break priority for simultaneous events
    FAILURE_ARRIVAL = 0
    COMPUTE_DONE = 1
    ALLREDUCE_DONE = 2
    ALLREDUCE_FAILED = 3
    CHECKPOINT_DONE = 4
    RESTART_DONE = 5


@dataclass(order=True)
class SimEvent:
    timestamp: float
    kind: EventKind
    seq: int
    payload: dict = field(default_factory=dict, compare=False)


class EventQueue:
    """Min-heap ordered by (timestamp, kind priority, insertion sequence)."""

    def __init__(self) -> None:
        self._heap: list[SimEvent] = []
        self._seq = itertools.count()

    def push(self, timestamp: float, kind: EventKind, **payload: Any) -> SimEvent:
        event = SimEvent(timestamp, kind, next(self._seq), payload)
        heapq.heappush(self._heap, event)
        return event

    def pop(self) -> SimEvent:
        return heapq.heappop(self._heap)

    def __len__(self) -> int:
        return len(self._heap)


@dataclass(frozen=True)
class RunReport:
    scheme: str
    n_groups: int
    redundancy: int
    seed: int
    completed: bool
    wall_clock: float
    base_time: float
    ttt_ratio: float
    availability: float
    useful_time: float
    work_ratio: float
    mean_stacks_per_step: float
    failures: int
    restarts: int
    ckpt_count: int
    steps_committed: int
    steps_started: int
    steps_rolled_back: int
    steps_aborted: int
    patch_computes: int
    reorders: int
    ckpt_interval_steps: int
    events: dict[str, int]

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


def sample_failure_interarrival(
    rng: np.random.Generator, config: ClusterConfig, active_fraction: float
) -> float:
    """Weibull interarrival with mean node_mtbf / active_fraction."""
    if not 0 < active_fraction <= 1:
        raise ValueError(f"active_fraction must be in (0, 1], got {active_fraction}")
    mean = config.node_mtbf / active_fraction
    if math.isinf(mean):
        return math.inf
    scale = mean / math.gamma(1.0 + 1.0 / config.weibull_shape)
    return float(scale * rng.weibull(config.weibull_shape))


def failure_interval(config: ClusterConfig) -> float:
    """T_f used to size the checkpoint period."""
    if config.scheme is Scheme.CKPT_ONLY:
        return config.node_mtbf
    return analytics.mean_failures_to_wipeout(config.n_groups, config.redundancy) * config.node_mtbf


def nominal_step_time(config: ClusterConfig) -> float:
    c, a = config.compute_per_stack, config.allreduce_time
    if config.scheme is Scheme.SPARE_CKPT:
        return analytics.mean_overhead(config.n_groups, config.redundancy) * c + a
    if config.scheme is Scheme.REP_CKPT:
        return config.redundancy * c + a
    return c + a


def checkpoint_schedule(config: ClusterConfig, t_fail: float) -> int:
    """Steps between checkpoints; 0 disables checkpointing."""
    if config.ckpt_interval_steps is not None:
        return config.ckpt_interval_steps
    if not t_fail > 0:
        raise ValueError(f"T_f must be positive, got {t_fail}")
    period = analytics.optimal_ckpt_period(t_fail, config.ckpt_save, config.restart_cost)
    if period == 0 or math.isinf(period):
        return 0
    return max(1, round(period / nominal_step_time(config)))


class _Simulation:
    def __init__(self, config: ClusterConfig) -> None:
        self.cfg = config.validate()
        n = config.n_groups
        seeds = np.random.SeedSequence(config.seed).spawn(3)
        self.rng_arrival = np.random.default_rng(seeds[0])
        self.rng_victim = np.random.default_rng(seeds[1])
        self.rng_jitter = np.random.default_rng(seeds[2])
        self.queue = EventQueue()
        self.now = 0.0
        self.ckpt_every = checkpoint_schedule(config, failure_interval(config))

        if config.scheme is Scheme.SPARE_CKPT:
            self.placement = build_placement(n, config.redundancy)
            self.state = StackState.fresh(self.placement)
        elif config.scheme is Scheme.REP_CKPT:
            r = config.redundancy
            # type i lives on groups i..i+r-1, so group w holds w-r+1..w
            self.rep_types = [[(w - j) % n for j in range(r)] for w in range(n)]
            self.rep_alive_hosts = [r] * n

        self.alive = list(range(n))          # groups not failed in this epoch
        self.alive_pos = {w: w for w in range(n)}
        self.pending: set[int] = set()       # failed but not yet detected
        self.token = 0

        self.committed = 0
        self.ckpt_step = 0
        self.useful_banked = 0.0
        self.useful_pending = 0.0
        self.stacks_banked = 0
        self.stacks_pending = 0
        self.step: dict[str, float] = {}

        self.failures = 0
        self.restarts = 0
        self.ckpt_count = 0
        self.steps_started = 0
        self.steps_rolled_back = 0
        self.steps_aborted = 0
        self.patches = 0
        self.reorders = 0
        self.events: Counter[str] = Counter()
        self.done = False

    # -- helpers -------------------------------------------------------------

    def jitter(self, duration: float) -> float:
        if duration == 0:
            return 0.0
        if self.cfg.jitter_std == 0:
            return duration * self.cfg.jitter_mean
        factor = self.rng_jitter.normal(self.cfg.jitter_mean, self.cfg.jitter_std)
        return duration * max(0.01, factor)

    def _schedule_arrival(self) -> None:
        if not self.alive:
            return
        frac = len(self.alive) / self.cfg.n_groups
        gap = sample_failure_interarrival(self.rng_arrival, self.cfg, frac)
        if math.isfinite(gap):
            self.queue.push(self.now + gap, EventKind.FAILURE_ARRIVAL, token=self.token)

    def _kill(self, w: int) -> None:
        # O(1) removal from the alive list
        pos = self.alive_pos.pop(w)
        last = self.alive.pop()
        if last != w:
            self.alive[pos] = last
            self.alive_pos[last] = pos

    def _restore_all(self) -> None:
        n = self.cfg.n_groups
        self.alive = list(range(n))
        self.alive_pos = {w: w for w in range(n)}
        self.pending.clear()
        self.token += 1
        self._schedule_arrival()

    # -- training step -------------------------------------------------------

    def start_step(self) -> None:
        cfg = self.cfg
        if cfg.scheme is Scheme.SPARE_CKPT:
            stacks = self.state.all_reduce_stack
        elif cfg.scheme is Scheme.REP_CKPT:
            stacks = cfg.redundancy
        else:
            stacks = 1
        compute = self.jitter(stacks * cfg.compute_per_stack)
        # ran: per-group types computed this step, filled lazily on first failure
        self.step = {"stacks": stacks, "compute": compute, "patch": 0.0, "ran": None}
        self.steps_started += 1
        self.queue.push(self.now + compute, EventKind.COMPUTE_DONE)

    def _attempt_allreduce(self, delay: float) -> None:
        """All-reduce starting ``delay`` from now; failures pending by then
        make it fail."""
        self.queue.push(self.now + delay, EventKind.COMPUTE_DONE)

    def on_compute_done(self, event: SimEvent) -> None:
        cfg = self.cfg
        if self.pending:
            dt = self.jitter(cfg.failed_allreduce_factor * cfg.allreduce_time)
            self.queue.push(self.now + dt, EventKind.ALLREDUCE_FAILED)
        else:
            dt = self.jitter(cfg.allreduce_time)
            self.queue.push(self.now + dt, EventKind.ALLREDUCE_DONE, allreduce=dt)

    def on_allreduce_done(self, event: SimEvent) -> None:
        step = self.step
        self.useful_pending += step["compute"] + step["patch"] + event.payload["allreduce"]
        self.stacks_pending += step["stacks"]
        self.committed += 1
        if self.committed >= self.cfg.horizon_steps:
            self.done = True
            return
        if self.ckpt_every and self.committed - self.ckpt_step >= self.ckpt_every:
            self.queue.push(self.now + self.jitter(self.cfg.ckpt_save), EventKind.CHECKPOINT_DONE)
        else:
            self.start_step()

    def on_checkpoint_done(self, event: SimEvent) -> None:
        self.ckpt_step = self.committed
        self.useful_banked += self.useful_pending
        self.stacks_banked += self.stacks_pending
        self.useful_pending = 0.0
        self.stacks_pending = 0
        self.ckpt_count += 1
        self.start_step()

    def on_allreduce_failed(self, event: SimEvent) -> None:
        cfg = self.cfg
        batch = set(self.pending)
        self.pending.clear()
        if cfg.scheme is Scheme.SPARE_CKPT:
            self._recover_spare(batch)
        elif cfg.scheme is Scheme.REP_CKPT:
            self._recover_rep(batch)
        else:
            self._begin_restart(0.0)

    def _recover_spare(self, batch: set[int]) -> None:
        cfg = self.cfg
        state = self.state
        step = self.step
        if step["ran"] is None:
            depth = step["stacks"]
            step["ran"] = {w: set(state.stacks[w][:depth]) for w in state.survivors}
        ran = step["ran"]
        ctrl = self.jitter(cfg.controller_cost)
        outcome = run_controller(state, batch)
        if outcome.kind is Outcome.SYSTEM_FAILURE:
            self._begin_restart(ctrl)
            return
        if outcome.kind is Outcome.REORDERED:
            self.reorders += 1
        for w in batch:
            ran.pop(w, None)
        # types whose every computation this step was lost with the failed groups
        covered = set().union(*ran.values())
        lost = set(range(cfg.n_groups)) - covered
        patch = 0.0
        if lost:
            patch = self.jitter(cfg.compute_per_stack)
            self.patches += 1
            step["stacks"] += 1
            step["patch"] += patch
            host_sets = self.placement.host_sets
            for i in lost:
                ran[min(host_sets[i] & state.survivors)].add(i)
        shrink = self.jitter(cfg.shrink_cost)
        self._attempt_allreduce(ctrl + patch + shrink)

    def _recover_rep(self, batch: set[int]) -> None:
        wiped = False
        for w in batch:
            for i in self.rep_types[w]:
                self.rep_alive_hosts[i] -= 1
                if self.rep_alive_hosts[i] == 0:
                    wiped = True
        if wiped:
            self._begin_restart(0.0)
            return
        # every survivor already computed all of its types
        self._attempt_allreduce(self.jitter(self.cfg.shrink_cost))

    def _begin_restart(self, delay: float) -> None:
        self.steps_aborted += 1
        self.steps_rolled_back += self.committed - self.ckpt_step
        self.committed = self.ckpt_step
        self.useful_pending = 0.0
        self.stacks_pending = 0
        self.restarts += 1
        if self.cfg.scheme is Scheme.SPARE_CKPT:
            self.state.reset()
        elif self.cfg.scheme is Scheme.REP_CKPT:
            self.rep_alive_hosts = [self.cfg.redundancy] * self.cfg.n_groups
        # every group is re-provisioned when the restart begins; failures during
        # the restart window hit the fresh groups and surface at the next all-reduce
        self._restore_all()
        self.queue.push(self.now + delay + self.jitter(self.cfg.restart_cost), EventKind.RESTART_DONE)

    def on_restart_done(self, event: SimEvent) -> None:
        self.start_step()

    def on_failure(self, event: SimEvent) -> None:
        if event.payload["token"] != self.token or not self.alive:
            return
        victim = self.alive[int(self.rng_victim.integers(len(self.alive)))]
        self._kill(victim)
        self.pending.add(victim)
        self.failures += 1
        self._schedule_arrival()

    # -- main loop -----------------------------------------------------------

    def run(self, trace: list | None = None) -> RunReport:
        handlers = {
            EventKind.FAILURE_ARRIVAL: self.on_failure,
            EventKind.COMPUTE_DONE: self.on_compute_done,
            EventKind.ALLREDUCE_DONE: self.on_allreduce_done,
            EventKind.ALLREDUCE_FAILED: self.on_allreduce_failed,
            EventKind.CHECKPOINT_DONE: self.on_checkpoint_done,
            EventKind.RESTART_DONE: self.on_restart_done,
        }
        cap = self.cfg.wall_cap
        self._schedule_arrival()
        self.start_step()
        while not self.done:
            event = self.queue.pop()
            if event.timestamp > cap:
                self.now = cap
                break
            if event.timestamp < self.now:
                raise RuntimeError(f"causality violated: {event} before t={self.now}")
            self.now = event.timestamp
            self.events[event.kind.name] += 1
            if trace is not None:
                trace.append((event.timestamp, event.kind, event.seq))
            handlers[event.kind](event)
        return self._report()

    def _report(self) -> RunReport:
        cfg = self.cfg
        useful = self.useful_banked + self.useful_pending
        stacks = self.stacks_banked + self.stacks_pending
        wall = self.now
        base = cfg.base_time
        return RunReport(
            scheme=cfg.scheme.value,
            n_groups=cfg.n_groups,
            redundancy=cfg.redundancy if cfg.scheme is not Scheme.CKPT_ONLY else 1,
            seed=cfg.seed,
            completed=self.done,
            wall_clock=wall,
            base_time=base,
            ttt_ratio=wall / base,
            availability=useful / wall if wall > 0 else 0.0,
            useful_time=useful,
            work_ratio=useful / base,
            mean_stacks_per_step=stacks / self.committed if self.committed else math.nan,
            failures=self.failures,
            restarts=self.restarts,
            ckpt_count=self.ckpt_count,
            steps_committed=self.committed,
            steps_started=self.steps_started,
            steps_rolled_back=self.steps_rolled_back,
            steps_aborted=self.steps_aborted,
            patch_computes=self.patches,
            reorders=self.reorders,
            ckpt_interval_steps=self.ckpt_every,
            events=dict(sorted(self.events.items())),
        )


def simulate(config: ClusterConfig, trace: list | None = None) -> RunReport:
    """Run one simulation to completion (or to the wall-clock cap).

    If ``trace`` is a list, every processed event is appended to it as
    ``(timestamp, kind, seq)``.
    """
    return _Simulation(config).run(trace)

