"""Closed-form performance model: endurable failures, stack overhead,
availability-optimal checkpointing and the redundancy trade-off."""

from __future__ import annotations

import math
from dataclasses import dataclass

from .rectlr import capacity_lower_bound

__all__ = [
    "DegenerateModelError",
    "AnalyticModel",
    "mean_failures_to_wipeout",
    "patch_probability",
    "mean_overhead",
    "mean_overhead_lower_bound",
    "optimal_ckpt_period",
    "availability",
    "normalized_ttt",
    "optimal_redundancy",
    "EULER_GAMMA_OVER_LN2",
]

# gamma / ln 2, rounded as used for the optimal redundancy rule
EULER_GAMMA_OVER_LN2 = 0.833


class DegenerateModelError(ValueError):
    pass


def mean_failures_to_wipeout(n_groups: int, r: int) -> float:
    """Average number of group failures masked before the first wipe-out:
    Gamma(1/r) / r * N^(1 - 1/r)."""
    if n_groups < 2 or not 2 <= r <= n_groups:
        raise ValueError(f"need N >= 2 and 2 <= r <= N, got N={n_groups}, r={r}")
    return math.gamma(1.0 / r) / r * n_groups ** (1.0 - 1.0 / r)


def patch_probability(n_groups: int, k: int) -> float:
    """Fraction of singleton slots, max(0, 2N - n_k) / n_k with n_k = c(k)(N - k)."""
    n_k = capacity_lower_bound(n_groups, k) * (n_groups - k)
    return max(0, 2 * n_groups - n_k) / n_k


def _overhead_sum(n_groups: int, r: int, with_patch: bool) -> float:
    mu = mean_failures_to_wipeout(n_groups, r)
    terms = math.floor(mu)
    if terms == 0:
        raise DegenerateModelError(f"floor(mu) = 0 for N={n_groups}, r={r}")
    total = 0.0
    for k in range(terms):
        total += capacity_lower_bound(n_groups, k)
        if with_patch:
            total += patch_probability(n_groups, k)
    # normalised by mu itself (not floor(mu)); this reproduces the published
    # theory columns, e.g. 1.84 at (200, 2)
    return total / mu


def mean_overhead(n_groups: int, r: int) -> float:
    """Average stacks per step before wipe-out, including patch computes."""
    return _overhead_sum(n_groups, r, with_patch=True)


def mean_overhead_lower_bound(n_groups: int, r: int) -> float:
    """Average stacks per step without patch computes (instant detection)."""
    return _overhead_sum(n_groups, r, with_patch=False)


def optimal_ckpt_period(t_fail: float, t_save: float, t_restart: float) -> float:
    if t_save < 0 or t_restart < 0 or t_fail <= 0:
        raise ValueError("need T_f > 0, T_s >= 0, T_r >= 0")
    if math.isinf(t_fail):
        return math.inf if t_save > 0 else 0.0
    return t_save + math.sqrt(t_save * t_save + 2.0 * t_save * (t_fail + t_restart))


def availability(t_fail: float, t_save: float, t_restart: float) -> float:
    """Maximal availability when checkpointing every optimal_ckpt_period(...)."""
    if not t_fail > 0:
        raise ValueError(f"T_f must be positive, got {t_fail}")
    if math.isinf(t_fail):
        return 1.0
    t_c = optimal_ckpt_period(t_fail, t_save, t_restart)
    # the T_f * T_s / T_c loss term tends to 0 as T_s -> 0
    loss = t_fail * t_save / t_c if t_save > 0 else 0.0
    return (t_fail - loss) / (t_fail + t_c / 2.0 + t_restart)


def normalized_ttt(
    n_groups: int,
    r: int,
    node_mtbf: float,
    t_save: float,
    t_restart: float,
    *,
    lower_bound: bool = False,
) -> float:
    """Predicted time-to-train / T_0 = overhead / availability(mu * m).

    ``lower_bound=True`` uses the patch-free overhead in the numerator.
    """
    overhead = (mean_overhead_lower_bound if lower_bound else mean_overhead)(n_groups, r)
    mu = mean_failures_to_wipeout(n_groups, r)
    return overhead / availability(mu * node_mtbf, t_save, t_restart)


def optimal_redundancy(n_groups: int) -> int:
    if n_groups < 2:
        raise ValueError(f"need N >= 2, got {n_groups}")
    return math.floor(math.log2(n_groups) + EULER_GAMMA_OVER_LN2)


@dataclass(frozen=True)
class AnalyticModel:
    """Bundle of model parameters; every method is a thin wrapper."""

    n_groups: int
    redundancy: int
    node_mtbf: float = 300.0
    restart_cost: float = 3600.0
    ckpt_save: float = 60.0

    def __post_init__(self) -> None:
        if self.n_groups < 2 or self.redundancy < 2:
            raise ValueError("need N >= 2 and r >= 2")
        if min(self.node_mtbf, self.restart_cost, self.ckpt_save) <= 0:
            raise ValueError("time parameters must be positive")

    @property
    def mu(self) -> float:
        return mean_failures_to_wipeout(self.n_groups, self.redundancy)

    @property
    def system_mtbf(self) -> float:
        """T_f = mu * m."""
        return self.mu * self.node_mtbf

    @property
    def overhead(self) -> float:
        return mean_overhead(self.n_groups, self.redundancy)

    @property
    def overhead_lower_bound(self) -> float:
        return mean_overhead_lower_bound(self.n_groups, self.redundancy)

    @property
    def ckpt_period(self) -> float:
        return optimal_ckpt_period(self.system_mtbf, self.ckpt_save, self.restart_cost)

    @property
    def availability(self) -> float:
        return availability(self.system_mtbf, self.ckpt_save, self.restart_cost)

    @property
    def normalized_ttt(self) -> float:
        return self.overhead / self.availability

    def row(self) -> dict[str, float]:
        return {
            "r": self.redundancy,
            "mu": self.mu,
            "overhead": self.overhead,
            "overhead_lb": self.overhead_lower_bound,
            "ckpt_period": self.ckpt_period,
            "availability": self.availability,
            "J": self.normalized_ttt,
        }
