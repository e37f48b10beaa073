"""Exhaustive finite-horizon reference optimizer.

For a handful of slots and users, every assignment of one scheduled
user per slot can be enumerated, giving the exact optimum of the
constrained scheduling problem on that instance.  This is the ground
truth the dual-metric schedulers are checked against: on a finite
instance the per-slot argmax schedule (with the energy price tuned on
the same slots) must be feasible, integral and reach the optimum up
to a gap of at most one slot's maximum capacity divided by the
horizon, the worst case a single fractional time-share could recover.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .channel import SystemConfig, UserProfile, draw_block

ENUMERATION_BUDGET = 1_000_000
_BATCH = 1 << 14


@dataclass
class FiniteInstance:
    """A fixed set of slot realizations with a harvest requirement."""

    capacities: np.ndarray  # (T, N)
    harvests: np.ndarray    # (T, N)
    q_req: float

    @property
    def n_slots(self) -> int:
        return self.capacities.shape[0]

    @property
    def n_users(self) -> int:
        return self.capacities.shape[1]

    def check_budget(self) -> None:
        if self.n_slots > 8 or self.n_users > 4:
            raise ValueError("instance too large: at most 8 slots and 4 users")
        if self.n_users**self.n_slots > ENUMERATION_BUDGET:
            raise ValueError(
                f"enumeration budget exceeded: {self.n_users}^{self.n_slots} assignments"
            )

    def harvest_of(self, assignment: np.ndarray) -> float:
        """Average sum harvest when ``assignment[i]`` is scheduled in slot i."""
        rows = np.arange(self.n_slots)
        total = self.harvests.sum() - self.harvests[rows, assignment].sum()
        return float(total) / self.n_slots

    def rate_of(self, assignment: np.ndarray) -> float:
        """Average sum rate of an assignment."""
        rows = np.arange(self.n_slots)
        return float(self.capacities[rows, assignment].sum()) / self.n_slots

    def max_harvest(self) -> float:
        """Largest reachable average harvest (schedule the min-harvest user)."""
        return float(np.mean(self.harvests.sum(axis=1) - self.harvests.min(axis=1)))

    def gap_bound(self) -> float:
        """Worst-case optimality gap of the per-slot argmax schedule."""
        return float(self.capacities.max()) / self.n_slots


def random_instance(
    profiles: Sequence[UserProfile],
    config: SystemConfig,
    rng: np.random.Generator,
    n_slots: int,
    q_req_fraction: float = 0.5,
) -> FiniteInstance:
    """Draw an instance whose target is a fraction of its own maximum harvest."""
    block = draw_block(profiles, config, rng, n_slots)
    inst = FiniteInstance(capacities=block.capacities, harvests=block.harvests, q_req=0.0)
    inst.q_req = q_req_fraction * inst.max_harvest()
    return inst


@dataclass
class BruteForceResult:
    feasible: bool
    schedule: np.ndarray | None
    value: float | None  # avg sum rate (MT) or min per-user avg rate (ET)


def _assignment_batches(n_users: int, n_slots: int):
    """Yield all n_users^n_slots assignments as (batch, n_slots) arrays."""
    total = n_users**n_slots
    digits = n_users ** np.arange(n_slots - 1, -1, -1, dtype=np.int64)
    for start in range(0, total, _BATCH):
        idx = np.arange(start, min(start + _BATCH, total), dtype=np.int64)
        yield (idx[:, None] // digits) % n_users


def brute_force_mt(instance: FiniteInstance) -> BruteForceResult:
    """Enumerate all schedules; maximize average sum rate under the target."""
    instance.check_budget()
    t, cols = instance.n_slots, np.arange(instance.n_slots)
    q_total = float(instance.harvests.sum())
    best_rate = -math.inf
    best: np.ndarray | None = None
    for batch in _assignment_batches(instance.n_users, t):
        picked_q = instance.harvests[cols[None, :], batch].sum(axis=1)
        harvest = (q_total - picked_q) / t
        rates = instance.capacities[cols[None, :], batch].sum(axis=1) / t
        feasible = harvest >= instance.q_req - 1e-12
        if not feasible.any():
            continue
        rates = np.where(feasible, rates, -math.inf)
        k = int(np.argmax(rates))
        if rates[k] > best_rate:
            best_rate = float(rates[k])
            best = batch[k].copy()
    if best is None:
        return BruteForceResult(feasible=False, schedule=None, value=None)
    return BruteForceResult(feasible=True, schedule=best, value=best_rate)


def brute_force_et(instance: FiniteInstance) -> BruteForceResult:
    """Enumerate all schedules; maximize the minimum per-user average rate."""
    instance.check_budget()
    t, n = instance.n_slots, instance.n_users
    cols = np.arange(t)
    q_total = float(instance.harvests.sum())
    best_min = -math.inf
    best: np.ndarray | None = None
    for batch in _assignment_batches(n, t):
        picked_q = instance.harvests[cols[None, :], batch].sum(axis=1)
        harvest = (q_total - picked_q) / t
        picked_c = instance.capacities[cols[None, :], batch]
        per_user = np.stack(
            [np.where(batch == u, picked_c, 0.0).sum(axis=1) for u in range(n)], axis=1
        ) / t
        min_rates = per_user.min(axis=1)
        feasible = harvest >= instance.q_req - 1e-12
        if not feasible.any():
            continue
        min_rates = np.where(feasible, min_rates, -math.inf)
        k = int(np.argmax(min_rates))
        if min_rates[k] > best_min:
            best_min = float(min_rates[k])
            best = batch[k].copy()
    if best is None:
        return BruteForceResult(feasible=False, schedule=None, value=None)
    return BruteForceResult(feasible=True, schedule=best, value=best_min)


def dual_mt_schedule(instance: FiniteInstance) -> tuple[np.ndarray, float] | None:
    """Per-slot argmax schedule with nu tuned by bisection on this instance.

    Returns (schedule, nu), or None when even the maximum-harvest
    schedule misses the target.  The returned schedule always meets
    the harvest requirement exactly as stated (no tolerance).
    """
    caps, harv = instance.capacities, instance.harvests

    def schedule_at(nu: float) -> np.ndarray:
        return np.argmax(caps - nu * harv, axis=1)

    if instance.harvest_of(schedule_at(0.0)) >= instance.q_req:
        return schedule_at(0.0), 0.0
    if instance.max_harvest() < instance.q_req:
        return None

    scale = float(caps.max()) / max(float(np.mean(harv.sum(axis=1))), 1e-300)
    lo, hi = 0.0, scale
    for _ in range(200):
        if instance.harvest_of(schedule_at(hi)) >= instance.q_req:
            break
        lo, hi = hi, hi * 2.0
    for _ in range(200):
        if (hi - lo) <= 1e-14 * hi:
            break
        mid = 0.5 * (lo + hi)
        if instance.harvest_of(schedule_at(mid)) >= instance.q_req:
            hi = mid
        else:
            lo = mid
    return schedule_at(hi), hi
