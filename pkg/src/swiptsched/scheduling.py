"""Per-slot user selection metrics for the dual-metric schedulers.

Each scheme scores every user with a linear combination of the slot's
capacity C_n and harvest Q_n and schedules the argmax:

    max-throughput (MT):      L_n = C_n - nu * Q_n
    proportional-fair (PF):   L_n = C_n - nu * Q_n - gamma_n
    equal-throughput (ET):    L_n = theta_n * C_n - nu * Q_n

nu >= 0 prices harvested energy against rate, gamma_n equalizes
long-run channel-access shares, and theta_n (nonnegative, summing to
one) equalizes long-run per-user throughput.  The multipliers are
computed offline from channel statistics (see ``calibration``); the
selection itself depends only on the current slot, so the schedulers
run online with no memory.

Decisions are deterministic: ties break toward the lowest user index.
With continuously distributed fading, exact metric ties occur with
probability zero, so the tie rule only pins down reproducibility.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .channel import SlotBlock, SlotRealization


@dataclass
class DualState:
    """Calibrated multipliers for one scheduling scheme.

    ``gamma`` is used by PF only and ``theta`` by ET only; both are
    None otherwise.  ``calibration_residuals`` records the constraint
    gaps and iteration diagnostics observed at convergence.
    """

    nu: float
    gamma: np.ndarray | None = None
    theta: np.ndarray | None = None
    calibration_residuals: dict = field(default_factory=dict)


@dataclass
class ScheduleDecision:
    """Outcome of one slot: which user decodes, and the metrics behind it."""

    slot_index: int
    selected_user: int
    metric_values: np.ndarray
    scheme_tag: str


def _check_nu(nu: float) -> None:
    if nu < 0:
        raise ValueError(f"nu must be nonnegative, got {nu}")


def mt_metric(slot: SlotRealization, nu: float) -> np.ndarray:
    """Max-throughput metrics C_n - nu * Q_n for one slot."""
    _check_nu(nu)
    return slot.capacities - nu * slot.harvests


def pf_metric(slot: SlotRealization, nu: float, gamma: np.ndarray) -> np.ndarray:
    """Proportional-fair metrics C_n - nu * Q_n - gamma_n for one slot."""
    _check_nu(nu)
    gamma = np.asarray(gamma, dtype=float)
    if gamma.shape != slot.capacities.shape:
        raise ValueError(
            f"gamma has shape {gamma.shape}, expected {slot.capacities.shape}"
        )
    return slot.capacities - nu * slot.harvests - gamma


def et_metric(slot: SlotRealization, nu: float, theta: np.ndarray) -> np.ndarray:
    """Equal-throughput metrics theta_n * C_n - nu * Q_n for one slot."""
    _check_nu(nu)
    theta = np.asarray(theta, dtype=float)
    if theta.shape != slot.capacities.shape:
        raise ValueError(
            f"theta has shape {theta.shape}, expected {slot.capacities.shape}"
        )
    if np.any(theta < 0):
        raise ValueError("theta must be nonnegative")
    return theta * slot.capacities - nu * slot.harvests


def select(
    metrics: np.ndarray, slot_index: int = 0, scheme_tag: str = ""
) -> ScheduleDecision:
    """Pick the metric-maximizing user; ties go to the lowest index."""
    metrics = np.asarray(metrics, dtype=float)
    if metrics.size == 0:
        raise ValueError("cannot select from an empty metric vector")
    return ScheduleDecision(
        slot_index=slot_index,
        selected_user=int(np.argmax(metrics)),
        metric_values=metrics,
        scheme_tag=scheme_tag,
    )


class SlotScheduler:
    """Interface shared by all schedulers the simulator can run.

    ``select_block`` maps a block of slots to the selected user index
    per slot.  ``start`` creates per-run state; stateless schedulers
    return None and may be shared across concurrent runs.
    """

    tag: str = "?"

    def start(self, n_users: int):
        return None

    def select_block(self, block: SlotBlock, state=None) -> np.ndarray:
        raise NotImplementedError

    def decide(self, slot: SlotRealization, state=None) -> ScheduleDecision:
        """Single-slot convenience wrapper around ``select_block``."""
        block = SlotBlock(
            gains=slot.gains[None, :],
            capacities=slot.capacities[None, :],
            harvests=slot.harvests[None, :],
        )
        chosen = int(self.select_block(block, state)[0])
        metrics = self.metrics_block(block)[0]
        return ScheduleDecision(
            slot_index=slot.slot_index,
            selected_user=chosen,
            metric_values=metrics,
            scheme_tag=self.tag,
        )

    def metrics_block(self, block: SlotBlock) -> np.ndarray:
        raise NotImplementedError


@dataclass
class MtScheduler(SlotScheduler):
    """Rate-maximizing scheduler with an energy price nu."""

    nu: float
    tag = "mt"

    def __post_init__(self) -> None:
        _check_nu(self.nu)

    def metrics_block(self, block: SlotBlock) -> np.ndarray:
        return block.capacities - self.nu * block.harvests

    def select_block(self, block: SlotBlock, state=None) -> np.ndarray:
        return np.argmax(self.metrics_block(block), axis=1)


@dataclass
class PfScheduler(SlotScheduler):
    """Equal-channel-access scheduler; gamma penalizes over-served users."""

    nu: float
    gamma: np.ndarray
    tag = "pf"

    def __post_init__(self) -> None:
        _check_nu(self.nu)
        self.gamma = np.asarray(self.gamma, dtype=float)

    def metrics_block(self, block: SlotBlock) -> np.ndarray:
        if self.gamma.shape[0] != block.n_users:
            raise ValueError("gamma length does not match the number of users")
        return block.capacities - self.nu * block.harvests - self.gamma

    def select_block(self, block: SlotBlock, state=None) -> np.ndarray:
        return np.argmax(self.metrics_block(block), axis=1)


@dataclass
class EtScheduler(SlotScheduler):
    """Equal-throughput scheduler; theta reweights each user's rate."""

    nu: float
    theta: np.ndarray
    tag = "et"

    def __post_init__(self) -> None:
        _check_nu(self.nu)
        self.theta = np.asarray(self.theta, dtype=float)
        if np.any(self.theta < 0):
            raise ValueError("theta must be nonnegative")

    def metrics_block(self, block: SlotBlock) -> np.ndarray:
        if self.theta.shape[0] != block.n_users:
            raise ValueError("theta length does not match the number of users")
        return self.theta * block.capacities - self.nu * block.harvests

    def select_block(self, block: SlotBlock, state=None) -> np.ndarray:
        return np.argmax(self.metrics_block(block), axis=1)


def make_optimal_scheduler(scheme: str, duals: DualState) -> SlotScheduler:
    """Build the MT/PF/ET scheduler for a calibrated dual state."""
    if scheme == "mt":
        return MtScheduler(nu=duals.nu)
    if scheme == "pf":
        if duals.gamma is None:
            raise ValueError("pf scheduling needs calibrated gamma")
        return PfScheduler(nu=duals.nu, gamma=duals.gamma)
    if scheme == "et":
        if duals.theta is None:
            raise ValueError("et scheduling needs calibrated theta")
        return EtScheduler(nu=duals.nu, theta=duals.theta)
    raise ValueError(f"unknown optimal scheme: {scheme!r}")
