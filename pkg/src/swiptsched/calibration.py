"""Offline calibration of the scheduling multipliers.

The long-run constraints (minimum average harvested energy, equal
channel access, equal throughput) depend only on channel statistics,
so their multipliers are computed once, offline, by Monte-Carlo:
a fixed pool of fading slots estimates every constraint as an
empirical average, and the duals are adjusted until the estimates
meet their targets.

  * MT has the single multiplier nu; the pool estimate of harvested
    energy is non-decreasing in nu, so nu is found by bisection.
  * PF and ET add one multiplier per user (gamma / theta) and use a
    projected subgradient ascent with step c/sqrt(k).

The same slot pool is reused across all dual iterates (common random
numbers); fresh slots are drawn only for out-of-sample validation via
``estimate_constraints``.

Internally the duals are scale-normalized: capacities are divided by
a typical per-slot maximum capacity and harvests by the maximum
achievable average harvest, which makes the subgradient steps
dimensionless and O(1) even though the physical nu spans orders of
magnitude across geometries.  Returned DualState values are in
physical units (gamma in bits/channel-use, nu in bits per
channel-use per Watt).

Non-uniqueness gauges: gamma is reported zero-mean and theta is
renormalized to sum to one; neither changes any argmax decision.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import seeds
from .channel import SystemConfig, UserProfile, draw_block
from .scheduling import DualState, make_optimal_scheduler

_NU_CAP = 1e6  # normalized; beyond this the selection is pure minimum-harvest
_STALL_WINDOW = 400


class InfeasibleError(RuntimeError):
    """The requested harvest target exceeds what any schedule can reach."""

    def __init__(self, message: str, q_req: float, achievable: float):
        super().__init__(message)
        self.q_req = q_req
        self.achievable = achievable


class ConvergenceError(RuntimeError):
    """Calibration exhausted its iteration budget; residuals attached."""

    def __init__(self, message: str, residuals: dict):
        super().__init__(message)
        self.residuals = residuals


@dataclass
class CalibrationSettings:
    """Monte-Carlo and iteration controls for the dual search.

    ``tol_energy`` is absolute in Watts; when None it resolves to
    0.005 times the maximum achievable average harvest of the
    instance, keeping the default meaningful across geometries.
    ``tol_access`` is absolute on access frequencies and ``tol_rate``
    is relative on the per-user rate spread.
    """

    mc_slots: int = 100_000
    max_iters: int = 6000
    step_size: float = 0.5
    tol_energy: float | None = None
    tol_access: float = 0.005
    tol_rate: float = 0.01
    seed: int = 0

    def __post_init__(self) -> None:
        if self.mc_slots < 1000:
            raise ValueError("mc_slots must be at least 1000")
        if self.max_iters < 1:
            raise ValueError("max_iters must be positive")
        if self.step_size <= 0:
            raise ValueError("step_size must be positive")
        if self.tol_energy is not None and self.tol_energy <= 0:
            raise ValueError("tol_energy must be positive")
        if self.tol_access <= 0 or self.tol_rate <= 0:
            raise ValueError("tolerances must be positive")


@dataclass
class ConstraintEstimate:
    """Empirical constraint values of a scheduler over fresh slots."""

    mean_sum_harvest: float
    access_freq: np.ndarray
    per_user_rate: np.ndarray


@dataclass
class FeasibleRange:
    """Achievable average-harvest range for the MT family.

    ``greedy`` is the harvest of the unconstrained rate-maximizing
    scheduler (nu = 0); ``maximum`` is the harvest of the
    minimum-harvest-user selection, the largest any scheme can reach.
    """

    greedy: float
    maximum: float
    stderr_maximum: float


@dataclass
class _Pool:
    """Fixed slot pool with precomputed normalized quantities."""

    caps: np.ndarray       # (M, N) capacities
    harvests: np.ndarray   # (M, N)
    qsum: np.ndarray       # (M,) per-slot total harvestable power
    rows: np.ndarray       # arange(M), reused for fancy indexing
    c_scale: float         # typical per-slot max capacity
    q_scale: float         # maximum achievable average harvest
    cn: np.ndarray         # caps / c_scale
    qn: np.ndarray         # harvests / q_scale

    @property
    def n_users(self) -> int:
        return self.caps.shape[1]


def _build_pool(
    profiles: Sequence[UserProfile],
    config: SystemConfig,
    settings: CalibrationSettings,
    rng: np.random.Generator | None = None,
) -> _Pool:
    if rng is None:
        rng = seeds.substream(settings.seed, seeds.CALIBRATION)
    block = draw_block(profiles, config, rng, settings.mc_slots)
    qsum = block.harvests.sum(axis=1)
    q_scale = float(np.mean(qsum - block.harvests.min(axis=1)))
    c_scale = float(np.mean(block.capacities.max(axis=1)))
    if q_scale <= 0:  # all-zero efficiencies: price energy against capacity 1:1
        q_scale = 1.0
    return _Pool(
        caps=block.capacities,
        harvests=block.harvests,
        qsum=qsum,
        rows=np.arange(settings.mc_slots),
        c_scale=c_scale,
        q_scale=q_scale,
        cn=block.capacities / c_scale,
        qn=block.harvests / q_scale,
    )


def _evaluate(pool: _Pool, selections: np.ndarray) -> tuple[float, np.ndarray, np.ndarray]:
    """Average harvest, access frequencies and per-user rates of a selection."""
    m = len(selections)
    qbar = float(np.mean(pool.qsum - pool.harvests[pool.rows, selections]))
    counts = np.bincount(selections, minlength=pool.n_users)
    rate_sums = np.bincount(
        selections, weights=pool.caps[pool.rows, selections], minlength=pool.n_users
    )
    return qbar, counts / m, rate_sums / m


def _mt_selections(pool: _Pool, nu_t: float) -> np.ndarray:
    return np.argmax(pool.cn - nu_t * pool.qn, axis=1)


def _pf_selections(pool: _Pool, nu_t: float, gamma_t: np.ndarray) -> np.ndarray:
    return np.argmax(pool.cn - nu_t * pool.qn - gamma_t, axis=1)


def _et_selections(pool: _Pool, nu_t: float, theta: np.ndarray) -> np.ndarray:
    return np.argmax(theta * pool.cn - nu_t * pool.qn, axis=1)


def _resolve_tol_energy(settings: CalibrationSettings, pool: _Pool) -> float:
    return settings.tol_energy if settings.tol_energy is not None else 0.005 * pool.q_scale


def _check_q_req(q_req: float, pool: _Pool, tol_e: float) -> None:
    if q_req < 0:
        raise ValueError(f"q_req must be nonnegative, got {q_req}")
    if q_req > pool.q_scale + tol_e:
        raise InfeasibleError(
            f"required harvest {q_req:.6g} W exceeds the achievable maximum "
            f"{pool.q_scale:.6g} W for this geometry",
            q_req=q_req,
            achievable=pool.q_scale,
        )


def feasible_range(
    profiles: Sequence[UserProfile],
    config: SystemConfig,
    settings: CalibrationSettings,
    rng: np.random.Generator | None = None,
) -> FeasibleRange:
    """Estimate the reachable [greedy, maximum] average-harvest interval."""
    pool = _build_pool(profiles, config, settings, rng)
    greedy, _, _ = _evaluate(pool, _mt_selections(pool, 0.0))
    per_slot_max = pool.qsum - pool.harvests.min(axis=1)
    stderr = float(per_slot_max.std(ddof=1) / math.sqrt(settings.mc_slots))
    return FeasibleRange(greedy=greedy, maximum=pool.q_scale, stderr_maximum=stderr)


def estimate_constraints(
    scheme: str,
    duals: DualState,
    profiles: Sequence[UserProfile],
    config: SystemConfig,
    settings: CalibrationSettings,
    rng: np.random.Generator | None = None,
) -> ConstraintEstimate:
    """Replay a calibrated scheduler on fresh slots and average the constraints.

    Fresh means independent of the calibration pool: by default the
    validation substream of ``settings.seed`` is used.
    """
    if rng is None:
        rng = seeds.substream(settings.seed, seeds.VALIDATION)
    scheduler = make_optimal_scheduler(scheme, duals)
    block = draw_block(profiles, config, rng, settings.mc_slots)
    selections = scheduler.select_block(block)
    rows = np.arange(settings.mc_slots)
    qsum = block.harvests.sum(axis=1)
    qbar = float(np.mean(qsum - block.harvests[rows, selections]))
    counts = np.bincount(selections, minlength=len(profiles))
    rate_sums = np.bincount(
        selections, weights=block.capacities[rows, selections], minlength=len(profiles)
    )
    return ConstraintEstimate(
        mean_sum_harvest=qbar,
        access_freq=counts / settings.mc_slots,
        per_user_rate=rate_sums / settings.mc_slots,
    )


def calibrate_mt(
    q_req: float,
    profiles: Sequence[UserProfile],
    config: SystemConfig,
    settings: CalibrationSettings,
) -> DualState:
    """Find the smallest energy price nu meeting the harvest target.

    The pool estimate of average harvest is non-decreasing in nu, so
    the search brackets the target by doubling and then bisects.  If
    the unconstrained scheduler already meets the target, nu = 0 is
    returned (the harvest constraint is slack at the optimum).
    """
    pool = _build_pool(profiles, config, settings)
    tol_e = _resolve_tol_energy(settings, pool)
    _check_q_req(q_req, pool, tol_e)
    target = q_req - tol_e
    evals = 0

    def qbar_at(nu_t: float) -> float:
        nonlocal evals
        evals += 1
        qbar, _, _ = _evaluate(pool, _mt_selections(pool, nu_t))
        return qbar

    qbar_zero = qbar_at(0.0)
    nu_t = 0.0
    qbar = qbar_zero
    if qbar_zero < target:
        lo, hi = 0.0, 1.0
        qbar_hi = qbar_at(hi)
        doublings = 0
        while qbar_hi < target:
            lo, hi = hi, hi * 2.0
            qbar_hi = qbar_at(hi)
            doublings += 1
            if doublings > 80:  # beyond any resolvable price; pool met target check above
                break
        # invariant: qbar(lo) < target <= qbar(hi)
        for _ in range(200):
            if qbar_hi <= q_req + tol_e or (hi - lo) <= 1e-13 * hi:
                break
            mid = 0.5 * (lo + hi)
            qbar_mid = qbar_at(mid)
            if qbar_mid >= target:
                hi, qbar_hi = mid, qbar_mid
            else:
                lo = mid
        nu_t, qbar = hi, qbar_hi

    selections = _mt_selections(pool, nu_t)
    qbar, access, rates = _evaluate(pool, selections)
    residuals = {
        "scheme": "mt",
        "q_req": q_req,
        "tol_energy": tol_e,
        "energy_gap": qbar - q_req,
        "qbar_pool": qbar,
        "access_freq_pool": access.tolist(),
        "per_user_rate_pool": rates.tolist(),
        "iterations": evals,
        "converged": True,
        "c_scale": pool.c_scale,
        "q_scale": pool.q_scale,
    }
    return DualState(nu=nu_t * pool.c_scale / pool.q_scale, calibration_residuals=residuals)


def _energy_ok(qbar: float, q_req: float, tol_e: float, nu_t: float) -> bool:
    if qbar < q_req - tol_e:
        return False
    # complementary slackness: a strictly positive price must bind
    return nu_t <= 1e-9 or qbar <= q_req + tol_e


class _StallDetector:
    """Flags harvest targets beyond a fairness-constrained scheme's reach.

    The energy price only ever pushes the pool harvest up; when the
    best harvest seen stops improving for a whole window and never
    came close to the target, the subgradient has saturated and the
    target is declared infeasible for this scheme.  An iterate that
    did reach the target proves reachability, so the detector stays
    quiet forever after, even through later oscillations around the
    joint optimum.
    """

    def __init__(self, target: float, margin: float):
        self.target = target
        self.margin = margin
        self.best = -math.inf
        self.last_improvement = 0

    def stalled(self, k: int, qbar: float) -> bool:
        if qbar > self.best + self.margin:
            self.best = qbar
            self.last_improvement = k
        return self.best < self.target and (k - self.last_improvement) >= _STALL_WINDOW


def calibrate_pf(
    q_req: float,
    profiles: Sequence[UserProfile],
    config: SystemConfig,
    settings: CalibrationSettings,
    warm_start: DualState | None = None,
) -> DualState:
    """Calibrate (nu, gamma) so access is uniform and the harvest target binds.

    Projected subgradient with step ``step_size / sqrt(k)``:

        gamma_n += step * (access_n - 1/N)          (then recentred)
        nu      += step * (q_req - harvest)         (clamped at 0)

    evaluated on the fixed pool every iteration.  If the loop budget
    runs out, the tail-averaged iterate is tried before giving up.
    """
    pool = _build_pool(profiles, config, settings)
    tol_e = _resolve_tol_energy(settings, pool)
    _check_q_req(q_req, pool, tol_e)
    n = pool.n_users

    nu_t = 0.0
    gamma_t = np.zeros(n)
    if warm_start is not None:
        nu_t = warm_start.nu * pool.q_scale / pool.c_scale
        if warm_start.gamma is not None:
            gamma_t = np.asarray(warm_start.gamma, dtype=float) / pool.c_scale
            gamma_t = gamma_t - gamma_t.mean()

    def residuals_for(qbar, access, rates, k, converged, averaged=False) -> dict:
        return {
            "scheme": "pf",
            "q_req": q_req,
            "tol_energy": tol_e,
            "tol_access": settings.tol_access,
            "energy_gap": qbar - q_req,
            "access_gap": float(np.max(np.abs(access - 1.0 / n))),
            "qbar_pool": qbar,
            "access_freq_pool": access.tolist(),
            "per_user_rate_pool": rates.tolist(),
            "iterations": k,
            "converged": converged,
            "averaged": averaged,
            "c_scale": pool.c_scale,
            "q_scale": pool.q_scale,
        }

    def finish(qbar, access, rates, k, averaged=False) -> DualState:
        return DualState(
            nu=nu_t * pool.c_scale / pool.q_scale,
            gamma=(gamma_t - gamma_t.mean()) * pool.c_scale,
            calibration_residuals=residuals_for(qbar, access, rates, k, True, averaged),
        )

    tail_nu, tail_gamma, tail_count = 0.0, np.zeros(n), 0
    tail_from = settings.max_iters // 2
    stall = _StallDetector(target=q_req - tol_e, margin=0.1 * tol_e)
    last = None
    for k in range(1, settings.max_iters + 1):
        selections = _pf_selections(pool, nu_t, gamma_t)
        qbar, access, rates = _evaluate(pool, selections)
        last = (qbar, access, rates, k)
        acc_gap = float(np.max(np.abs(access - 1.0 / n)))
        if acc_gap <= settings.tol_access and _energy_ok(qbar, q_req, tol_e, nu_t):
            return finish(qbar, access, rates, k)
        if stall.stalled(k, qbar):
            raise InfeasibleError(
                f"harvest target {q_req:.6g} W is not reachable under equal "
                f"channel access (best average harvest observed: {stall.best:.6g} W)",
                q_req=q_req,
                achievable=stall.best,
            )

        step = settings.step_size / math.sqrt(k)
        nu_t = min(max(0.0, nu_t + step * (q_req - qbar) / pool.q_scale), _NU_CAP)
        gamma_t = gamma_t + step * (access - 1.0 / n)
        gamma_t -= gamma_t.mean()

        if k >= tail_from:
            tail_nu += nu_t
            tail_gamma += gamma_t
            tail_count += 1

    # Fallback: the averaged tail iterate often sits at the constraint
    # set even when the raw iterate keeps hopping across it.
    if tail_count:
        nu_t = tail_nu / tail_count
        gamma_t = tail_gamma / tail_count
        selections = _pf_selections(pool, nu_t, gamma_t)
        qbar, access, rates = _evaluate(pool, selections)
        acc_gap = float(np.max(np.abs(access - 1.0 / n)))
        if acc_gap <= settings.tol_access and _energy_ok(qbar, q_req, tol_e, nu_t):
            return finish(qbar, access, rates, settings.max_iters, averaged=True)
        last = (qbar, access, rates, settings.max_iters)

    res = residuals_for(*last, converged=False, averaged=bool(tail_count))
    raise ConvergenceError(
        f"pf calibration did not converge in {settings.max_iters} iterations "
        f"(access gap {res['access_gap']:.4g}, energy gap {res['energy_gap']:.4g} W)",
        residuals=res,
    )


def calibrate_et(
    q_req: float,
    profiles: Sequence[UserProfile],
    config: SystemConfig,
    settings: CalibrationSettings,
    warm_start: DualState | None = None,
) -> DualState:
    """Calibrate (nu, theta) so per-user throughputs equalize under the target.

    theta is updated by a projected subgradient against the gap
    between each user's pool rate and the minimum rate, clamped at
    zero and renormalized to the unit simplex after every step; nu is
    updated as in the PF calibration.  The initial theta weights each
    user by the inverse of its mean pool capacity, which starts the
    search close to the equal-throughput region.
    """
    pool = _build_pool(profiles, config, settings)
    tol_e = _resolve_tol_energy(settings, pool)
    _check_q_req(q_req, pool, tol_e)
    n = pool.n_users

    nu_t = 0.0
    inv_cap = 1.0 / np.maximum(pool.caps.mean(axis=0), 1e-30)
    theta = inv_cap / inv_cap.sum()
    if warm_start is not None:
        nu_t = warm_start.nu * pool.q_scale / pool.c_scale
        if warm_start.theta is not None:
            theta = np.asarray(warm_start.theta, dtype=float)
            theta = np.maximum(theta, 0.0)
            theta = theta / theta.sum() if theta.sum() > 0 else inv_cap / inv_cap.sum()

    def spread_of(rates: np.ndarray) -> float:
        mean = float(rates.mean())
        if mean <= 0:
            return math.inf
        return float((rates.max() - rates.min()) / mean)

    def residuals_for(qbar, rates, k, converged, averaged=False) -> dict:
        return {
            "scheme": "et",
            "q_req": q_req,
            "tol_energy": tol_e,
            "tol_rate": settings.tol_rate,
            "energy_gap": qbar - q_req,
            "rate_spread": spread_of(rates),
            "qbar_pool": qbar,
            "per_user_rate_pool": rates.tolist(),
            "theta_sum": float(theta.sum()),
            "iterations": k,
            "converged": converged,
            "averaged": averaged,
            "c_scale": pool.c_scale,
            "q_scale": pool.q_scale,
        }

    def finish(qbar, rates, k, averaged=False) -> DualState:
        return DualState(
            nu=nu_t * pool.c_scale / pool.q_scale,
            theta=theta / theta.sum(),
            calibration_residuals=residuals_for(qbar, rates, k, True, averaged),
        )

    tail_nu, tail_theta, tail_count = 0.0, np.zeros(n), 0
    tail_from = settings.max_iters // 2
    stall = _StallDetector(target=q_req - tol_e, margin=0.1 * tol_e)
    last = None
    for k in range(1, settings.max_iters + 1):
        selections = _et_selections(pool, nu_t, theta)
        qbar, _, rates = _evaluate(pool, selections)
        last = (qbar, rates, k)
        if spread_of(rates) <= settings.tol_rate and _energy_ok(qbar, q_req, tol_e, nu_t):
            return finish(qbar, rates, k)
        if stall.stalled(k, qbar):
            raise InfeasibleError(
                f"harvest target {q_req:.6g} W is not reachable under equal "
                f"throughput (best average harvest observed: {stall.best:.6g} W)",
                q_req=q_req,
                achievable=stall.best,
            )

        step = settings.step_size / math.sqrt(k)
        nu_t = min(max(0.0, nu_t + step * (q_req - qbar) / pool.q_scale), _NU_CAP)
        r_min = float(rates.min())
        rate_scale = max(float(rates.mean()), 1e-30)
        delta = step * (r_min - rates) / rate_scale
        # keep every weight strictly positive: a user whose weight hits
        # zero is never scheduled again and its rate cannot recover
        delta = np.maximum(delta, -0.5 * theta)
        theta = np.maximum(theta + delta, 0.0)
        theta = theta / theta.sum()

        if k >= tail_from:
            tail_nu += nu_t
            tail_theta += theta
            tail_count += 1

    if tail_count:
        nu_t = tail_nu / tail_count
        theta = tail_theta / tail_count
        theta = theta / theta.sum()
        selections = _et_selections(pool, nu_t, theta)
        qbar, _, rates = _evaluate(pool, selections)
        if spread_of(rates) <= settings.tol_rate and _energy_ok(qbar, q_req, tol_e, nu_t):
            return finish(qbar, rates, settings.max_iters, averaged=True)
        last = (qbar, rates, settings.max_iters)

    res = residuals_for(*last, converged=False, averaged=bool(tail_count))
    raise ConvergenceError(
        f"et calibration did not converge in {settings.max_iters} iterations "
        f"(rate spread {res['rate_spread']:.4g}, energy gap {res['energy_gap']:.4g} W)",
        residuals=res,
    )


def settings_hash(settings: CalibrationSettings) -> str:
    """Stable hash of the settings a calibration was run with."""
    payload = json.dumps(asdict(settings), sort_keys=True)
    return hashlib.sha256(payload.encode()).hexdigest()[:16]


def save_duals(
    path: str | Path, scheme: str, duals: DualState, settings: CalibrationSettings
) -> None:
    """Write a calibration record so online scheduling can reuse it."""
    record = {
        "scheme": scheme,
        "nu": duals.nu,
        "gamma": None if duals.gamma is None else np.asarray(duals.gamma).tolist(),
        "theta": None if duals.theta is None else np.asarray(duals.theta).tolist(),
        "residuals": duals.calibration_residuals,
        "settings_hash": settings_hash(settings),
    }
    Path(path).write_text(json.dumps(record, indent=2) + "\n")


def load_duals(path: str | Path) -> tuple[str, DualState]:
    """Read back a calibration record written by ``save_duals``."""
    record = json.loads(Path(path).read_text())
    duals = DualState(
        nu=float(record["nu"]),
        gamma=None if record.get("gamma") is None else np.asarray(record["gamma"], dtype=float),
        theta=None if record.get("theta") is None else np.asarray(record["theta"], dtype=float),
        calibration_residuals=record.get("residuals", {}),
    )
    return record["scheme"], duals
