"""Command-line entry point.

Subcommands
-----------
calibrate     compute duals for a scheme and harvest target, save to JSON
run           simulate one scheduler and emit its statistics
sweep         trace a rate-energy curve (harvest grid or selection orders)
oracle-check  verify the dual-metric schedule against brute force

Exit codes: 0 success, 1 oracle-check failure, 2 configuration error,
3 infeasible harvest target, 4 calibration non-convergence.

All randomness derives from one root seed (``--seed`` or the config's
``seed``) through fixed substreams: user placement, calibration pool,
simulation run, and validation each have their own stream, so results
are reproducible component by component.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace

import numpy as np

from . import seeds
from .baselines import OrderPolicy, make_order_scheduler
from .calibration import (
    CalibrationSettings,
    ConvergenceError,
    InfeasibleError,
    calibrate_et,
    calibrate_mt,
    calibrate_pf,
    feasible_range,
    load_duals,
    save_duals,
)
from .channel import ConfigError, SystemConfig, load_config, place_users
from .oracle import brute_force_mt, dual_mt_schedule, random_instance
from .scheduling import make_optimal_scheduler
from .simulator import (
    OPTIMAL_SCHEMES,
    ORDER_SCHEMES,
    SweepPoint,
    default_order_policies,
    run as run_simulation,
    sweep_orders,
    sweep_q_req,
    write_csv,
    write_jsonl,
)

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_CONFIG = 2
EXIT_INFEASIBLE = 3
EXIT_NO_CONVERGENCE = 4

ALL_SCHEMES = OPTIMAL_SCHEMES + ORDER_SCHEMES


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", required=True, help="config file (key=value or JSON)")
    parser.add_argument("--users", type=int, help="override n_users")
    parser.add_argument("--seed", type=int, help="override the root seed")
    parser.add_argument("--slots", type=int, help="override n_slots")


def _add_settings(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--mc-slots", type=int, default=100_000)
    parser.add_argument("--max-iters", type=int, default=6000)
    parser.add_argument("--step-size", type=float, default=0.5)
    parser.add_argument("--tol-energy", type=float, default=None)
    parser.add_argument("--tol-access", type=float, default=0.005)
    parser.add_argument("--tol-rate", type=float, default=0.01)


def _add_output(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--out", help="output file (default: print a summary)")
    parser.add_argument("--format", choices=("csv", "jsonl"), default="csv")
    parser.add_argument(
        "--rate-unit",
        choices=("bpcu", "bps"),
        default="bpcu",
        help="bps multiplies rates by the configured bandwidth",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="swipt-sched",
        description="Downlink multiuser scheduling with wireless power transfer",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_cal = sub.add_parser("calibrate", help="calibrate duals for a scheme")
    _add_common(p_cal)
    _add_settings(p_cal)
    p_cal.add_argument("--scheme", choices=OPTIMAL_SCHEMES, required=True)
    p_cal.add_argument("--q-req", type=float, help="harvest target in Watts (default: config)")
    p_cal.add_argument("--out", required=True, help="duals JSON output path")

    p_run = sub.add_parser("run", help="simulate one scheduler")
    _add_common(p_run)
    _add_settings(p_run)
    _add_output(p_run)
    p_run.add_argument("--scheme", choices=ALL_SCHEMES, required=True)
    p_run.add_argument("--q-req", type=float, help="harvest target for mt/pf/et")
    p_run.add_argument("--duals", help="reuse a saved calibration instead of calibrating")
    p_run.add_argument("--j", type=int, default=1, help="selection order for order-mt/order-pf")
    p_run.add_argument("--orders", help="eligible orders for order-et, e.g. '1,2'")

    p_sweep = sub.add_parser("sweep", help="trace a rate-energy curve")
    _add_common(p_sweep)
    _add_settings(p_sweep)
    _add_output(p_sweep)
    p_sweep.add_argument("--scheme", choices=ALL_SCHEMES, required=True)
    p_sweep.add_argument(
        "--grid",
        default="0:auto:20",
        help="harvest grid lo:hi:count; hi may be 'auto' (mt/pf/et only)",
    )
    p_sweep.add_argument("--workers", type=int, default=1)

    p_oracle = sub.add_parser("oracle-check", help="compare against brute force")
    p_oracle.add_argument("--config", help="optional config file")
    p_oracle.add_argument("--users", type=int, default=3)
    p_oracle.add_argument("--seed", type=int, default=1)
    p_oracle.add_argument("--instances", type=int, default=50)
    p_oracle.add_argument("--slots-per-instance", type=int, default=6)
    return parser


def _load(args) -> SystemConfig:
    config = load_config(args.config)
    overrides = {}
    if args.users is not None:
        overrides["n_users"] = args.users
    if args.seed is not None:
        overrides["seed"] = args.seed
    if getattr(args, "slots", None) is not None:
        overrides["n_slots"] = args.slots
    return replace(config, **overrides) if overrides else config


def _settings(args, seed: int) -> CalibrationSettings:
    return CalibrationSettings(
        mc_slots=args.mc_slots,
        max_iters=args.max_iters,
        step_size=args.step_size,
        tol_energy=args.tol_energy,
        tol_access=args.tol_access,
        tol_rate=args.tol_rate,
        seed=seed,
    )


_CALIBRATORS = {"mt": calibrate_mt, "pf": calibrate_pf, "et": calibrate_et}


def _cmd_calibrate(args) -> int:
    config = _load(args)
    profiles = place_users(config, seeds.substream(config.seed, seeds.PLACEMENT))
    settings = _settings(args, config.seed)
    q_req = config.q_req if args.q_req is None else args.q_req
    duals = _CALIBRATORS[args.scheme](q_req, profiles, config, settings)
    save_duals(args.out, args.scheme, duals, settings)
    print(f"calibrated {args.scheme}: nu={duals.nu:.6g} -> {args.out}")
    return EXIT_OK


def _parse_orders(text: str) -> frozenset[int]:
    try:
        return frozenset(int(v) for v in text.split(","))
    except ValueError:
        raise ConfigError(f"cannot parse --orders value {text!r}") from None


def _build_scheduler(args, config, profiles, settings):
    """Returns (scheduler, point metadata) for the run subcommand."""
    scheme = args.scheme
    if scheme in OPTIMAL_SCHEMES:
        q_req = config.q_req if args.q_req is None else args.q_req
        if args.duals:
            saved_scheme, duals = load_duals(args.duals)
            if saved_scheme != scheme:
                raise ConfigError(
                    f"duals file holds scheme {saved_scheme!r}, requested {scheme!r}"
                )
            q_req = duals.calibration_residuals.get("q_req", q_req)
        else:
            duals = _CALIBRATORS[scheme](q_req, profiles, config, settings)
        return make_optimal_scheduler(scheme, duals), dict(q_req=q_req, duals=duals)
    if scheme == "order-et":
        orders = _parse_orders(args.orders) if args.orders else frozenset({args.j})
        policy = OrderPolicy(scheme, s_a=orders)
    else:
        policy = OrderPolicy(scheme, j=args.j)
    try:
        policy.validate(config.n_users)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return make_order_scheduler(policy, profiles), dict(
        q_req=None, duals=None, order_j=policy.j, order_set=policy.s_a
    )


def _emit(args, config, points) -> None:
    rate_scale = config.bandwidth_hz if args.rate_unit == "bps" else 1.0
    if args.out:
        writer = write_csv if args.format == "csv" else write_jsonl
        writer(args.out, points, config.n_users, rate_scale, args.rate_unit)
        print(f"wrote {len(points)} point(s) -> {args.out}")
    for point in points:
        if point.stats is None:
            print(f"{point.label}: infeasible ({point.error})")
        else:
            s = point.stats
            print(
                f"{point.label}: rate={s.avg_sum_rate * rate_scale:.6g} {args.rate_unit}, "
                f"harvest={s.avg_sum_harvest:.6g} W, jain={s.jain_index:.4f}"
            )


def _cmd_run(args) -> int:
    config = _load(args)
    profiles = place_users(config, seeds.substream(config.seed, seeds.PLACEMENT))
    settings = _settings(args, config.seed)
    scheduler, meta = _build_scheduler(args, config, profiles, settings)
    stats = run_simulation(scheduler, profiles, config, config.n_slots, config.seed)
    point = SweepPoint(scheme=scheduler.tag, stats=stats, feasible=True, **meta)
    _emit(args, config, [point])
    return EXIT_OK


def _parse_grid(text: str, profiles, config, settings) -> list[float]:
    parts = text.split(":")
    if len(parts) != 3:
        raise ConfigError(f"grid must be lo:hi:count, got {text!r}")
    lo = float(parts[0])
    count = int(parts[2])
    if parts[1] == "auto":
        fr = feasible_range(profiles, config, settings)
        hi = fr.maximum - fr.stderr_maximum
    else:
        hi = float(parts[1])
    if count < 1 or hi < lo:
        raise ConfigError(f"empty grid: {text!r}")
    return list(np.linspace(lo, hi, count))


def _cmd_sweep(args) -> int:
    config = _load(args)
    profiles = place_users(config, seeds.substream(config.seed, seeds.PLACEMENT))
    settings = _settings(args, config.seed)
    if args.scheme in OPTIMAL_SCHEMES:
        grid = _parse_grid(args.grid, profiles, config, settings)
        points = sweep_q_req(
            args.scheme, grid, profiles, config, settings,
            config.n_slots, config.seed, workers=args.workers,
        )
    else:
        policies = default_order_policies(args.scheme, config.n_users)
        points = sweep_orders(args.scheme, policies, profiles, config, config.n_slots, config.seed)
    _emit(args, config, points)
    return EXIT_OK


def _cmd_oracle_check(args) -> int:
    if args.config:
        config = load_config(args.config)
        config = replace(config, n_users=args.users, seed=args.seed)
    else:
        config = SystemConfig(n_users=args.users, seed=args.seed)
    profiles = place_users(config, seeds.substream(config.seed, seeds.PLACEMENT))
    rng = seeds.substream(config.seed, seeds.VALIDATION)
    worst_gap, worst_bound = 0.0, 0.0
    failures = 0
    for _ in range(args.instances):
        fraction = float(rng.uniform(0.05, 0.9))
        inst = random_instance(profiles, config, rng, args.slots_per_instance, fraction)
        brute = brute_force_mt(inst)
        dual = dual_mt_schedule(inst)
        if not brute.feasible or dual is None:
            failures += 1
            continue
        schedule, _ = dual
        gap = brute.value - inst.rate_of(schedule)
        bound = inst.gap_bound()
        ok = inst.harvest_of(schedule) >= inst.q_req and -1e-9 <= gap <= bound
        if not ok:
            failures += 1
        if gap > worst_gap:
            worst_gap, worst_bound = gap, bound
    print(
        f"oracle-check: {args.instances - failures}/{args.instances} instances ok, "
        f"worst gap {worst_gap:.6g} (bound {worst_bound:.6g})"
    )
    return EXIT_OK if failures == 0 else EXIT_CHECK_FAILED


_COMMANDS = {
    "calibrate": _cmd_calibrate,
    "run": _cmd_run,
    "sweep": _cmd_sweep,
    "oracle-check": _cmd_oracle_check,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except InfeasibleError as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except ConvergenceError as exc:
        print(f"no convergence: {exc}", file=sys.stderr)
        return EXIT_NO_CONVERGENCE
    except OSError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
