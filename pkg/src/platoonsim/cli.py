"""Command-line entry point: ``platoonsim {run,sweep,validate-tked,trace}``."""
from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path

import numpy as np

from .config import ALGORITHMS, ConfigError, SweepPlan, parse_config, validate_plan
from .engine import run_iteration
from .experiment import SweepError, resolve_threads, run_sweep, write_outputs
from .scenario import derive_seed, sample_scenario
from .tked import compare_with_oracle

EXIT_OK = 0
EXIT_CONFIG = 2  # config file missing, or a required flag absent
EXIT_RUNTIME = 3
EXIT_VALIDATION = 4
EXIT_MALFORMED = 5
EXIT_SCHEMA = 6
EXIT_INVARIANT = 7

CONFIG_EXIT = {"missing": EXIT_CONFIG, "malformed": EXIT_MALFORMED, "schema": EXIT_SCHEMA,
               "invariant": EXIT_INVARIANT}

ORACLE_TOLERANCE = 0.05

log = logging.getLogger("platoonsim")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON config file (defaults if omitted)")
    common.add_argument("--algo", choices=ALGORITHMS, help="collision-avoidance algorithm for ICVs")
    common.add_argument("--mpr", type=float, help="market penetration rate in [0,1]")
    common.add_argument("--iterations", type=int, help="Monte Carlo iterations per cell")
    common.add_argument("--seed", type=int, help="root seed")
    common.add_argument("--out", type=Path, help="output directory")
    common.add_argument("--trace", action="store_true", help="also dump an NDJSON tick trace")
    common.add_argument("--threads", type=int, help="worker threads (env PLATOONSIM_THREADS)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="platoonsim", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("run", parents=[common], help="run one (algorithm, mpr) cell and print a summary")
    sub.add_parser("sweep", parents=[common], help="run the configured sweep and write outputs")
    sub.add_parser("validate-tked", parents=[common], help="compare the TKED solver with the grid oracle")
    sub.add_parser("trace", parents=[common], help="run one iteration and dump its NDJSON trace")
    return parser


def _plan_with_overrides(plan: SweepPlan, args) -> SweepPlan:
    changes = {}
    if args.algo:
        changes["algorithms"] = (args.algo,)
    if args.mpr is not None:
        changes["mpr_grid"] = (args.mpr,)
    if args.iterations is not None:
        changes["iterations"] = args.iterations
        changes["tked_iterations"] = args.iterations
    if args.seed is not None:
        changes["seed"] = args.seed
    if not changes:
        return plan
    plan = dataclasses.replace(plan, **changes)
    validate_plan(plan)
    return plan


def _print_summary(result) -> None:
    print(f"{'algo':5s} {'mpr':>4s} {'iters':>6s} {'crashes':>8s} {'rate/pair':>10s} "
          f"{'iter frac':>9s} {'E/crash [J]':>12s}  crashes by position 2..n")
    for (algo, mpr), cell in result.cells.items():
        m = cell.metrics
        by_pos = " ".join(str(v) for v in m.crash_count_by_position.values())
        print(f"{algo:5s} {mpr:4.2f} {m.iterations:6d} {m.n_crashes:8d} {m.crash_rate_per_pair:10.4f} "
              f"{m.iteration_crash_fraction:9.3f} {m.mean_e_loss_per_crash:12.0f}  {by_pos}")


def _cmd_run(cfg, plan, args) -> int:
    if args.algo is None or args.mpr is None:
        print("run needs --algo and --mpr", file=sys.stderr)
        return EXIT_CONFIG
    result = run_sweep(plan, cfg, threads=args.threads)
    _print_summary(result)
    if args.out:
        write_outputs(result, args.out)
        if args.trace:
            _write_trace(cfg, plan, args.out)
    return EXIT_OK


def _cmd_sweep(cfg, plan, args) -> int:
    out = args.out or Path("results")
    log.info("sweep: %s x %d mpr values, %d threads", ",".join(plan.algorithms),
             len(plan.mpr_grid), resolve_threads(args.threads))
    result = run_sweep(plan, cfg, threads=args.threads)
    _print_summary(result)
    for path in write_outputs(result, out):
        log.info("wrote %s", path)
    if args.trace:
        _write_trace(cfg, plan, out)
    return EXIT_OK


def _write_trace(cfg, plan, out: Path | None) -> None:
    algo, mpr = plan.algorithms[0], plan.mpr_grid[0]
    seed = derive_seed(plan.seed, mpr, 0)
    result = run_iteration(sample_scenario(cfg, mpr, seed), algo, cfg, trace=True)
    text = result.trace_ndjson(cfg.dt)
    if out is None:
        sys.stdout.write(text)
        return
    out.mkdir(parents=True, exist_ok=True)
    (out / "trace.ndjson").write_text(text)


def _cmd_trace(cfg, plan, args) -> int:
    if args.algo is None or args.mpr is None:
        print("trace needs --algo and --mpr", file=sys.stderr)
        return EXIT_CONFIG
    _write_trace(cfg, plan, args.out)
    return EXIT_OK


def _cmd_validate(cfg, plan, args) -> int:
    n = args.iterations or 100
    gaps = compare_with_oracle(n, plan.seed, cfg.tked)
    worst = float(np.max(gaps))
    print(f"instances={n} max_objective_gap={worst:.6f} mean_gap={float(np.mean(gaps)):.6f} "
          f"tolerance={ORACLE_TOLERANCE}")
    if worst > ORACLE_TOLERANCE:
        print("FAIL: solver objective exceeds oracle by more than tolerance", file=sys.stderr)
        return EXIT_VALIDATION
    print("PASS")
    return EXIT_OK


COMMANDS = {"run": _cmd_run, "sweep": _cmd_sweep, "validate-tked": _cmd_validate, "trace": _cmd_trace}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        cfg, plan = parse_config(args.config)
        plan = _plan_with_overrides(plan, args)
        if args.threads is not None and args.threads < 1:
            raise ConfigError("threads must be >= 1", key="threads")
        return COMMANDS[args.command](cfg, plan, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return CONFIG_EXIT.get(exc.kind, EXIT_CONFIG)
    except (SweepError, RuntimeError, ValueError, OSError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
