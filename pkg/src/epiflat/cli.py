"""Command line entry point: ``epiflat {plan,openloop,closedloop,estimate-gamma}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

from .integrator import SimulationError
from .planner import plan_summary
from .scenario import (
    ConfigError,
    emit_outputs,
    estimate_gamma_csv,
    load_config,
    read_trajectory_csv,
    reference_csv,
    run_scenario,
    write_rows,
)

log = logging.getLogger("epiflat")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", required=True, type=Path, help="scenario INI file")
    p.add_argument("--out", required=True, type=Path, help="output directory")
    p.add_argument("--seed", type=int, default=None, help="overrides [noise] seed")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="epiflat",
        description="Flatness-based social-distancing plans for the SIR model with model-free tracking.",
    )
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    _common(sub.add_parser("plan", help="print the plan summary and write reference.csv"))
    p = sub.add_parser("openloop", help="run the plan without feedback")
    _common(p)
    p.add_argument("--plots", action="store_true", help="also write PNG panels")
    p = sub.add_parser("closedloop", help="run the plan with iP feedback")
    _common(p)
    p.add_argument("--plots", action="store_true", help="also write PNG panels")
    p = sub.add_parser("estimate-gamma", help="estimate the recovery rate along a trajectory")
    _common(p)
    p.add_argument(
        "--trajectory",
        type=Path,
        default=None,
        help="existing trajectory CSV; if omitted the configured scenario is run first",
    )
    return parser


def _plan(args, cfg) -> int:
    summary = plan_summary(cfg.plan)
    args.out.mkdir(parents=True, exist_ok=True)
    (args.out / "reference.csv").write_text(reference_csv(cfg.plan, cfg.grid), encoding="utf-8")
    text = json.dumps(summary.__dict__ | {"warnings": list(summary.warnings)}, indent=2)
    (args.out / "plan.json").write_text(text + "\n", encoding="utf-8")
    print(text)
    return 0


def _run(args, cfg, kind: str) -> int:
    result = run_scenario(cfg.with_controller(kind), seed=args.seed)
    emit_outputs(result, cfg, args.out, plots=True if args.plots else None)
    s = result.summary
    print(
        json.dumps(
            {k: s.get(k) for k in ("records", "max_abs_delta_I", "max_abs_delta_I_after_settle", "clamp_count")},
            indent=2,
        )
    )
    return 0


def _estimate(args, cfg) -> int:
    diff = cfg.differentiator()
    if args.trajectory is None:
        result = run_scenario(cfg, seed=args.seed)
        emit_outputs(result, cfg, args.out, plots=False)
        source = args.out / "trajectory.csv"
    else:
        source = args.trajectory
    fields, rows = read_trajectory_csv(source)
    new_rows = estimate_gamma_csv(rows, diff, cfg.estimation.I_floor)
    names = list(fields) + [c for c in ("gamma_est", "dI_est", "gamma_valid") if c not in fields]
    args.out.mkdir(parents=True, exist_ok=True)
    target = args.out / "trajectory_gamma.csv"
    write_rows(target, names, new_rows)
    n_valid = sum(r["gamma_valid"] == "1" for r in new_rows)
    print(json.dumps({"rows": len(new_rows), "valid": n_valid, "output": str(target)}, indent=2))
    return 0


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args.config)
        if args.command == "plan":
            return _plan(args, cfg)
        if args.command == "openloop":
            return _run(args, cfg, "openloop")
        if args.command == "closedloop":
            return _run(args, cfg, "mfc")
        return _estimate(args, cfg)
    except ConfigError as exc:
        print(f"epiflat: config error: {exc}", file=sys.stderr)
        return 2
    except SimulationError as exc:
        print(f"epiflat: simulation aborted: {exc}", file=sys.stderr)
        return 3
    except (OSError, ValueError) as exc:
        print(f"epiflat: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
