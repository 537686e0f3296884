"""Command line entry points: trace and sweep experiments plus self-checks."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .experiments import load_scenario, run_sweep, run_trace_experiment, validate_oracles


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="aoi-forge",
        description="Mixed-criticality peak age-of-information optimization "
        "and network simulation",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_trace = sub.add_parser("trace", help="optimize and simulate one scenario")
    p_trace.add_argument("--scenario", required=True, help="scenario JSON file")
    p_trace.add_argument("--out", required=True, help="output directory")

    p_sweep = sub.add_parser("sweep", help="optimize over power/link-count grids")
    p_sweep.add_argument("--scenario", required=True, help="scenario JSON file")
    p_sweep.add_argument("--out", required=True, help="output directory")

    p_val = sub.add_parser("validate", help="run the oracle self-check suite")
    p_val.add_argument("--full", action="store_true",
                       help="full sample counts instead of the fast profile")

    args = parser.parse_args(argv)

    if args.command == "trace":
        scenario = load_scenario(Path(args.scenario))
        summary = run_trace_experiment(scenario, args.out)
        print(json.dumps(summary, indent=2))
        return 0
    if args.command == "sweep":
        scenario = load_scenario(Path(args.scenario))
        rows = run_sweep(scenario, args.out)
        failures = sum(1 for r in rows if r["status"].startswith("error"))
        print(f"sweep finished: {len(rows)} points, {failures} failures -> {args.out}")
        return 1 if failures == len(rows) else 0
    if args.command == "validate":
        checks = validate_oracles(fast=not args.full)
        width = max(len(name) for name, _, _ in checks)
        ok_all = True
        for name, ok, detail in checks:
            ok_all &= ok
            print(f"{'PASS' if ok else 'FAIL'}  {name:<{width}}  {detail}")
        return 0 if ok_all else 1
    return 2


if __name__ == "__main__":
    sys.exit(main())
