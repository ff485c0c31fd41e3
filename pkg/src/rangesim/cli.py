"""Command-line entry point: run scenarios, project lifetimes, compare.

Exit codes: 0 success, 2 invalid scenario or flags (with the offending
field named), 3 failure during a run.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import yaml

from . import scenario as scenario_mod
from . import report
from .simulator import ScenarioInvalid, Simulator


def _resolve(path_arg: str) -> Path:
    """Accept a filesystem path or the stem of a bundled scenario."""
    p = Path(path_arg)
    if p.exists():
        return p
    try:
        return scenario_mod.bundled_scenario_path(path_arg)
    except FileNotFoundError:
        raise ScenarioInvalid(
            f"{path_arg}: no such file and no bundled scenario by that name "
            f"(bundled: {', '.join(scenario_mod.list_bundled())})")


def _cmd_run(args: argparse.Namespace) -> int:
    sc = scenario_mod.load_scenario(_resolve(args.scenario))
    if args.seed is not None:
        sc.seed = args.seed
    outdir = Path(args.out)
    out = Simulator(sc).run()
    report.write_run_artifacts(out, outdir)
    print((outdir / "summary.txt").read_text(), end="")
    print(f"artifacts written to {outdir}/")
    return 0


def _cmd_lifetime(args: argparse.Namespace) -> int:
    if args.tau <= 0:
        raise ScenarioInvalid("--tau must be positive")
    if args.capacity <= 0:
        raise ScenarioInvalid("--capacity must be positive")
    print(report.lifetime_report(args.tau, args.capacity,
                                 include_ranging=args.ranging), end="")
    return 0


def _cmd_compare(args: argparse.Namespace) -> int:
    path = _resolve(args.scenario)
    try:
        doc = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ScenarioInvalid(f"{path}: not valid YAML: {exc}")
    if not isinstance(doc, dict) or doc.get("kind") != "baseline_comparison":
        raise ScenarioInvalid(
            f"{path}: kind must be baseline_comparison for compare")
    print(report.compare_report(doc), end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rangesim",
        description="deterministic simulator for duty-cycled ranging networks")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute a scenario and write artifacts")
    p_run.add_argument("scenario", help="scenario file or bundled name")
    p_run.add_argument("--seed", type=int, default=None,
                       help="override the scenario's seed")
    p_run.add_argument("--out", default="out", help="output directory")
    p_run.set_defaults(fn=_cmd_run)

    p_life = sub.add_parser("lifetime", help="closed-form lifetime projection")
    p_life.add_argument("--tau", type=float, default=600.0,
                        help="cycle period in seconds")
    p_life.add_argument("--capacity", type=float, default=810.0,
                        help="battery capacity in coulombs")
    p_life.add_argument("--ranging", action="store_true",
                        help="include one ranging task per cycle")
    p_life.set_defaults(fn=_cmd_lifetime)

    p_cmp = sub.add_parser("compare",
                           help="framework vs always-on vs CAD-polling")
    p_cmp.add_argument("scenario", help="comparison file or bundled name")
    p_cmp.set_defaults(fn=_cmd_compare)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ScenarioInvalid as exc:
        print(f"scenario error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # pragma: no cover - defensive
        print(f"run failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
