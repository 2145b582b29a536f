"""``teamphone`` command line.

    teamphone run SCENARIO [--seed N] [--horizon 60s] [--out-dir DIR] ...
    teamphone compare REPORT_A REPORT_B
    teamphone list

Exit codes: 0 success, 1 usage, 2 scenario schema, 3 kernel error.
"""

from __future__ import annotations

import argparse
import json
import sys
from importlib import resources
from pathlib import Path

from ..sim.kernel import KernelError
from ..sim.runner import run
from ..sim.scenario import ROUTING_POLICIES
from .report import IncompatibleReports, compare_runs, dump_report, load_report
from .scenario_file import ScenarioFileError, load_scenario, parse_quantity

EXIT_OK, EXIT_USAGE, EXIT_SCHEMA, EXIT_KERNEL = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def bundled_scenarios() -> dict:
    root = resources.files("teamphone.cli") / "scenarios"
    return {p.name[: -len(".scenario")]: p for p in sorted(root.iterdir(), key=lambda p: p.name)
            if p.name.endswith(".scenario")}


def resolve_scenario(name: str) -> Path:
    p = Path(name)
    if p.exists():
        return p
    found = bundled_scenarios().get(name.removesuffix(".scenario"))
    if found is None:
        raise FileNotFoundError(name)
    return Path(str(found))


def _duration(text: str) -> float:
    try:
        return float(text)
    except ValueError:
        pass
    try:
        return parse_quantity(text, "time")
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="teamphone", description="Disaster-response phone network simulator.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    r = sub.add_parser("run", help="run a scenario file (or a bundled scenario by name)")
    r.add_argument("scenario")
    r.add_argument("--seed", type=int)
    r.add_argument("--horizon", type=_duration, help="seconds, or a quantity such as '90 s'")
    r.add_argument("--out-dir", type=Path, default=Path("."))
    r.add_argument("--metrics-only", action="store_true", help="skip the event log")
    r.add_argument("--routing-policy", choices=ROUTING_POLICIES)
    r.add_argument("--emit-coverage-samples", type=int, metavar="N")

    c = sub.add_parser("compare", help="diff two metrics reports")
    c.add_argument("report_a", type=Path)
    c.add_argument("report_b", type=Path)
    c.add_argument("--strict", action="store_true", help="fail when the metric sets differ")

    sub.add_parser("list", help="list bundled scenarios")
    return p


def _run(args) -> int:
    try:
        path = resolve_scenario(args.scenario)
    except FileNotFoundError:
        print(f"teamphone: no such scenario: {args.scenario}", file=sys.stderr)
        return EXIT_USAGE
    try:
        scenario = load_scenario(path)
    except ScenarioFileError as exc:
        print(f"teamphone: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_SCHEMA
    if args.emit_coverage_samples is not None and 0 < args.emit_coverage_samples < 100_000:
        print("teamphone: coverage needs at least 100000 samples", file=sys.stderr)
        return EXIT_USAGE
    try:
        result = run(scenario, args.seed, args.horizon, args.routing_policy, args.emit_coverage_samples)
    except (KernelError, RecursionError) as exc:
        print(f"teamphone: kernel error: {exc}", file=sys.stderr)
        return EXIT_KERNEL
    out = args.out_dir
    out.mkdir(parents=True, exist_ok=True)
    exp = result.scenario.experiment
    (out / exp.metrics_file).write_text(dump_report(result.metrics))
    if not args.metrics_only:
        (out / exp.events_file).write_text(result.log.to_jsonl())
    m = result.metrics
    summary = {"scenario": m["scenario"], "seed": m["seed"], "events": m.get("events")}
    for key in ("messages", "energy", "rescue"):
        if key in m:
            sect = m[key]
            pick = {"messages": ("originated", "delivered", "delivery_ratio"),
                    "energy": ("wakeups", "always_awake_wakeups", "total_mj", "ratio_to_always_awake"),
                    "rescue": ("group_size", "positioned_pct")}[key]
            summary[key] = {k: sect[k] for k in pick}
    print(json.dumps(summary, sort_keys=True))
    return EXIT_OK


def _compare(args) -> int:
    try:
        a, b = load_report(args.report_a), load_report(args.report_b)
    except (OSError, ValueError) as exc:
        print(f"teamphone: cannot read report: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        diff = compare_runs(a, b, strict=args.strict)
    except IncompatibleReports as exc:
        print(f"teamphone: {exc}", file=sys.stderr)
        return EXIT_SCHEMA
    print(json.dumps(diff, indent=2, sort_keys=True, default=str))
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "run":
        return _run(args)
    if args.command == "compare":
        return _compare(args)
    for name, p in bundled_scenarios().items():
        first = p.read_text().splitlines()[0].lstrip("# ")
        print(f"{name:18s} {first}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
