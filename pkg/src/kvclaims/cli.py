"""Command-line entry point: ``kvclaims <subcommand> ...``.

Exit status is 0 on success, 1 when a check fails, 2 on usage or
configuration errors.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import Sequence

from .arbiter import ConflictAction
from .conformance import reconstruct, run_suite
from .errors import ConfigInvalid, KVClaimError, UnknownPolicy
from .fixtures import generate_canonical_fixtures
from .report import render_report
from .runtime import load_config, run_scenario, write_outcome
from .sweep import SweepMatrix, capacity_sweep
from .telemetry import read_trace

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_USAGE = 2


class UsageError(Exception):
    pass


def _policies(text: str | None) -> list[ConflictAction]:
    if not text:
        return list(ConflictAction)
    out = []
    for name in text.split(","):
        try:
            out.append(ConflictAction.parse(name.strip()))
        except UnknownPolicy:
            raise UsageError(f"--policies: unknown policy {name.strip()!r}") from None
    return out


def cmd_run(args: argparse.Namespace) -> int:
    try:
        config = load_config(args.config)
    except FileNotFoundError:
        raise UsageError(f"--config: no such file {args.config}") from None
    out = Path(args.out)
    outcome = run_scenario(config, trace_path=out / "trace.jsonl")
    write_outcome(outcome, out / "outcome.json")
    print(
        f"{config.name}: served={outcome.served_requests} refused={outcome.refused_requests} "
        f"claims={outcome.final_claim_states} -> {out}"
    )
    return EXIT_OK


def cmd_sweep(args: argparse.Namespace) -> int:
    if args.usable_min > args.usable_max:
        raise UsageError("--usable-min: must not exceed --usable-max")
    if min(args.resident, args.active, args.usable_min) < 1:
        raise UsageError("--resident/--active/--usable-min: must be positive")
    matrix = capacity_sweep(
        args.resident, args.active, range(args.usable_min, args.usable_max + 1), _policies(args.policies)
    )
    path = matrix.write(Path(args.out) / "capacity_sweep_results.json")
    for policy in matrix.policies:
        print(f"{policy}: coexists from {matrix.coexistence_point(policy)}")
    print(f"wrote {path}")
    return EXIT_OK


def cmd_conformance(args: argparse.Namespace) -> int:
    if args.regenerate:
        report = run_suite(regenerate_into=args.fixtures)
    else:
        report = run_suite(args.fixtures)
    results, summary = report.write(args.out)
    for v in report.verdicts:
        print(f"{v.check_id}: {'pass' if v.passed else 'FAIL'}  {v.message}")
    print(f"{report.pass_count}/{len(report.verdicts)} passed; wrote {results} and {summary}")
    return EXIT_OK if report.passed else EXIT_CHECK_FAILED


def cmd_reconstruct(args: argparse.Namespace) -> int:
    try:
        trace = read_trace(args.trace)
    except FileNotFoundError:
        raise UsageError(f"--trace: no such file {args.trace}") from None
    rec = reconstruct(trace)
    print(json.dumps(rec.to_dict(), indent=2, sort_keys=True))
    return EXIT_OK if rec.ok else EXIT_CHECK_FAILED


def cmd_report(args: argparse.Namespace) -> int:
    sweep = conformance = None
    try:
        if args.sweep:
            sweep = SweepMatrix.from_dict(json.loads(Path(args.sweep).read_text(encoding="utf-8")))
        if args.conformance:
            conformance = json.loads(Path(args.conformance).read_text(encoding="utf-8"))
    except FileNotFoundError as exc:
        raise UsageError(f"no such file {exc.filename}") from None
    text = render_report(sweep, conformance)
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_fixtures(args: argparse.Namespace) -> int:
    for path in generate_canonical_fixtures(args.out):
        print(path)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="kvclaims", description="Resident KV claim runtime and conformance suite.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run one scenario and write trace.jsonl and outcome.json")
    p.add_argument("--config", required=True, help="scenario YAML or JSON file")
    p.add_argument("--out", default="out", help="output directory")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="sweep usable capacity for a resident/active pair")
    p.add_argument("--resident", type=int, default=60)
    p.add_argument("--active", type=int, default=70)
    p.add_argument("--usable-min", type=int, default=75)
    p.add_argument("--usable-max", type=int, default=135)
    p.add_argument("--policies", help="comma-separated policies (default: all)")
    p.add_argument("--out", default="out")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("conformance", help="run checks L1-L7 and C1 over a fixture directory")
    p.add_argument("--fixtures", required=True)
    p.add_argument("--regenerate", action="store_true", help="regenerate fixtures from the simulator first")
    p.add_argument("--out", default="out")
    p.set_defaults(func=cmd_conformance)

    p = sub.add_parser("reconstruct", help="replay a trace into final claim and request states")
    p.add_argument("--trace", required=True)
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("report", help="render sweep and conformance results as markdown")
    p.add_argument("--sweep", help="capacity_sweep_results.json")
    p.add_argument("--conformance", help="conformance results.json")
    p.add_argument("--out", help="output file (default: stdout)")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("fixtures", help="write the canonical fixture set")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fixtures)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    try:
        return args.func(args)
    except (UsageError, ConfigInvalid) as exc:
        print(f"kvclaims {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except KVClaimError as exc:
        print(f"kvclaims {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
