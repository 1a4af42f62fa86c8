"""Command-line interface.

Subcommands: ``parse``/``lint`` for policy files, ``negotiate`` /
``simulate`` / ``dp-sweep`` / ``bench`` for consortium configs.

Exit codes: 0 on success, 1 when diagnostics contain errors (or
parsing fails), 2 on runtime failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from curie import cpl, harness
from curie.errors import CurieError


def _read_policy(path: str) -> str:
    return Path(path).read_text(encoding="utf-8")


def cmd_parse(args) -> int:
    try:
        text = _read_policy(args.file)
        policy = cpl.parse_policy(text)
    except (cpl.ParseError, cpl.LexError) as exc:
        print(f"{args.file}:{exc}", file=sys.stderr)
        return 1
    if args.json:
        stmts = [{"kind": type(s).__name__} for s in policy.statements]
        print(json.dumps({"statements": stmts,
                          "canonical": cpl.serialize(policy)}, indent=2))
    else:
        sys.stdout.write(cpl.serialize(policy))
    return 0


def cmd_lint(args) -> int:
    try:
        text = _read_policy(args.file)
        policy = cpl.parse_policy(text)
    except (cpl.ParseError, cpl.LexError) as exc:
        print(f"{args.file}:{exc}", file=sys.stderr)
        return 1
    diags = cpl.validate(policy)
    for d in diags:
        print(d.format(args.file))
    return 1 if cpl.has_errors(diags) else 0


def _emit_report(report: harness.ScenarioReport, out: str | None,
                 include_timings: bool) -> None:
    payload = json.dumps(report.to_json(include_timings), indent=2, sort_keys=True)
    if out:
        Path(out).write_text(payload + "\n")
    else:
        print(payload)


def cmd_negotiate(args) -> int:
    cfg = harness.load_config(args.config)
    report = harness.run_scenario(cfg, harness.MODE_NEGOTIATE)
    _emit_report(report, args.out, include_timings=False)
    return 0


def cmd_simulate(args) -> int:
    cfg = harness.load_config(args.config)
    mode = harness.MODE_FULL_DP if args.dp else harness.MODE_FULL
    report = harness.run_scenario(cfg, mode)
    _emit_report(report, args.out, include_timings=True)
    return 0


def cmd_dp_sweep(args) -> int:
    cfg = harness.load_config(args.config)
    epsilons = ([float(e) for e in args.eps.split(",")] if args.eps else None)
    table = harness.dp_sweep(cfg, epsilons, args.reps)
    payload = json.dumps(table, indent=2, sort_keys=True)
    if args.out:
        Path(args.out).write_text(payload + "\n")
    else:
        print(payload)
    return 0


def cmd_bench(args) -> int:
    values = [int(v) for v in args.values.split(",")]
    seed, key_bits = 0, args.key_bits
    if args.config:
        cfg = harness.load_config(args.config)
        seed = cfg.seed
        if args.key_bits is None:
            key_bits = cfg.he.key_bits
    table = harness.bench(args.axis, values, runs=args.runs, seed=seed,
                          key_bits=key_bits or 192)
    if args.csv:
        keys = list(table[0].keys())
        print(",".join(keys))
        for row in table:
            print(",".join(str(row[k]) for k in keys))
    else:
        print(json.dumps(table, indent=2))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="curie",
        description="policy-governed data exchange: parse policies, "
                    "negotiate agreements, simulate pooled dose models")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("parse", help="parse a .cpl policy file")
    p.add_argument("file")
    p.add_argument("--json", action="store_true", help="emit a JSON summary")
    p.set_defaults(func=cmd_parse)

    p = sub.add_parser("lint", help="validate a .cpl policy file")
    p.add_argument("file")
    p.set_defaults(func=cmd_lint)

    p = sub.add_parser("negotiate", help="run pairwise negotiations only")
    p.add_argument("config")
    p.add_argument("--out", help="write the JSON report here")
    p.set_defaults(func=cmd_negotiate)

    p = sub.add_parser("simulate", help="negotiate, aggregate, and model")
    p.add_argument("config")
    p.add_argument("--dp", action="store_true",
                   help="additionally sweep the configured privacy budgets")
    p.add_argument("--out", help="write the JSON report here")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("dp-sweep", help="privacy-budget accuracy table")
    p.add_argument("config")
    p.add_argument("--eps", help="comma-separated budgets (default: config)")
    p.add_argument("--reps", type=int, default=None,
                   help="repetitions per budget (default: config)")
    p.add_argument("--out", help="write the JSON table here")
    p.set_defaults(func=cmd_dp_sweep)

    p = sub.add_parser("bench", help="phase timing table along one axis")
    p.add_argument("config", nargs="?",
                   help="optional consortium config supplying seed and key size")
    p.add_argument("--axis", required=True, choices=["members", "rows", "features"])
    p.add_argument("--values", required=True, help="comma-separated axis values")
    p.add_argument("--runs", type=int, default=3)
    p.add_argument("--key-bits", type=int, default=None)
    p.add_argument("--csv", action="store_true")
    p.set_defaults(func=cmd_bench)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CurieError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
