"""Command-line entry point: ``gentlegrad run | cost-table | report``.

Exit codes: 0 success, 2 invalid input or configuration, 3 resource cap exceeded.
"""
from __future__ import annotations

import argparse
import sys

from .bench import (
    ConfigError,
    ExperimentConfig,
    InsufficientDataError,
    cost_table_csv,
    emit_scaling_report,
    read_rows,
    report_csv,
    run_experiment,
)
from .ledger import ResourceCapError

EXIT_OK, EXIT_INVALID, EXIT_CAP = 0, 2, 3


def _size_list(text: str) -> list:
    try:
        sizes = [int(tok) for tok in text.split(",") if tok.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"not a comma-separated integer list: {text!r}") from exc
    if not sizes or any(s < 1 for s in sizes):
        raise argparse.ArgumentTypeError("sizes must be positive integers")
    return sizes


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gentlegrad", description="Gradient-estimation benchmarks.")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run an experiment config and append rows to a CSV")
    run.add_argument("--config", required=True, help="experiment JSON file")
    run.add_argument("--out", required=True, help="results CSV (appended)")

    cost = sub.add_parser("cost-table", help="wall-time model for parameter shift vs backpropagation")
    cost.add_argument("--tq-ms", type=float, required=True, help="time per circuit execution in ms")
    cost.add_argument("--m", type=_size_list, required=True, help="comma-separated parameter counts")
    cost.add_argument("--polylog", type=int, default=2, help="exponent of log M in the backprop cost")

    rep = sub.add_parser("report", help="fit scaling exponents from a results CSV")
    rep.add_argument("--in", dest="inp", required=True, help="results CSV")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_INVALID
    try:
        if args.command == "run":
            cfg = ExperimentConfig.load(args.config)
            rows = run_experiment(cfg, out=args.out)
            print(f"wrote {len(rows)} rows to {args.out}")
        elif args.command == "cost-table":
            if args.tq_ms <= 0:
                raise ConfigError("--tq-ms must be positive")
            sys.stdout.write(cost_table_csv(args.tq_ms / 1000.0, args.m, args.polylog))
        else:
            try:
                rows = read_rows(args.inp)
            except OSError as exc:
                raise ConfigError(f"cannot read {args.inp}: {exc}") from exc
            sys.stdout.write(report_csv(emit_scaling_report(rows)))
    except ResourceCapError as exc:
        print(f"resource cap exceeded: {exc}", file=sys.stderr)
        if exc.ledger is not None:
            print(f"partial ledger: {exc.ledger.snapshot()}", file=sys.stderr)
        return EXIT_CAP
    except (ConfigError, InsufficientDataError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
