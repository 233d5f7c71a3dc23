#!/usr/bin/env python3
"""
RMTLAB - Command line
=====================

Usage:
    rmtlab run <config-file> [--trials N] [--seed S] [--parallel P]
                             [--backend reference|accelerated] [--out DIR] [--verbose]
    rmtlab plot <records> --kind local-law|scaling|universality [--out FILE]
    rmtlab oracle [identities|cubic|eigensolvers|girko ...] [--json] [--verbose]

Exit codes:
    0  every acceptance row passes
    2  an acceptance row fails
    3  invalid experiment config or out-of-domain input
    4  numerical backend error
"""

import argparse
import json
import sys

from tabulate import tabulate

from core.errors import NUMERICAL_ERRORS, ConfigError, DomainError
from core.validation import BACKENDS
from experiment_engine import PLOT_KINDS, ExperimentConfig, ExperimentEngine, emit_plot_data

EXIT_PASS = 0
EXIT_FAIL = 2
EXIT_CONFIG = 3
EXIT_NUMERICAL = 4


def format_summary(rows) -> str:
    """Summary rows as a console table"""
    if not rows:
        return "(no acceptance rows)"
    table = [
        [
            row["criterion"], row["scope"], row["n"],
            f"{row['q50']:.4g}", f"{row['value']:.4g}", f"{row['bound']:.4g}",
            "✓" if row["pass"] else "✗",
        ]
        for row in rows
    ]
    return tabulate(table, headers=["criterion", "scope", "n", "median", "value", "bound", "pass"])


def cmd_run(args) -> int:
    config = ExperimentConfig.from_file(
        args.config, trials=args.trials, seed=args.seed, parallel=args.parallel,
        backend=args.backend, out=args.out,
    )
    result = ExperimentEngine(config, verbose=args.verbose).run()
    print(f"\n=== {config.experiment.value.upper()} ({config.name}) ===\n")
    print(format_summary(result.rows))
    print(f"\nRecords: {result.records_path}")
    print(f"Summary: {result.summary_path}")
    return EXIT_PASS if result.passed else EXIT_FAIL


def cmd_plot(args) -> int:
    path, extra = emit_plot_data(args.records, args.kind, args.out)
    print(f"✓ {args.kind} table written to {path}")
    if "slope" in extra:
        print(f"  least-squares slope of log median error vs log N: {extra['slope']:.4f}")
    return EXIT_PASS


def cmd_oracle(args) -> int:
    # oracle pulls in every solver, import it only when asked for
    import oracle

    try:
        results = oracle.run_oracle(args.subchecks)
    except KeyError as e:
        raise ConfigError([e.args[0]]) from e
    if args.json:
        print(json.dumps(results, indent=2))
    else:
        print(oracle.format_oracle_report(results, args.verbose))
    return oracle.exit_code(results)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rmtlab",
        description="Sparse non-Hermitian random matrix laboratory",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  # Run the local-law suite with four workers
  rmtlab run configs/local_law_p05.json --parallel 4

  # Quick smoke run with fewer trials into a scratch directory
  rmtlab run configs/edge_rigidity.json --trials 5 --out /tmp/rmtlab

  # Long-format table for the scaling plot
  rmtlab plot runs/edge-rigidity.records.jsonl --kind scaling

  # Brute-force oracles
  rmtlab oracle identities cubic
        """,
    )
    subparsers = parser.add_subparsers(dest="command", required=True)

    run = subparsers.add_parser("run", help="Run an experiment config")
    run.add_argument("config", help="Path to a JSON experiment config")
    run.add_argument("--trials", type=int, help="Override the trial count")
    run.add_argument("--seed", type=int, help="Override the ensemble seed")
    run.add_argument("--parallel", type=int, help="Worker processes")
    run.add_argument("--backend", choices=BACKENDS, help="Numerical backend")
    run.add_argument("--out", help="Output directory")
    run.add_argument("--verbose", action="store_true", help="Enable verbose logging")
    run.set_defaults(handler=cmd_run)

    plot = subparsers.add_parser("plot", help="Emit plot tables from a records file")
    plot.add_argument("records", help="Path to a .records.jsonl file")
    plot.add_argument("--kind", required=True, help=f"One of: {', '.join(PLOT_KINDS)}")
    plot.add_argument("--out", help="Output CSV path")
    plot.set_defaults(handler=cmd_plot)

    check = subparsers.add_parser("oracle", help="Run the small-N brute-force oracles")
    check.add_argument("subchecks", nargs="*", help="identities, cubic, eigensolvers, girko")
    check.add_argument("--json", action="store_true", help="Output as JSON")
    check.add_argument("--verbose", action="store_true", help="Show every metric")
    check.set_defaults(handler=cmd_oracle)

    return parser


def main(argv=None) -> int:
    """Main entry point"""
    args = build_parser().parse_args(argv)
    try:
        return args.handler(args)
    except ConfigError as e:
        print(f"ERROR: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except DomainError as e:
        # parameters the schema accepts but the numerics cannot use
        print(f"ERROR: out-of-domain input: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except NUMERICAL_ERRORS as e:
        print(f"ERROR: numerical backend failure: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
