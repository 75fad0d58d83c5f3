"""Command-line entry point: convergence, iterations, sweep."""

from __future__ import annotations

import argparse
import sys

from .figures import X_COLUMNS, Y_CHOICES, plot_convergence, plot_iterations, render_sweep_table
from .io import SchemaError


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="plots",
        description="Render figures from adaptive solver trace CSVs",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    conv = sub.add_parser("convergence", help="log-log convergence curves")
    conv.add_argument("csv", nargs="+", help="trace CSV files")
    conv.add_argument("--x", choices=sorted(X_COLUMNS), default="cum_dofs")
    conv.add_argument("--y", choices=sorted(Y_CHOICES), default="eta")
    conv.add_argument("--out", required=True,
                      help="output path; .png and .svg are both written")

    it = sub.add_parser("iterations", help="per-level solver step counts")
    it.add_argument("csv", nargs="+", help="trace CSV files")
    it.add_argument("--out", required=True)

    sw = sub.add_parser("sweep", help="highlighted parameter sweep table")
    sw.add_argument("csv", help="sweep table CSV")
    sw.add_argument("--out", required=True)

    return parser


def run_cli(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        if args.command == "convergence":
            written = plot_convergence(args.csv, args.x, args.y, args.out)
        elif args.command == "iterations":
            written = plot_iterations(args.csv, args.out)
        else:
            written = render_sweep_table(args.csv, args.out)
    except (SchemaError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    for path in written:
        print(path)
    return 0


def main() -> None:
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
