"""Command-line experiment runner.

ebst run --config cfg [--mode M] [--alpha A] [--rounds R] [--seed S[,S...]]
         [--out DIR] [--sweep-alphas A1,A2,...]
ebst plot-data REPORT.json [...] --out plot.csv
"""

from __future__ import annotations

import argparse
import sys

from .config import load_config
from .errors import ConfigError, ParseError
from .runner import alpha_sweep, emit_plot_data, run_experiment


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ebst",
                                     description="energy-constrained self-training runner")
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="run the configured experiment (or an alpha sweep)")
    run_p.add_argument("--config", metavar="PATH", help="key = value config file")
    run_p.add_argument("--mode", help="cbst | crst-ls | rebm | lebm | anneal")
    run_p.add_argument("--alpha", type=float, help="energy regularization weight")
    run_p.add_argument("--rounds", type=int, help="self-training rounds")
    run_p.add_argument("--seed", help="seed or comma-separated seed list")
    run_p.add_argument("--out", help="output directory")
    run_p.add_argument("--sweep-alphas", metavar="LIST",
                       help="comma-separated alphas; runs an alpha sweep instead")

    plot_p = sub.add_parser("plot-data", help="flatten reports into a tidy metrics CSV")
    plot_p.add_argument("reports", nargs="+", help="report JSON files")
    plot_p.add_argument("--out", required=True, help="output CSV path")
    return parser


def _run(args) -> int:
    overrides = {}
    if args.mode is not None:
        overrides["train.mode"] = args.mode
    if args.alpha is not None:
        overrides["train.alpha"] = args.alpha
    if args.rounds is not None:
        overrides["train.rounds"] = args.rounds
    if args.seed is not None:
        overrides["train.seeds"] = args.seed
    if args.out is not None:
        overrides["out.dir"] = args.out
    try:
        config = load_config(args.config, overrides)
    except (ConfigError, ParseError, OSError) as exc:
        print(f"ebst: invalid config: {exc}", file=sys.stderr)
        return 2
    if args.sweep_alphas:
        try:
            alphas = [float(v) for v in args.sweep_alphas.split(",") if v.strip()]
            path = alpha_sweep(config, alphas)
        except (ConfigError, ValueError) as exc:
            print(f"ebst: {exc}", file=sys.stderr)
            return 2
        print(path)
        return 0
    for path in run_experiment(config):
        print(path)
    return 0


def _plot_data(args) -> int:
    try:
        rows = emit_plot_data(args.reports, args.out)
    except ConfigError as exc:
        print(f"ebst: {exc}", file=sys.stderr)
        return 1
    print(f"{args.out}: {rows} rows")
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "run":
        return _run(args)
    return _plot_data(args)


if __name__ == "__main__":
    sys.exit(main())
