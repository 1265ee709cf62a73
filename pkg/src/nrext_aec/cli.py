"""Command line: ``run <config>``, ``verify`` and ``figures <results.csv>``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .experiment import FIGURES, OUTPUT_DIR_ENV, emit_figure_data, load_config, run_experiment
from .verification import run_all


def _cmd_run(args) -> int:
    cfg = load_config(args.config, args.set)
    table = run_experiment(cfg, args.output_dir)
    print(f"{len(table.rows)} result rows, {len(table.errors)} failed grid points -> {table.path}")
    return 1 if table.errors else 0


def _cmd_verify(args) -> int:
    failed = 0
    for res in run_all():
        print(res)
        failed += not res.passed
    return 1 if failed else 0


def _cmd_figures(args) -> int:
    out_dir = Path(args.output_dir or Path(args.results).parent)
    for fig in args.figure or FIGURES:
        path = emit_figure_data(args.results, fig, out_dir / f"{fig}.csv")
        print(path)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="nrext-aec",
                                description="Noise reduction and echo cancellation cascades.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run the experiment grid of a YAML config")
    r.add_argument("config", nargs="?", help="YAML config; defaults apply when omitted")
    r.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                   help="override a config key (YAML value syntax), repeatable")
    r.add_argument("--output-dir", help=f"output directory (also ${OUTPUT_DIR_ENV})")
    r.set_defaults(func=_cmd_run)

    v = sub.add_parser("verify", help="run the analytic verification checks")
    v.set_defaults(func=_cmd_verify)

    f = sub.add_parser("figures", help="write mean/std tables per figure from a results CSV")
    f.add_argument("results")
    f.add_argument("--figure", action="append", choices=FIGURES)
    f.add_argument("--output-dir", help="defaults to the directory of the results CSV")
    f.set_defaults(func=_cmd_figures)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
