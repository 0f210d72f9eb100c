"""Command line entry point: ``dldc <experiment> ...`` and ``dldc reproduce-all ...``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .experiments import (RUNNERS, ConfigError, default_config, load_config,
                          merge_parameters, parse_assignment, reproduce_all, run)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="dldc", description="Learned discrete-calculus experiments.")
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in RUNNERS:
        p = sub.add_parser(name, help=f"run the {name} experiment")
        p.add_argument("--config", type=Path, help="TOML config (defaults are used when omitted)")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", type=Path, default=None, help=f"output directory (default runs/{name})")
        p.add_argument("--set", dest="assign", action="append", default=[], metavar="KEY=VALUE",
                       help="override one parameter; repeatable")
        p.add_argument("--no-figures", action="store_true", help="skip PNG rendering")
    p = sub.add_parser("reproduce-all", help="run every experiment at its default config")
    p.add_argument("--out", type=Path, default=Path("runs/all"))
    p.add_argument("--repeat", action="store_true",
                   help="run the suite twice and compare CSV bytes (criterion 15)")
    p.add_argument("--no-figures", action="store_true")
    p = sub.add_parser("show-config", help="print the default config of an experiment")
    p.add_argument("experiment", choices=sorted(RUNNERS))
    return ap


def _print_checks(manifest) -> None:
    for c in manifest["checks"]:
        status = "PASS" if c["passed"] else "FAIL"
        print(f"[{status}] criterion {c['criterion']:>2}: {c['claim']} ({c['runtime_s']:.1f} s)")


def _print_table(table) -> None:
    print(f"{'#':>3}  {'status':<8} {'experiment':<14} claim")
    for row in table:
        print(f"{row['criterion']:>3}  {row['status']:<8} {row['experiment']:<14} {row['claim']}")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "show-config":
            from importlib import resources
            print(resources.files("dldc.configs").joinpath(f"{args.experiment}.toml").read_text())
            return 0
        if args.command == "reproduce-all":
            table = reproduce_all(args.out, figures=not args.no_figures, repeat=args.repeat)
            _print_table(table)
            return 0 if all(r["status"] in ("PASS", "not run") for r in table) else 1
        cfg = load_config(args.config, args.command) if args.config else default_config(args.command)
        if args.seed is not None:
            cfg.seed = args.seed
        if args.assign:
            cfg.parameters = merge_parameters(cfg.experiment, cfg.parameters,
                                              dict(parse_assignment(a) for a in args.assign))
        cfg.output_dir = args.out or Path("runs") / cfg.experiment
        manifest = run(cfg, figures=not args.no_figures)
    except ConfigError as exc:
        print(f"dldc: config error: {exc}", file=sys.stderr)
        return 2
    _print_checks(manifest)
    return 0 if manifest["passed"] else 1


if __name__ == "__main__":
    sys.exit(main())
