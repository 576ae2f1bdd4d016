"""Command line entry point: ``lamina <subcommand> --config FILE [--seed N] [--out DIR]``."""
from __future__ import annotations

import argparse
import sys
from dataclasses import replace

from .config import ConfigError, load_config
from .pipeline import TARGETS, PipelineError, run_pipeline
from .report import ReportError, report

EXIT_OK, EXIT_VALIDATION, EXIT_STAGE = 0, 2, 3

HELP = {
    "design": "loft, slice and lay out elements",
    "nails": "design plus overlaps and nail placements",
    "modularize": "design plus subassembly partition",
    "allocate": "design plus inventory allocation",
    "simulate": "every stage through the fabrication simulation",
    "report": "build the report bundle from an existing run directory",
    "all": "every stage followed by the report",
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lamina", description="Layered timber design-to-fabrication pipeline.")
    sub = p.add_subparsers(dest="command", required=True)
    for name in ("design", "modularize", "nails", "allocate", "simulate", "report", "all"):
        sp = sub.add_parser(name, help=HELP[name])
        sp.add_argument("--config", required=True, help="YAML or JSON pipeline config")
        sp.add_argument("--seed", type=int, help="override the config seed")
        sp.add_argument("--out", help="override the config output directory")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            if args.seed < 0:
                raise ConfigError("seed", "must be >= 0")
            cfg = replace(cfg, seed=args.seed)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    out = args.out or cfg.output_dir
    try:
        if args.command != "report":
            art = run_pipeline(cfg, args.command if args.command in TARGETS else "all", out)
            for w in art.warnings:
                print(f"warning: {w}", file=sys.stderr)
        if args.command in ("report", "all"):
            data = report(out)
            for k, v in data.summary().items():
                print(f"{k}: {v}")
    except PipelineError as exc:
        print(f"stage failure: {exc}", file=sys.stderr)
        return EXIT_STAGE
    except (ReportError, OSError) as exc:
        print(f"stage failure: [report] {exc}", file=sys.stderr)
        return EXIT_STAGE
    print(f"outputs in {out}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
