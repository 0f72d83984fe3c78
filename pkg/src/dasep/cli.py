"""Command line entry point: one subcommand per experiment kind."""
from __future__ import annotations

import argparse
import sys

from .config import KINDS, ConfigErrors, load_config
from .experiments import ExperimentError, run_experiment


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="dasep", description="Dynamic ASEP simulation and verification experiments.")
    sub = ap.add_subparsers(dest="command", required=True)
    for kind in KINDS:
        p = sub.add_parser(kind, help=f"run a {kind} experiment")
        p.add_argument("--config", required=True, help="YAML config file")
        p.add_argument("--seed", type=int, default=None, help="override the master seed")
        p.add_argument("--out", default=None, help="override the output directory")
        p.add_argument("--threads", type=int, default=None, help="worker threads (default: all cores)")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
    except ConfigErrors as exc:
        for e in exc.errors:
            print(f"config error: {e}", file=sys.stderr)
        return 2
    if cfg.kind != args.command:
        print(f"config error: kind: config is for {cfg.kind!r}, not {args.command!r}", file=sys.stderr)
        return 2
    try:
        manifest = run_experiment(cfg, args.out, args.seed, args.threads)
    except ExperimentError as exc:
        print(f"experiment failed in {exc}", file=sys.stderr)
        return 3
    for name, ok in sorted(manifest.metrics.get("checks", {}).items()):
        print(f"{'PASS' if ok else 'FAIL'} {name}")
    return 0 if manifest.passed else 1


if __name__ == "__main__":
    sys.exit(main())
