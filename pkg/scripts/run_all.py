"""Run every shipped config and print a one-line summary per experiment.

    python scripts/run_all.py [--out DIR] [--only KIND ...]
"""
import argparse
import sys
import time
from pathlib import Path

from dasep.config import KINDS, load_config
from dasep.experiments import ExperimentError, run_experiment

ROOT = Path(__file__).resolve().parent.parent


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="out", help="parent directory for per-experiment outputs")
    ap.add_argument("--only", nargs="*", choices=KINDS, help="subset of experiments to run")
    ap.add_argument("--threads", type=int, default=None)
    args = ap.parse_args(argv)
    failed = 0
    for kind in args.only or KINDS:
        cfg = load_config(ROOT / "configs" / f"{kind}.yaml")
        t0 = time.time()
        try:
            m = run_experiment(cfg, Path(args.out) / kind, threads=args.threads)
        except ExperimentError as exc:
            print(f"{kind:18s} ERROR {exc}")
            failed += 1
            continue
        checks = m.metrics.get("checks", {})
        bad = [k for k, ok in checks.items() if not ok]
        status = "PASS" if m.passed else "FAIL " + ",".join(bad)
        print(f"{kind:18s} {status}  ({time.time() - t0:.0f} s)")
        failed += not m.passed
    return 1 if failed else 0


if __name__ == "__main__":
    sys.exit(main())
