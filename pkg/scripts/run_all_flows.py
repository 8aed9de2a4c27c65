#!/usr/bin/env python3
"""Run all five experiment flows into one directory tree.

Usage:
    python3 scripts/run_all_flows.py --out runs/all [--set key=value ...]

Each flow writes <out>/<flow>/{config.resolved,metrics.tsv,log.tsv} plus its
checkpoints; overrides given here apply to every flow. At the default sizes
the whole sweep takes a few minutes.
"""
import argparse
import sys
import time
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from awelab.flows import FLOW_NAMES, run_thesis_flow


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--out", required=True, help="root output directory")
    parser.add_argument("--set", dest="overrides", action="append", default=[],
                        metavar="KEY=VALUE", help="config override, repeatable")
    args = parser.parse_args()

    overrides = {}
    for item in args.overrides:
        if "=" not in item:
            parser.error(f"--set expects key=value, got {item!r}")
        key, _, value = item.partition("=")
        overrides[key.strip()] = value.strip()

    root = Path(args.out)
    for name in FLOW_NAMES:
        t0 = time.time()
        metrics = run_thesis_flow(name, root / name, dict(overrides))
        print(f"== {name} ({time.time() - t0:.0f}s)")
        for key in sorted(metrics):
            print(f"   {key}\t{metrics[key]}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
