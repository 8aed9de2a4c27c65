#!/usr/bin/env python3
"""Run one experiment flow and print its metrics.

Usage:
    python3 scripts/run_flow.py contrastive-chapter --out runs/contrastive \
        --set data.tokens_per_type=12 --set train.epochs=4

Any config key can be overridden with repeated --set key=value flags; the
resolved configuration lands in <out>/config.resolved so the run can be
reproduced exactly with `awelab flow --config <out>/config.resolved`.
"""
import argparse
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from awelab.flows import FLOW_NAMES, run_thesis_flow
from awelab.runconfig import ConfigError


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("flow", choices=sorted(FLOW_NAMES))
    parser.add_argument("--out", required=True, help="output directory")
    parser.add_argument("--set", dest="overrides", action="append", default=[],
                        metavar="KEY=VALUE", help="config override, repeatable")
    args = parser.parse_args()

    overrides = {}
    for item in args.overrides:
        if "=" not in item:
            parser.error(f"--set expects key=value, got {item!r}")
        key, _, value = item.partition("=")
        overrides[key.strip()] = value.strip()

    try:
        metrics = run_thesis_flow(args.flow, Path(args.out), overrides)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    for key in sorted(metrics):
        print(f"{key}\t{metrics[key]}")
    print(f"\nwrote {args.out}/metrics.tsv (config: {args.out}/config.resolved)")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
