#!/usr/bin/env python3
"""Standalone battery runner: estimator-vs-oracle and identity checks with a
JSON report, outside pytest.  Useful for timing studies and for regenerating
the numbers quoted in the README.

Usage:
    python scripts/run_battery.py [--seed 42] [--suite all] [--out report.json]
"""

import argparse
import json
import sys

from bilift.cli import run_suite


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seed", type=int, default=42)
    ap.add_argument(
        "--suite",
        default="all",
        choices=("identities", "invariance", "corollaries", "oracles", "all"),
    )
    ap.add_argument("--out", default=None)
    args = ap.parse_args()
    report, code = run_suite(args.suite, seed=args.seed, quiet=False, out=args.out)
    summary = {k: v for k, v in report.items() if k != "checks"}
    print(json.dumps(summary, indent=2, sort_keys=True))
    return code


if __name__ == "__main__":
    sys.exit(main())
