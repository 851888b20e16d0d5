#!/usr/bin/env python3
"""Sweep the pinned first interior exponent toward 1 and report the trend.

The complete stationary frame takes the first interior exponent to 1; the
solver approaches the limit at 1 - eps.  This script solves the symmetric
instance at several eps values and prints the stationary augmented-functional
values so the trend toward the limit is visible.

Usage:
    python scripts/exponent_limit_sweep.py [--t 0.5] [--seed 42]
"""

import argparse

from bilift.battery import symmetric_instance
from bilift.nested import SamplePlan
from bilift.stationary import SolverOptions, solve_stationary


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--t", type=float, default=0.5)
    ap.add_argument("--seed", type=int, default=42)
    ap.add_argument("--plan", default="800,300")
    args = ap.parse_args()
    cfg = symmetric_instance()
    plan = SamplePlan.parse(args.plan)
    print(f"{'eps':>8} {'m1':>8} {'psi1':>14} {'se':>10} {'residual':>10}")
    for eps in (1e-1, 1e-2, 1e-3):
        opts = SolverOptions(damping=1.0, m1_eps=eps, raise_on_failure=False)
        pt = solve_stationary(cfg, args.t, plan, seed=args.seed, options=opts)
        print(
            f"{eps:8.0e} {pt.mbar[1]:8.4f} {pt.psi1_value.value:14.8f} "
            f"{pt.psi1_value.std_error:10.2e} {pt.residual_norm:10.2e}"
        )


if __name__ == "__main__":
    main()
