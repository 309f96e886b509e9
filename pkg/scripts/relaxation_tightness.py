"""Worst-case gap of each relaxation on one bilinear term, versus the number of regions.

The empirical column grids (x, y) inside each region and takes the widest distance from
x*y to the envelope; the bound column is the handle's closed-form value.
"""
import argparse

import numpy as np

from contactopt.milp import MilpModel
from contactopt.relax import PartitionSpec, bilinear_term, mccormick_handle, piecewise_naive


def worst_gap(C, xb, yb, n=41):
    m = MilpModel()
    x = m.add_var("x", lb=xb[0], ub=xb[1])
    y = m.add_var("y", lb=yb[0], ub=yb[1])
    term = bilinear_term(m, x, y, "w")
    if C == 1:
        h = mccormick_handle(m, term)
    else:
        h = piecewise_naive(m, term, PartitionSpec.uniform(term, C))
    regions = h.spec.region_bounds if h.spec else [(*xb, *yb)]
    worst = 0.0
    for lo, hi, _, _ in regions:
        for xv in np.linspace(lo, hi, n):
            for yv in np.linspace(*yb, n):
                cands = [lo * yv + xv * yb[0] - lo * yb[0], hi * yv + xv * yb[1] - hi * yb[1],
                         lo * yv + xv * yb[1] - lo * yb[1], hi * yv + xv * yb[0] - hi * yb[0]]
                w_lo, w_hi = max(cands[:2]), min(cands[2:])
                worst = max(worst, xv * yv - w_lo, w_hi - xv * yv)
    return worst, h.gap_bound()


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--alpha-max", type=float, default=0.07)
    ap.add_argument("--force-max", type=float, default=5 * 0.1 * 9.81)
    args = ap.parse_args()
    xb, yb = (0.0, args.alpha_max), (0.0, args.force_max)
    print(f"{'C':>3} {'bin naive':>10} {'bin enc':>8} {'worst gap':>12} {'bound':>12}")
    for C in (1, 2, 4, 8, 16):
        bits = 0 if C == 1 else int(np.ceil(np.log2(C)))
        gap, bound = worst_gap(C, xb, yb)
        print(f"{C:>3} {0 if C == 1 else C:>10} {bits:>8} {gap:>12.6f} {bound:>12.6f}")


if __name__ == "__main__":
    main()
