"""Binary and row counts of the schedule MILP as the horizon grows."""
import argparse

from contactopt import scenarios
from contactopt.copt import build_copt
from contactopt.kopt import solve_kopt


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--horizons", type=int, nargs="+", default=[5, 10, 20, 40])
    ap.add_argument("--options", nargs="+", default=["mccormick", "naive:8", "encoded:8"])
    args = ap.parse_args()
    print(f"{'T':>4} {'option':>10} {'vars':>7} {'binaries':>9} {'rows':>7}")
    for T in args.horizons:
        sc = scenarios.pivot(T=T)
        kin = solve_kopt(sc)
        for opt in args.options:
            m = build_copt(sc, kin, opt).milp
            print(f"{T:>4} {opt:>10} {m.n_vars:>7} {m.binaries.size:>9} {m.n_constraints:>7}")


if __name__ == "__main__":
    main()
