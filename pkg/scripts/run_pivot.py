"""Plan the single-robot pivot for each relaxation option and report stage timings."""
import argparse
import json
import math

import numpy as np

from contactopt import scenarios
from contactopt.pipeline import PipelineConfig, run


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--T", type=int, default=10)
    ap.add_argument("--options", nargs="+", default=["mccormick", "naive:8", "encoded:8"])
    ap.add_argument("--reject-first", action="store_true", help="inject one rejection to exercise the cut loop")
    args = ap.parse_args()

    sc = scenarios.pivot(T=args.T)
    reject = (lambda k, sched: k == 0) if args.reject_first else None
    for opt in args.options:
        res = run(sc, PipelineConfig(relaxation=opt), reject=reject)
        line = {"option": opt, "status": res.status, **{k: round(v, 4) for k, v in res.metrics.items()}}
        if res.trajectory is not None:
            err = np.abs(res.trajectory.poses[-1] - sc.q_goal.to_array()).max()
            line["goal_err"] = float(err)
            line["theta_deg"] = math.degrees(res.trajectory.poses[-1, 2])
            line["worst_residual"] = max(res.trajectory.residuals.values())
        print(json.dumps(line))
        for st in res.stages:
            print("   ", st["stage"], st["status"], f"{st['elapsed']:.2f}s")


if __name__ == "__main__":
    main()
