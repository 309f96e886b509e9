"""Randomized relaxation comparison. Thin wrapper over contactopt.bench with a progress log."""
import argparse
import json
import time

from contactopt import bench


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--samples", type=int, default=20)
    ap.add_argument("--T", type=int, nargs="+", default=[10])
    ap.add_argument("--options", nargs="+", default=["mccormick", "encoded:8"])
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--stage-limit", type=float, default=60.0)
    ap.add_argument("--run-limit", type=float, default=80.0)
    ap.add_argument("--out", default="bench_out")
    args = ap.parse_args()

    spec = bench.BenchSpec(n_samples=args.samples, horizons=tuple(args.T), options=tuple(args.options),
                           seed=args.seed, stage_time_limit=args.stage_limit, run_time_limit=args.run_limit)
    t0 = time.perf_counter()
    rows = []
    for k, (start, goal) in enumerate(bench.sample_poses(spec)):
        for T in spec.horizons:
            for opt in spec.options:
                row = bench._run_one((spec, k, start, goal, opt, T))
                rows.append(row)
                print(f"[{time.perf_counter() - t0:7.1f}s] sample {k:3d} T={T} {opt:>10} "
                      f"{row['status']:<16} a1={row['a1']:.1f}s a3={row['a3']}", flush=True)
    bench.write_outputs(spec, rows, args.out)
    print(json.dumps(bench.summarize(rows), indent=2))


if __name__ == "__main__":
    main()
