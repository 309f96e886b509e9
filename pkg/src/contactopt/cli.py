"""Command-line front end.

    contactopt run SCENARIO.json [--config CFG.json] --out DIR
    contactopt bench SPEC.json --out DIR
    contactopt render SCENARIO.json TRAJECTORY.json --out FILE.svg
    contactopt export-lp SCENARIO.json --out FILE.lp

Exit codes: 0 success, 1 input/output error, 2 planner failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

from . import bench, copt, kopt, pipeline, render
from .milp import write_lp
from .qopt import Trajectory
from .relax import Relaxation
from .scene import ScenarioError, load_scenario

EXIT_OK, EXIT_IO, EXIT_PLANNER = 0, 1, 2

log = logging.getLogger("contactopt")


def _relaxation(args) -> Optional[str]:
    if args.relaxation is None and args.C is None and args.K is None:
        return None
    kind = args.relaxation or "encoded"
    if kind == "mccormick":
        return "mccormick"
    C = args.C if args.C is not None else (2 ** args.K if args.K is not None else 8)
    return str(Relaxation(kind, C))


def _add_option_flags(p):
    p.add_argument("--relaxation", choices=("mccormick", "naive", "encoded"))
    p.add_argument("--C", type=int, help="number of partition regions")
    p.add_argument("--K", type=int, help="bits per term for the encoded option (C = 2**K)")


def _load(path):
    try:
        return load_scenario(path)
    except OSError as exc:
        print(f"error: cannot read {path}: {exc.strerror}", file=sys.stderr)
    except ScenarioError as exc:
        print(f"error: invalid scenario {path}: {exc}", file=sys.stderr)
    return None


def cmd_run(scenario_path, config_path, out_dir, overrides=None, n_snapshots=10) -> int:
    sc = _load(scenario_path)
    if sc is None:
        return EXIT_IO
    try:
        cfg_dict = json.loads(Path(config_path).read_text()) if config_path else {}
        cfg_dict.update({k: v for k, v in (overrides or {}).items() if v is not None})
        cfg = pipeline.PipelineConfig.from_dict(cfg_dict)
    except OSError as exc:
        print(f"error: cannot read {config_path}: {exc.strerror}", file=sys.stderr)
        return EXIT_IO
    except (ValueError, TypeError) as exc:
        print(f"error: invalid config: {exc}", file=sys.stderr)
        return EXIT_IO
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        print(f"error: cannot create {out}: {exc.strerror}", file=sys.stderr)
        return EXIT_IO
    res = pipeline.run(sc, cfg)
    payload = {"scenario": sc.name, "config": cfg.to_dict(), **res.to_dict()}
    (out / "metrics.json").write_text(json.dumps(pipeline.jsonable(payload), indent=2))
    if not res.success:
        print(f"planner failed: {res.status} ({res.message})", file=sys.stderr)
        return EXIT_PLANNER
    (out / "trajectory.json").write_text(json.dumps(pipeline.jsonable(res.trajectory.to_dict())))
    (out / "snapshots.svg").write_text(render.render_svg(sc, res.trajectory, n_snapshots, title=sc.name))
    print(f"ok: {sc.name} a1={res.metrics['a1']:.2f}s a3={res.metrics['a3']}")
    return EXIT_OK


def cmd_bench(spec_path, out_dir, overrides=None) -> int:
    try:
        d = json.loads(Path(spec_path).read_text()) if spec_path else {}
        d.update({k: v for k, v in (overrides or {}).items() if v is not None})
        spec = bench.BenchSpec.from_dict(d)
    except OSError as exc:
        print(f"error: cannot read {spec_path}: {exc.strerror}", file=sys.stderr)
        return EXIT_IO
    except (ValueError, TypeError) as exc:
        print(f"error: invalid bench spec: {exc}", file=sys.stderr)
        return EXIT_IO
    rows = bench.run_bench(spec)
    try:
        bench.write_outputs(spec, rows, out_dir)
    except OSError as exc:
        print(f"error: cannot write results: {exc.strerror}", file=sys.stderr)
        return EXIT_IO
    for s in bench.summarize(rows):
        print(f"{s['option']:>12} T={s['T']:<4} success={s['success_rate']:.2f} a3={s['a3_all']:.2f}")
    return EXIT_OK


def cmd_render(scenario_path, trajectory_path, out_path, n_snapshots=10) -> int:
    sc = _load(scenario_path)
    if sc is None:
        return EXIT_IO
    try:
        traj = Trajectory.from_dict(json.loads(Path(trajectory_path).read_text()))
        Path(out_path).write_text(render.render_svg(sc, traj, n_snapshots, title=sc.name))
    except OSError as exc:
        print(f"error: {exc.filename}: {exc.strerror}", file=sys.stderr)
        return EXIT_IO
    except (KeyError, ValueError) as exc:
        print(f"error: invalid trajectory file: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


def cmd_export_lp(scenario_path, out_path, relaxation="encoded:8") -> int:
    sc = _load(scenario_path)
    if sc is None:
        return EXIT_IO
    try:
        kin = kopt.solve_kopt(sc)
    except kopt.KoptError as exc:
        print(f"planner failed: {exc}", file=sys.stderr)
        return EXIT_PLANNER
    model = copt.build_copt(sc, kin, relaxation)
    try:
        Path(out_path).write_text(write_lp(model.milp))
    except OSError as exc:
        print(f"error: cannot write {out_path}: {exc.strerror}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="contactopt", description=__doc__.split("\n")[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="plan one scenario")
    p.add_argument("scenario")
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.add_argument("--max-cuts", type=int)
    p.add_argument("--robustness-weight", type=float)
    p.add_argument("--time-limit", type=float, help="per-stage limit in seconds")
    p.add_argument("--snapshots", type=int, default=10)
    _add_option_flags(p)

    p = sub.add_parser("bench", help="randomized comparison of relaxation options")
    p.add_argument("spec", nargs="?")
    p.add_argument("--out", required=True)
    p.add_argument("--samples", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--horizons", type=int, nargs="+")
    p.add_argument("--options", nargs="+", help="e.g. mccormick encoded:8 naive:4")
    p.add_argument("--time-limit", type=float, help="per-stage limit in seconds")
    p.add_argument("--full-scale", action="store_true", help="500 samples at T = 200")

    p = sub.add_parser("render", help="draw a saved trajectory as SVG")
    p.add_argument("scenario")
    p.add_argument("trajectory")
    p.add_argument("--out", required=True)
    p.add_argument("--snapshots", type=int, default=10)

    p = sub.add_parser("export-lp", help="write the schedule MILP in LP format")
    p.add_argument("scenario")
    p.add_argument("--out", required=True)
    _add_option_flags(p)
    return ap


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "run":
        lim = args.time_limit
        overrides = {"relaxation": _relaxation(args), "max_cuts": args.max_cuts,
                     "robustness_weight": args.robustness_weight,
                     "kopt_time_limit": lim, "copt_time_limit": lim, "qopt_time_limit": lim}
        return cmd_run(args.scenario, args.config, args.out, overrides, args.snapshots)
    if args.command == "bench":
        overrides = {"n_samples": args.samples, "seed": args.seed, "workers": args.workers,
                     "horizons": args.horizons, "options": args.options,
                     "stage_time_limit": args.time_limit, "full_scale": args.full_scale or None}
        return cmd_bench(args.spec, args.out, overrides)
    if args.command == "render":
        return cmd_render(args.scenario, args.trajectory, args.out, args.snapshots)
    return cmd_export_lp(args.scenario, args.out, _relaxation(args) or "encoded:8")


if __name__ == "__main__":
    sys.exit(main())
