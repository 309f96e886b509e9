"""Randomized benchmark comparing C-Opt relaxation options.

Each sample draws a start and a goal pose for a box on the table; every
(option, horizon) pair plans the same sample.  Rows go to a CSV whose
non-timing columns depend only on the BenchSpec and its seed.
"""
from __future__ import annotations

import csv
import dataclasses
import io
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Sequence

import numpy as np

from . import pipeline
from .relax import Relaxation
from .scenarios import TABLE
from .scene import ObjectModel, Pose2, RobotSpec, Scenario, box_vertices

CSV_COLUMNS = ("sample", "option", "T", "success", "status", "a1", "a2", "a3")
TIMING_COLUMNS = ("a1", "a2")


@dataclass
class BenchSpec:
    n_samples: int = 20
    x_range: tuple = (-0.05, 0.05)  # m
    y_range: tuple = (-0.05, 0.05)  # m, lift above the resting height (negative draws rest on the table)
    theta_range: tuple = (-math.pi / 2, math.pi / 2)  # rad
    box: tuple = (0.07, 0.05)  # width, height in m
    mass: float = 0.1
    mu_env: float = 0.5
    mu_robot: float = 0.8
    n_robots: int = 2
    step: float = 0.2
    horizons: tuple = (10, 20)
    options: tuple = ("mccormick", "encoded:8")
    seed: int = 0
    stage_time_limit: float = 60.0
    run_time_limit: float = math.inf
    max_cuts: int = 25
    workers: int = 1

    def __post_init__(self):
        for name in ("x_range", "y_range", "theta_range"):
            lo, hi = (float(v) for v in getattr(self, name))
            if not lo <= hi:
                raise ValueError(f"{name} must satisfy lo <= hi")
            setattr(self, name, (lo, hi))
        if self.n_samples < 1:
            raise ValueError("n_samples must be >= 1")
        if not self.horizons or min(self.horizons) < 2:
            raise ValueError("horizons must be a nonempty list of T >= 2")
        if not self.options:
            raise ValueError("at least one option is needed")
        self.horizons = tuple(int(t) for t in self.horizons)
        self.options = tuple(str(Relaxation.parse(o)) for o in self.options)
        self.box = tuple(float(v) for v in self.box)

    @classmethod
    def full_scale(cls, **kw) -> "BenchSpec":
        """The large study: 500 samples at T = 200 with a one-minute budget per stage."""
        return cls(**{"n_samples": 500, "horizons": (200,), **kw})

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "BenchSpec":
        d = dict(d)
        if d.pop("full_scale", False):
            return cls.full_scale(**d)
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown bench spec keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def load(cls, path) -> "BenchSpec":
        return cls.from_dict(json.loads(Path(path).read_text()))


def resting_height(width: float, height: float, theta: float) -> float:
    """y of the center when the lowest corner touches y = 0."""
    v = np.array(box_vertices(width, height))
    c, s = math.cos(theta), math.sin(theta)
    return float(-np.min(s * v[:, 0] + c * v[:, 1]))


def sample_poses(spec: BenchSpec) -> List[tuple]:
    """(start, goal) pairs; the same seed always gives the same list."""
    rng = np.random.default_rng(spec.seed)
    out = []
    for _ in range(spec.n_samples):
        pair = []
        for _ in range(2):
            x = rng.uniform(*spec.x_range)
            dy = rng.uniform(*spec.y_range)
            th = rng.uniform(*spec.theta_range)
            y = resting_height(*spec.box, th) + max(dy, 0.0)
            pair.append(Pose2(x, y, th))
        out.append(tuple(pair))
    return out


def make_scenario(spec: BenchSpec, start: Pose2, goal: Pose2, T: int, name: str = "bench") -> Scenario:
    obj = ObjectModel(mass=spec.mass, vertices=box_vertices(*spec.box), mu_env=spec.mu_env)
    robots = tuple(RobotSpec(i, mu=spec.mu_robot) for i in range(spec.n_robots))
    return Scenario(obj, robots, TABLE, start, goal, T, spec.step, name=name)


def _run_one(job):
    spec, k, start, goal, option, T = job
    sc = make_scenario(spec, start, goal, T, name=f"sample_{k}")
    cfg = pipeline.PipelineConfig(relaxation=option, max_cuts=spec.max_cuts,
                                  kopt_time_limit=spec.stage_time_limit,
                                  copt_time_limit=spec.stage_time_limit,
                                  qopt_time_limit=spec.stage_time_limit,
                                  run_time_limit=spec.run_time_limit)
    res = pipeline.run(sc, cfg)
    m = res.metrics
    return {"sample": k, "option": option, "T": T, "success": int(res.success), "status": res.status,
            "a1": m["a1"], "a2": m["a2"], "a3": m["a3"]}


def run_bench(spec: BenchSpec) -> List[dict]:
    samples = sample_poses(spec)
    jobs = [(spec, k, s, g, opt, T) for k, (s, g) in enumerate(samples)
            for T in spec.horizons for opt in spec.options]
    if spec.workers > 1:
        with ProcessPoolExecutor(spec.workers) as pool:
            rows = list(pool.map(_run_one, jobs))
    else:
        rows = [_run_one(j) for j in jobs]
    order = {o: i for i, o in enumerate(spec.options)}
    return sorted(rows, key=lambda r: (r["T"], order[r["option"]], r["sample"]))


def summarize(rows: Sequence[dict]) -> List[dict]:
    """Per (option, T): success rate and mean a1/a2/a3.

    Means of a1, a2 and a3 are taken over successful runs, as is usual for
    timing tables; ``a3_all`` averages the cut count over every run.
    """
    groups: Dict[tuple, list] = {}
    for r in rows:
        groups.setdefault((r["option"], r["T"]), []).append(r)
    out = []
    for (option, T), rs in groups.items():
        ok = [r for r in rs if r["success"]]

        def mean(key, pool):
            return float(np.mean([r[key] for r in pool])) if pool else math.nan

        out.append({"option": option, "T": T, "n": len(rs), "success_rate": len(ok) / len(rs),
                    "a1": mean("a1", ok), "a2": mean("a2", ok), "a3": mean("a3", ok),
                    "a3_all": mean("a3", rs)})
    return out


def to_csv(rows: Sequence[dict]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: (f"{r[k]:.6f}" if k in TIMING_COLUMNS else r[k]) for k in CSV_COLUMNS})
    return buf.getvalue()


def write_outputs(spec: BenchSpec, rows: Sequence[dict], out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "results.csv").write_text(to_csv(rows))
    (out / "summary.json").write_text(json.dumps(pipeline.jsonable(
        {"spec": spec.to_dict(), "summary": summarize(rows)}), indent=2))
