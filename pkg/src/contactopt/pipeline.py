"""K-Opt -> C-Opt -> Q-Opt with no-good cuts and a single pose-relaxation retry."""
from __future__ import annotations

import dataclasses
import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional

import numpy as np

from . import copt, kopt, nlp, qopt
from .copt import ContactSchedule, CoptInfeasible
from .milp import MilpConfig
from .relax import Relaxation
from .scene import Scenario

RejectHook = Callable[[int, ContactSchedule], bool]


@dataclass
class PipelineConfig:
    relaxation: str = "encoded:8"
    max_cuts: int = 25
    kopt_time_limit: float = 60.0
    copt_time_limit: float = 60.0
    qopt_time_limit: float = 60.0
    run_time_limit: float = math.inf  # wall budget for the whole loop
    robustness_weight: float = 0.0
    pose_relax_box: tuple = (0.02, 0.02, 0.15)  # (m, m, rad)
    eps_schedule: tuple = qopt.DEFAULT_EPS
    milp_backend: str = "highs"
    checkpoint_dir: Optional[str] = None

    def __post_init__(self):
        if self.max_cuts < 0:
            raise ValueError("max_cuts must be >= 0")
        self.relaxation = str(Relaxation.parse(str(self.relaxation)))
        self.pose_relax_box = tuple(float(v) for v in self.pose_relax_box)
        if len(self.pose_relax_box) != 3 or min(self.pose_relax_box) <= 0:
            raise ValueError("pose_relax_box needs three positive half-widths")
        self.eps_schedule = tuple(float(e) for e in self.eps_schedule)
        if not self.eps_schedule or min(self.eps_schedule) < 0:
            raise ValueError("eps_schedule must be a nonempty list of nonnegative values")
        for name in ("kopt_time_limit", "copt_time_limit", "qopt_time_limit", "run_time_limit"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["pose_relax_box"] = list(self.pose_relax_box)
        d["eps_schedule"] = list(self.eps_schedule)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown pipeline config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def load(cls, path) -> "PipelineConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass
class PipelineResult:
    success: bool
    status: str  # success | kopt_failed | copt_infeasible | cuts_exhausted | timeout
    trajectory: Optional[qopt.Trajectory] = None
    kinematics: Optional[kopt.KinematicsSolution] = None
    schedules: List[ContactSchedule] = field(default_factory=list)
    cuts_applied: List[tuple] = field(default_factory=list)
    reports: List[qopt.InfeasibilityReport] = field(default_factory=list)
    stages: List[dict] = field(default_factory=list)  # one entry per stage call, in order
    pose_relaxed: bool = False
    total_time: float = 0.0
    message: str = ""

    def stage_time(self, stage: str) -> float:
        return float(sum(s["elapsed"] for s in self.stages if s["stage"] == stage))

    @property
    def metrics(self) -> Dict[str, float]:
        """a1 total seconds, a2 share of it spent in C-Opt, a3 cuts."""
        total = self.total_time
        return {"a1": total, "a2": self.stage_time("copt") / total if total > 0 else 0.0,
                "a3": len(self.cuts_applied)}

    def to_dict(self) -> dict:
        return {
            "success": self.success,
            "status": self.status,
            "message": self.message,
            "metrics": self.metrics,
            "timings": {s: self.stage_time(s) for s in ("kopt", "copt", "qopt")} | {"total": self.total_time},
            "stages": list(self.stages),
            "cuts_applied": [[list(k) for k in cut] for cut in self.cuts_applied],
            "pose_relaxed": self.pose_relaxed,
            "reports": [dataclasses.asdict(r) for r in self.reports],
            "residuals": dict(self.trajectory.residuals) if self.trajectory is not None else None,
        }


class _Checkpoints:
    def __init__(self, root: Optional[str]):
        self.root = Path(root) if root else None
        if self.root is not None:
            self.root.mkdir(parents=True, exist_ok=True)

    def dump(self, name: str, payload: dict):
        if self.root is not None:
            (self.root / name).write_text(json.dumps(jsonable(payload)))


def jsonable(obj):
    """Plain JSON: non-finite floats become null, numpy scalars become Python numbers."""
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return jsonable(obj.tolist())
    if isinstance(obj, np.generic):
        obj = obj.item()
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    return obj




def run(scenario: Scenario, config: Optional[PipelineConfig] = None,
        reject: Optional[RejectHook] = None) -> PipelineResult:
    """Plan one scenario.

    ``reject(iteration, schedule)`` is a test hook: returning True turns that
    iteration into a Q-Opt rejection without solving it.
    """
    cfg = config or PipelineConfig()
    start = time.perf_counter()
    ck = _Checkpoints(cfg.checkpoint_dir)
    result = PipelineResult(False, "running")

    def finish(status, message=""):
        result.status, result.message = status, message
        result.success = status == "success"
        result.total_time = time.perf_counter() - start
        ck.dump("pipeline.json", {"config": cfg.to_dict(), "result": result.to_dict()})
        return result

    deadline = start + cfg.run_time_limit

    def budget(limit):
        return min(limit, deadline - time.perf_counter())

    t0 = time.perf_counter()
    try:
        kin = kopt.solve_kopt(scenario, nlp.NlpConfig(feas_tol=1e-9, opt_tol=1e-8,
                                                     time_limit=budget(cfg.kopt_time_limit)))
    except kopt.KoptError as exc:
        result.stages.append({"stage": "kopt", "status": exc.result.status.value,
                              "elapsed": time.perf_counter() - t0})
        return finish("kopt_failed", str(exc))
    result.kinematics = kin
    result.stages.append({"stage": "kopt", "status": "Converged", "elapsed": time.perf_counter() - t0})
    ck.dump("kinematics.json", kin.to_dict())

    model = copt.build_copt(scenario, kin, cfg.relaxation)
    iteration = 0
    while True:
        if budget(math.inf) <= 0:
            return finish("timeout", "run time limit reached")
        t0 = time.perf_counter()
        sched = copt.solve_copt(model, MilpConfig(time_limit=budget(cfg.copt_time_limit),
                                                  backend=cfg.milp_backend))
        elapsed = time.perf_counter() - t0
        result.stages.append({"stage": "copt", "status": sched.status, "elapsed": elapsed,
                              "pose_relaxed": model.pose_relaxed, "cuts": len(model.cuts)})
        if isinstance(sched, CoptInfeasible):
            if budget(math.inf) <= 0:
                return finish("timeout", "run time limit reached in C-Opt")
            if model.pose_relaxed:
                return finish("copt_infeasible", sched.message or sched.status)
            model = copt.relax_pose_variables(model, kin, cfg.pose_relax_box)
            result.pose_relaxed = True
            continue
        result.schedules.append(sched)
        ck.dump(f"schedule_{iteration}.json", sched.to_dict())

        t0 = time.perf_counter()
        if reject is not None and reject(iteration, sched):
            out = qopt.InfeasibilityReport(sched.active_set(), 0.0, "Injected", math.inf,
                                           "rejected by hook")
        else:
            problem = qopt.build_qopt(scenario, kin, sched, qopt.QoptOptions(
                robustness_weight=cfg.robustness_weight, eps_schedule=cfg.eps_schedule,
                time_limit=max(budget(cfg.qopt_time_limit), 1e-3)))
            out = qopt.solve_qopt(problem)
        elapsed = time.perf_counter() - t0
        if isinstance(out, qopt.Trajectory):
            result.stages.append({"stage": "qopt", "status": "Verified", "elapsed": elapsed})
            result.trajectory = out
            ck.dump("trajectory.json", out.to_dict())
            return finish("success")
        out.elapsed = elapsed
        result.stages.append({"stage": "qopt", "status": out.status, "elapsed": elapsed})
        result.reports.append(out)
        if len(result.cuts_applied) >= cfg.max_cuts:
            return finish("cuts_exhausted", f"Q-Opt rejected the schedule after {len(result.cuts_applied)} cuts")
        cut = tuple(sorted({tuple(a) for a in out.active_set}))
        if cut in model.cuts:
            # the solver returned an excluded schedule; should not happen with an exact MILP
            return finish("cuts_exhausted", "C-Opt repeated a cut schedule")
        copt.add_no_good_cut(model, cut)
        result.cuts_applied.append(cut)
        ck.dump(f"cut_{len(result.cuts_applied) - 1}.json", {"active_set": [list(k) for k in cut]})
        iteration += 1


def metrics_from_checkpoints(root) -> Dict[str, float]:
    """Recompute a1/a2/a3 from the files a checkpointed run leaves behind."""
    root = Path(root)
    data = json.loads((root / "pipeline.json").read_text())["result"]
    copt_time = sum(s["elapsed"] for s in data["stages"] if s["stage"] == "copt")
    total = data["timings"]["total"]
    cuts = len(sorted(root.glob("cut_*.json")))
    return {"a1": total, "a2": copt_time / total if total > 0 else 0.0, "a3": cuts}
