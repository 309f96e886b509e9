"""End-to-end acceptance checks, one test per criterion, each with its time budget."""
import math
import time

import numpy as np
import pytest

from contactopt import bench, scenarios
from contactopt.copt import ContactSchedule, build_copt, moment_residuals, solve_copt
from contactopt.kopt import build_kopt, solve_kopt
from contactopt.milp import BINARY, MilpConfig, MilpModel, branch_and_bound, enumerate_binaries
from contactopt.nlp import check_gradients
from contactopt.pipeline import PipelineConfig, run
from contactopt.qopt import QoptOptions, build_qopt, robustness_score, verify_trajectory
from contactopt.relax import PartitionSpec, bilinear_term, binary_encoded, piecewise_naive
from contactopt.scene import Pose2, sdf

from oracles import attainable_w, same_intervals


class Clock:
    def __init__(self):
        self.start = time.perf_counter()

    @property
    def elapsed(self):
        return time.perf_counter() - self.start


def _term_model(xb, yb):
    m = MilpModel()
    x = m.add_var("alpha", lb=xb[0], ub=xb[1])
    y = m.add_var("lam_n", lb=yb[0], ub=yb[1])
    return m, bilinear_term(m, x, y, "w")


@pytest.mark.criterion(1, "encoded and naive projections agree for C in {2,4,8} on a 21x21 grid")
def test_c1_projection_equivalence():
    clock = Clock()
    xb, yb = (0.0, 0.07), (0.0, 5 * 0.1 * 9.81)
    X, Y = np.meshgrid(np.linspace(*xb, 21), np.linspace(*yb, 21), indexing="ij")
    for C in (2, 4, 8):
        m1, t1 = _term_model(xb, yb)
        piecewise_naive(m1, t1, PartitionSpec.uniform(t1, C))
        m2, t2 = _term_model(xb, yb)
        binary_encoded(m2, t2, PartitionSpec.uniform(t2, C))
        a = attainable_w(m1, t1.x, t1.y, t1.w, X, Y)
        b = attainable_w(m2, t2.x, t2.y, t2.w, X, Y)
        assert same_intervals(a, b, tol=1e-9), C
    assert clock.elapsed < 10


@pytest.mark.criterion(2, "binary counts ceil(log2 C) for encoded vs C for naive")
@pytest.mark.parametrize("C", [2, 4, 8, 16])
def test_c2_binary_counts(C):
    m, t = _term_model((0, 0.07), (0, 5))
    piecewise_naive(m, t, PartitionSpec.uniform(t, C))
    assert m.binaries.size == C
    m, t = _term_model((0, 0.07), (0, 5))
    binary_encoded(m, t, PartitionSpec.uniform(t, C))
    assert m.binaries.size == math.ceil(math.log2(C))


@pytest.mark.criterion(3, "grasp-lift moment residual: encoded(4) <= McCormick, each within its gap bound")
def test_c3_grasp_lift_residuals():
    clock = Clock()
    sc = scenarios.grasp_lift(T=5)
    kin = solve_kopt(sc)
    worst, bounds = {}, {}
    for rel in ("mccormick", "encoded:4"):
        model = build_copt(sc, kin, rel)
        sched = solve_copt(model, MilpConfig(backend="bnb", time_limit=25))
        assert isinstance(sched, ContactSchedule), rel
        G = np.abs(moment_residuals(sc, sched))
        gap = np.zeros(sc.T + 1)
        for (t, i, p), h in model.handles.items():
            if sched.z[t, i, p]:
                region = None if h.spec is None else h.spec.region_of(sched.alpha[t, i, p])
                gap[t] += h.gap_bound(region)
        assert np.all(G <= gap + 1e-9), rel
        worst[rel], bounds[rel] = G.max(), gap.max()
    print(f"max |G|: {worst}, bounds: {bounds}")
    assert worst["encoded:4"] <= worst["mccormick"] + 1e-12
    assert clock.elapsed < 60


@pytest.mark.criterion(4, "pivot T=10 to 90 degrees verified, final pose within 1e-3")
def test_c4_pivot():
    clock = Clock()
    sc = scenarios.pivot(T=10)
    res = run(sc, PipelineConfig(relaxation="encoded:8"))
    assert res.success, res.message
    traj = res.trajectory
    resid = verify_trajectory(sc, traj)
    print(f"residuals: {resid}")
    assert all(v <= 1e-6 for k, v in resid.items() if k != "complementarity")
    assert resid["complementarity"] <= 1e-4
    assert np.abs(traj.poses[-1] - sc.q_goal.to_array()).max() <= 1e-3
    assert traj.poses[-1, 2] == pytest.approx(math.pi / 2, abs=1e-3)
    assert clock.elapsed < 120


@pytest.mark.criterion(5, "two-arm pivot: robustness score with weight > 0 >= weight 0")
def test_c5_robustness():
    clock = Clock()
    sc = scenarios.two_arm_pivot()
    scores = {}
    for weight in (0.0, 1.0):
        res = run(sc, PipelineConfig(relaxation="encoded:8", robustness_weight=weight))
        assert res.success, (weight, res.message)
        scores[weight] = robustness_score(sc, res.trajectory)
    print(f"robustness scores: {scores}")
    assert scores[1.0] >= scores[0.0]
    assert clock.elapsed < 240


@pytest.mark.criterion(6, "injected rejection: one cut, cuts respected, new schedule differs")
def test_c6_injected_rejection():
    clock = Clock()
    sc = scenarios.pivot(T=10)
    res = run(sc, PipelineConfig(relaxation="encoded:8"), reject=lambda k, sched: k == 0)
    assert res.success, res.message
    assert len(res.cuts_applied) == 1
    first, final = res.schedules[0], res.schedules[-1]
    for cut in res.cuts_applied:
        assert sum(final.z[k] for k in cut) <= len(cut) - 1
    assert any(first.z[k] != final.z[k] for k in first.active_set())
    assert clock.elapsed < 60


@pytest.mark.criterion(7, "20-sample bench at T=10: encoded(8) mean a3 and success rate vs McCormick")
def test_c7_bench():
    clock = Clock()
    spec = bench.BenchSpec(n_samples=20, horizons=(10,), options=("mccormick", "encoded:8"), seed=0,
                           stage_time_limit=60, run_time_limit=80)
    rows = bench.run_bench(spec)
    summary = {s["option"]: s for s in bench.summarize(rows)}
    for s in summary.values():
        print(f"{s['option']:>10}: success {s['success_rate']:.2f}  a1 {s['a1']:.1f}s  "
              f"a2 {s['a2']:.3f}  a3 {s['a3']:.2f}  a3_all {s['a3_all']:.2f}")
    mc, enc = summary["mccormick"], summary["encoded:8"]
    assert enc["a3_all"] <= mc["a3_all"]
    assert enc["success_rate"] >= mc["success_rate"]
    assert clock.elapsed < 30 * 60


def _random_milp(rng, n_bin, n_cont=4, n_rows=10):
    m = MilpModel()
    vs = [m.add_var(f"b{k}", BINARY, 0, 1) for k in range(n_bin)]
    vs += [m.add_var(f"x{k}", lb=-2, ub=3) for k in range(n_cont)]
    for _ in range(n_rows):
        picks = rng.choice(len(vs), size=4, replace=False)
        m.add_constraint({vs[k]: float(rng.integers(-3, 4)) or 1.0 for k in picks},
                         str(rng.choice(["<=", ">="])), float(rng.integers(-2, 3)))
    m.add_le({v: 1.0 for v in m.binaries}, 3, "card")
    m.set_objective({v: float(rng.normal()) for v in vs})
    return m


@pytest.mark.criterion(8, "solver hygiene: gradients, B&B vs enumeration, K-Opt sdf")
def test_c8_hygiene():
    rng = np.random.default_rng(2024)
    # K-Opt and Q-Opt derivatives at 10 random points each
    sc = scenarios.pivot()
    kp = build_kopt(sc)
    for _ in range(10):
        x = np.clip(kp.x0 + 0.01 * rng.standard_normal(kp.n), kp.lower, kp.upper)
        assert check_gradients(kp, x, rel_tol=1e-5).ok
    kin = solve_kopt(sc)
    sched = solve_copt(build_copt(sc, kin, "encoded:8"), MilpConfig(backend="highs", time_limit=60))
    assert isinstance(sched, ContactSchedule)
    qp = build_qopt(sc, kin, sched, QoptOptions())
    for _ in range(10):
        x = qp.random_point(rng)
        assert check_gradients(qp.nlp(1e-4, x), x, rel_tol=1e-5).ok
    # B&B against enumeration up to 30 binaries
    for n_bin in (5, 10, 20, 30):
        m = _random_milp(rng, n_bin)
        ref = enumerate_binaries(m)
        got = branch_and_bound(m, MilpConfig(node_limit=10**6, time_limit=120))
        assert got.status.has_solution == ref.status.has_solution
        if ref.status.has_solution:
            assert got.objective == pytest.approx(ref.objective, abs=1e-6)
    # K-Opt keeps every vertex out of the table
    for name in ("pivot", "sliding_box", "grasp_lift", "two_arm_pivot"):
        s = scenarios.LIBRARY[name]()
        k = solve_kopt(s)
        assert min(sdf(s, Pose2(*q)).min() for q in k.poses) >= -1e-8
