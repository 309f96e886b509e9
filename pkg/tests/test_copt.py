import json
import math

import numpy as np
import pytest

from contactopt import scenarios
from contactopt.copt import (
    ContactSchedule,
    CoptError,
    CoptInfeasible,
    add_no_good_cut,
    build_copt,
    force_residuals,
    moment_residuals,
    relax_pose_variables,
    solve_copt,
)
from contactopt.kopt import kinematics_from_poses, solve_kopt
from contactopt.milp import LE, MilpConfig
from contactopt.scene import RobotSpec, Scenario, drot, rot

from oracles import schedule_ok

G = 9.81
HIGHS = MilpConfig(backend="highs", time_limit=120)


@pytest.fixture(scope="module")
def pivot_case():
    sc = scenarios.pivot()
    kin = solve_kopt(sc)
    model = build_copt(sc, kin, "encoded:8")
    return sc, kin, model, solve_copt(model, HIGHS)


def _static_kin(sc):
    return kinematics_from_poses(sc, sc.reference())


def test_rest_is_feasible_without_robot_force():
    sc = scenarios.resting_box()
    model = build_copt(sc, _static_kin(sc), "mccormick")
    for v in model.index.lam_n.values():
        model.milp.variables[v].ub = 0.0
    sched = solve_copt(model)
    assert isinstance(sched, ContactSchedule)
    assert np.all(sched.u == 0)
    assert sched.f[:, :, 1].sum(axis=1) == pytest.approx(np.full(sc.T + 1, 0.1 * G))
    assert schedule_ok(sc, sched)[0]


def test_frictionless_robots_cannot_lift():
    base = scenarios.grasp_lift()
    robots = tuple(RobotSpec(r.id, mu=0.0) for r in base.robots)
    sc = Scenario(base.object, robots, base.env, base.q_start, base.q_goal, base.T, base.step)
    res = solve_copt(build_copt(sc, solve_kopt(sc), "mccormick"))
    assert isinstance(res, CoptInfeasible)
    assert res.status == "Infeasible"


def test_off_com_support_violates_moment():
    sc = scenarios.stick_on_corner()
    kin = _static_kin(sc)
    # gravity moment about the tip: m g d with d the horizontal COM offset
    d = 0.1 * math.sin(0.1)
    assert sc.object.mass * G * d > 1e-3
    assert isinstance(solve_copt(build_copt(sc, kin)), CoptInfeasible)


def test_pose_relaxation_recovers_feasibility():
    sc = scenarios.stick_on_corner()
    model = build_copt(sc, _static_kin(sc))
    same = relax_pose_variables(model, pose_box=0.0)
    assert isinstance(solve_copt(same), CoptInfeasible)
    relaxed = relax_pose_variables(model, pose_box=(0.02, 0.02, 0.15))
    assert relaxed.pose_relaxed
    sched = solve_copt(relaxed)
    assert isinstance(sched, ContactSchedule)
    shift = sched.poses - model.kin.poses
    assert np.all(np.abs(shift[:, :2]) <= 0.02 + 1e-9)
    assert np.all(np.abs(shift[:, 2]) <= 0.15 + 1e-9)


@pytest.mark.parametrize("th", [0.0, 0.7, -2.0])
@pytest.mark.parametrize("d", [0.01, 0.05, 0.15])
def test_rotation_linearization_error(th, d):
    err = np.abs(rot(th + d) - (rot(th) + d * drot(th)))
    assert err.max() <= d * d / 2 + 1e-15


def test_horizon_mismatch():
    sc = scenarios.pivot()
    kin = _static_kin(scenarios.resting_box(T=4))
    with pytest.raises(CoptError):
        build_copt(sc, kin)


def test_pivot_schedule(pivot_case):
    sc, kin, model, sched = pivot_case
    assert isinstance(sched, ContactSchedule)
    ok, bad = schedule_ok(sc, sched, model.gated)
    assert ok, bad
    # the pivot corner carries load (two robots may also hold the box alone at
    # some steps), and some robot pushes on a face at every step
    assert sched.f_local[:, 0, 0].max() > 0
    assert np.all(np.abs(sched.u).sum(axis=(1, 2)) > 0)
    assert np.max(np.abs(force_residuals(sc, sched))) <= 1e-6
    assert np.all(np.abs(moment_residuals(sc, sched)) <= sched.gap_bounds.sum(axis=(1, 2)) + 1e-6)


def test_schedule_json_round_trip(pivot_case):
    sched = pivot_case[3]
    back = ContactSchedule.from_dict(json.loads(sched.to_json()))
    assert np.array_equal(back.z, sched.z)
    assert np.allclose(back.lam, sched.lam)
    assert back.active_set() == sched.active_set()


def test_gated_robot_stays_off():
    sc = scenarios.two_arm_pivot()
    kin = solve_kopt(sc)
    model = build_copt(sc, kin, "mccormick")
    assert model.gated[:, 1].any() and not model.gated[:, 0].any()
    sched = solve_copt(model)
    assert isinstance(sched, ContactSchedule)
    assert np.all(sched.z[model.gated] == 0)
    assert schedule_ok(sc, sched, model.gated)[0]


def test_no_good_cut_rows(pivot_case):
    sc, kin, _, _ = pivot_case
    model = build_copt(sc, kin, "mccormick")
    active = [(0, 0, 1), (1, 0, 1), (2, 1, 3)]
    cid = add_no_good_cut(model, active)
    con = model.milp.constraints[cid]
    assert con.sense == LE and con.rhs == 2
    assert con.coeffs == {model.index.z[k]: 1.0 for k in active}
    cid = add_no_good_cut(model, [(4, 0, 0)])
    assert model.milp.constraints[cid].rhs == 0
    with pytest.raises(CoptError):
        add_no_good_cut(model, [])
    with pytest.raises(CoptError):
        add_no_good_cut(model, [(99, 0, 0)])


def test_cut_changes_the_schedule(pivot_case):
    sc, kin, _, first = pivot_case
    model = build_copt(sc, kin, "encoded:8")
    active = first.active_set()
    add_no_good_cut(model, active)
    second = solve_copt(model, HIGHS)
    assert isinstance(second, ContactSchedule)
    assert any(second.z[k] == 0 for k in active)


def test_cuts_survive_pose_relaxation(pivot_case):
    sc, kin, _, first = pivot_case
    model = build_copt(sc, kin, "mccormick")
    add_no_good_cut(model, first.active_set())
    relaxed = relax_pose_variables(model, pose_box=0.01)
    assert relaxed.cuts == model.cuts


def test_grasp_lift_gap_bound():
    sc = scenarios.grasp_lift()
    kin = solve_kopt(sc)
    model = build_copt(sc, kin, "encoded:4")
    sched = solve_copt(model, MilpConfig(backend="bnb"))
    assert isinstance(sched, ContactSchedule)
    bound = np.zeros(sc.T + 1)
    for (t, i, p), h in model.handles.items():
        L = sc.object.surfaces[p].length
        per_term = (L / 4) * sc.fmax_robot / 4
        assert h.gap_bound(h.spec.region_of(sched.alpha[t, i, p])) == pytest.approx(per_term)
        if sched.z[t, i, p]:
            bound[t] += per_term
    assert np.all(np.abs(moment_residuals(sc, sched)) <= bound + 1e-9)
