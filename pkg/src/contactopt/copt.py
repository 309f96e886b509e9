"""Contact trajectory optimization as a mixed-integer linear program.

Poses come from the kinematic stage and stay fixed, so surface frames,
extrinsic contact points and the world COM are constants at each step.  The
robot contact point on surface p is ``a_p + alpha * tau_p`` in the body
frame and the body-frame robot force is ``-lam_n * n_p + lam_s * tau_p``.
Its moment about the COM is then

    (a_p - com) x (-n_p) lam_n + (a_p - com) x tau_p lam_s + alpha * lam_n

(the ``alpha * lam_s`` product vanishes because tau x tau = 0), which is
invariant to the object pose.  ``w = alpha * lam_n`` is the only bilinear
term and is handed to the configured relaxation.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from . import milp
from .kopt import KinematicsSolution
from .milp import BINARY, CONTINUOUS, LinExpr, MilpConfig, MilpModel
from .relax import (
    McCormick,
    Relaxation,
    RelaxationHandle,
    bilinear_term,
    compute_big_m,
    implication,
    implication_eq,
    mccormick,
)
from .scene import Scenario, cross2, drot, rot


class CoptError(ValueError):
    pass


@dataclass
class CoptIndex:
    z: Dict[tuple, int] = field(default_factory=dict)  # (t, i, p)
    lam_n: Dict[tuple, int] = field(default_factory=dict)
    lam_s: Dict[tuple, int] = field(default_factory=dict)
    alpha: Dict[tuple, int] = field(default_factory=dict)
    w: Dict[tuple, int] = field(default_factory=dict)
    p: Dict[tuple, tuple] = field(default_factory=dict)  # (t, i) -> (x, y)
    pdot: Dict[tuple, tuple] = field(default_factory=dict)
    u_body: Dict[tuple, tuple] = field(default_factory=dict)
    f_n: Dict[tuple, int] = field(default_factory=dict)  # (t, v)
    f_s: Dict[tuple, int] = field(default_factory=dict)
    halfspace: Dict[tuple, int] = field(default_factory=dict)
    dq: Dict[int, tuple] = field(default_factory=dict)  # t -> (dx, dy, dtheta)
    qdot: Dict[int, tuple] = field(default_factory=dict)


@dataclass
class CoptModel:
    milp: MilpModel
    index: CoptIndex
    handles: Dict[tuple, RelaxationHandle]
    scenario: Scenario
    kin: KinematicsSolution
    relaxation: Relaxation
    cuts: List[tuple] = field(default_factory=list)
    pose_box: Optional[np.ndarray] = None
    gated: Optional[np.ndarray] = None  # (T+1, N_r) bool

    @property
    def pose_relaxed(self) -> bool:
        return self.pose_box is not None

    @property
    def n_binaries(self) -> int:
        return int(self.milp.binaries.size)


@dataclass
class CoptInfeasible:
    """C-Opt found no schedule (or ran out of budget before finding one)."""

    status: str
    message: str = ""
    elapsed: float = 0.0
    nodes: int = 0


@dataclass
class ContactSchedule:
    z: np.ndarray  # (T+1, N_r, N_p) int
    alpha: np.ndarray  # (T+1, N_r, N_p)
    p_world: np.ndarray  # (T+1, N_r, 2)
    u: np.ndarray  # (T+1, N_r, 2) world robot force
    lam: np.ndarray  # (T+1, N_r, N_p, 2) local (normal, tangential)
    f: np.ndarray  # (T+1, N_v, 2) world extrinsic force
    f_local: np.ndarray  # (T+1, N_v, 2) along halfspace (normal, tangent)
    w: np.ndarray  # (T+1, N_r, N_p) relaxed alpha * lam_n
    poses: np.ndarray  # (T+1, 3) poses the schedule was built on
    gap_bounds: np.ndarray  # (T+1, N_r, N_p)
    elapsed: float = 0.0
    nodes: int = 0
    status: str = ""

    @property
    def T(self) -> int:
        return self.z.shape[0] - 1

    def surface(self) -> np.ndarray:
        """Assigned surface per (t, i), -1 when the robot has none."""
        s = np.argmax(self.z, axis=2)
        return np.where(self.z.sum(axis=2) > 0, s, -1)

    def assigned_alpha(self) -> np.ndarray:
        s = self.surface()
        out = np.zeros(s.shape)
        for (t, i), p in np.ndenumerate(s):
            if p >= 0:
                out[t, i] = self.alpha[t, i, p]
        return out

    def active_set(self) -> List[tuple]:
        return [tuple(int(k) for k in idx) for idx in np.argwhere(self.z == 1)]

    def to_dict(self) -> dict:
        d = {k: getattr(self, k).tolist() for k in
             ("z", "alpha", "p_world", "u", "lam", "f", "f_local", "w", "poses", "gap_bounds")}
        d.update(elapsed=self.elapsed, nodes=self.nodes, status=self.status)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ContactSchedule":
        arr = {k: np.asarray(d[k], dtype=float) for k in
               ("alpha", "p_world", "u", "lam", "f", "f_local", "w", "poses", "gap_bounds")}
        return cls(z=np.asarray(d["z"], dtype=int), elapsed=d.get("elapsed", 0.0),
                   nodes=d.get("nodes", 0), status=d.get("status", ""), **arr)

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


def _check_kin(scenario: Scenario, kin: KinematicsSolution):
    if kin.poses.shape != (scenario.T + 1, 3):
        raise CoptError(f"kinematics has {len(kin.poses) - 1} steps, scenario horizon is {scenario.T}")
    if kin.contact_map.shape != (scenario.object.n_vertices, scenario.T + 1):
        raise CoptError("contact map does not match the object's vertex count and horizon")


def _position_box(scenario: Scenario, poses: np.ndarray, margin: float = 0.05):
    reach = scenario.object.radius() + margin
    lo = poses[:, :2].min(axis=0) - reach
    hi = poses[:, :2].max(axis=0) + reach
    return lo, hi


class _Builder:
    def __init__(self, scenario, kin, relaxation, pose_box=None):
        _check_kin(scenario, kin)
        self.sc, self.kin, self.relax = scenario, kin, relaxation
        self.m = MilpModel(name=f"copt_{scenario.name}")
        self.ix = CoptIndex()
        self.handles: Dict[tuple, RelaxationHandle] = {}
        self.pose_box = None if pose_box is None else np.broadcast_to(
            np.asarray(pose_box, dtype=float), (scenario.T + 1, 3)).copy()
        self.poses = kin.poses

    # --- variables -------------------------------------------------------
    def _robot_vars(self):
        sc, m, ix = self.sc, self.m, self.ix
        T, obj = sc.T, sc.object
        F = sc.fmax_robot
        plo, phi = _position_box(sc, self.poses, 0.05 + (0.0 if self.pose_box is None else
                                                         float(np.max(self.pose_box[:, :2]))))
        for t in range(T + 1):
            for i, r in enumerate(sc.robots):
                ix.p[t, i] = (m.add_var(f"px_{t}_{i}", CONTINUOUS, plo[0], phi[0]),
                              m.add_var(f"py_{t}_{i}", CONTINUOUS, plo[1], phi[1]))
                if t < T:
                    ix.pdot[t, i] = (m.add_var(f"pdx_{t}_{i}", CONTINUOUS, r.vel_lb[0], r.vel_ub[0]),
                                     m.add_var(f"pdy_{t}_{i}", CONTINUOUS, r.vel_lb[1], r.vel_ub[1]))
                ub = (1.0 + r.mu) * F
                ix.u_body[t, i] = (m.add_var(f"ubx_{t}_{i}", CONTINUOUS, -ub, ub),
                                   m.add_var(f"uby_{t}_{i}", CONTINUOUS, -ub, ub))
                for p, s in enumerate(obj.surfaces):
                    key = (t, i, p)
                    ix.z[key] = m.add_var(f"z_{t}_{i}_{p}", BINARY, 0, 1, priority=1)
                    ix.lam_n[key] = m.add_var(f"ln_{t}_{i}_{p}", CONTINUOUS, 0.0, F)
                    ix.lam_s[key] = m.add_var(f"ls_{t}_{i}_{p}", CONTINUOUS, -r.mu * F, r.mu * F)
                    ix.alpha[key] = m.add_var(f"al_{t}_{i}_{p}", CONTINUOUS, 0.0, s.length)

    def _env_vars(self):
        sc, m, ix, kin = self.sc, self.m, self.ix, self.kin
        Fe = sc.fmax_env
        for t in range(sc.T + 1):
            for v in range(sc.object.n_vertices):
                if not kin.contact_map[v, t]:
                    continue
                mu = sc.object.mu_env[v]
                ix.f_n[t, v] = m.add_var(f"fn_{t}_{v}", CONTINUOUS, 0.0, Fe)
                ix.f_s[t, v] = m.add_var(f"fs_{t}_{v}", CONTINUOUS, -mu * Fe, mu * Fe)
                ix.halfspace[t, v] = int(kin.halfspace[v, t])

    def _pose_vars(self):
        sc, m, ix = self.sc, self.m, self.ix
        pb = sc.pose_bounds
        names = ("dqx", "dqy", "dqt")
        for t in range(sc.T + 1):
            q0 = self.poses[t]
            ix.dq[t] = tuple(
                m.add_var(f"{names[k]}_{t}", CONTINUOUS,
                          max(-self.pose_box[t, k], pb.lower[k] - q0[k]),
                          min(self.pose_box[t, k], pb.upper[k] - q0[k]))
                for k in range(3))
            if t < sc.T:
                ix.qdot[t] = tuple(
                    m.add_var(f"qd{k}_{t}", CONTINUOUS, pb.rate_lower[k], pb.rate_upper[k]) for k in range(3))

    def _product(self, x, y, name):
        """McCormick-relaxed product of a pose deviation with another variable."""
        term = bilinear_term(self.m, x, y, name)
        mccormick(self.m, term)
        return term.w

    # --- constraints -------------------------------------------------------
    def build(self) -> CoptModel:
        sc, kin, m, ix = self.sc, self.kin, self.m, self.ix
        T, obj, h = sc.T, sc.object, sc.step
        self._robot_vars()
        self._env_vars()
        if self.pose_box is not None:
            self._pose_vars()
        com = np.asarray(obj.com)
        env = sc.env
        gated = np.zeros((T + 1, len(sc.robots)), dtype=bool)

        for t in range(T + 1):
            q = self.poses[t]
            R, dR = rot(q[2]), drot(q[2])
            dth = self.ix.dq[t][2] if self.pose_box is not None else None
            force = [LinExpr(const=sc.weight[0]), LinExpr(const=sc.weight[1])]
            moment = LinExpr()

            for i, r in enumerate(sc.robots):
                gated[t, i] = r.gated(t, q)
                ubx, uby = ix.u_body[t, i]
                body = [LinExpr.var(ubx, -1.0), LinExpr.var(uby, -1.0)]
                zsum = LinExpr()
                for p, s in enumerate(obj.surfaces):
                    key = (t, i, p)
                    z, ln, ls, al = ix.z[key], ix.lam_n[key], ix.lam_s[key], ix.alpha[key]
                    n, tau, a = s.normal, s.tangent, np.asarray(s.a)
                    for k in range(2):
                        body[k].add_term(ln, -n[k]).add_term(ls, tau[k])
                    zsum.add_term(z, 1.0)
                    # moment about the COM, exact except for w = alpha * lam_n
                    arm = a - com
                    term = bilinear_term(m, al, ln, f"w_{t}_{i}_{p}")
                    ix.w[key] = term.w
                    self.handles[key] = self.relax.apply(m, term, axis="x")
                    moment.add_term(ln, cross2(arm, -n)).add_term(ls, cross2(arm, tau)).add_term(term.w, 1.0)
                    # no contact -> no force; friction cone
                    m.add_le(LinExpr({ln: 1.0, z: -sc.fmax_robot}), 0.0, f"nof_{t}_{i}_{p}")
                    m.add_le(LinExpr({ls: 1.0, ln: -r.mu}), 0.0, f"fc1_{t}_{i}_{p}")
                    m.add_le(LinExpr({ls: -1.0, ln: -r.mu}), 0.0, f"fc2_{t}_{i}_{p}")
                    # contact -> robot on the surface segment
                    self._membership(t, i, p, q, R, dR, dth)
                    if t < T:
                        self._stable_change(t, i, p)
                for k in range(2):
                    m.add_eq(body[k], 0.0, f"ub{k}_{t}_{i}")
                m.add_eq(zsum, 0.0 if gated[t, i] else 1.0, f"sel_{t}_{i}")
                # world robot force R u_body (+ dtheta R' u_body when poses move)
                if dth is not None:
                    dubx = self._product(dth, ubx, f"dubx_{t}_{i}")
                    duby = self._product(dth, uby, f"duby_{t}_{i}")
                for k in range(2):
                    force[k].add_term(ubx, R[k, 0]).add_term(uby, R[k, 1])
                    if dth is not None:
                        force[k].add_term(dubx, dR[k, 0]).add_term(duby, dR[k, 1])
                if t < T:
                    for k in range(2):
                        m.add_eq(LinExpr({ix.p[t + 1, i][k]: 1.0, ix.p[t, i][k]: -1.0, ix.pdot[t, i][k]: -h}),
                                 0.0, f"rdyn{k}_{t}_{i}")

            for v in range(obj.n_vertices):
                if (t, v) not in ix.f_n:
                    continue
                fn, fs = ix.f_n[t, v], ix.f_s[t, v]
                hk = ix.halfspace[t, v]
                nk, tk = np.asarray(env.halfspaces[hk][0]), env.tangent(hk)
                for k in range(2):
                    force[k].add_term(fn, nk[k]).add_term(fs, tk[k])
                rv = np.asarray(obj.vertices[v]) - com
                arm = R @ rv
                moment.add_term(fn, cross2(arm, nk)).add_term(fs, cross2(arm, tk))
                if dth is not None:
                    darm = dR @ rv
                    moment.add_term(self._product(dth, fn, f"dfn_{t}_{v}"), cross2(darm, nk))
                    moment.add_term(self._product(dth, fs, f"dfs_{t}_{v}"), cross2(darm, tk))
                mu = obj.mu_env[v]
                if kin.slip_map[v, t]:
                    sign = math.copysign(1.0, kin.slip_velocity[v, t])
                    m.add_eq(LinExpr({fs: 1.0, fn: sign * mu}), 0.0, f"slip_{t}_{v}")
                else:
                    m.add_le(LinExpr({fs: 1.0, fn: -mu}), 0.0, f"efc1_{t}_{v}")
                    m.add_le(LinExpr({fs: -1.0, fn: -mu}), 0.0, f"efc2_{t}_{v}")

            m.add_eq(force[0], 0.0, f"fx_{t}")
            m.add_eq(force[1], 0.0, f"fy_{t}")
            m.add_eq(moment, 0.0, f"mom_{t}")
            if self.pose_box is not None:
                self._pose_rows(t)

        return CoptModel(m, ix, self.handles, sc, kin, self.relax, [], self.pose_box, gated)

    def _membership(self, t, i, p, q, R, dR, dth):
        sc, m, ix = self.sc, self.m, self.ix
        s = sc.object.surfaces[p]
        a, tau = np.asarray(s.a), s.tangent
        z, al = ix.z[t, i, p], ix.alpha[t, i, p]
        base = R @ a + q[:2]
        dirn = R @ tau
        if dth is not None:
            dal = self._product(dth, al, f"dal_{t}_{i}_{p}")
        for k in range(2):
            g = LinExpr({ix.p[t, i][k]: 1.0, al: -dirn[k]}, -base[k])
            if dth is not None:
                g.add_term(ix.dq[t][k], -1.0).add_term(dth, -(dR @ a)[k]).add_term(dal, -(dR @ tau)[k])
            implication_eq(m, z, g, name=f"mem{k}_{t}_{i}_{p}")

    def _stable_change(self, t, i, p):
        m, ix, F = self.m, self.ix, self.sc.fmax_robot
        z0, z1 = ix.z[t, i, p], ix.z[t + 1, i, p]
        for tt in (t, t + 1):
            ln = ix.lam_n[tt, i, p]
            # lam <= F (1 - |z_t - z_{t+1}|), one row per sign of the difference
            m.add_le(LinExpr({ln: 1.0, z0: F, z1: -F}), F, f"stab_{t}_{tt}_{i}_{p}_a")
            m.add_le(LinExpr({ln: 1.0, z0: -F, z1: F}), F, f"stab_{t}_{tt}_{i}_{p}_b")
        # implied for integer z (force needs contact at both steps) but tighter in the LP
        m.add_le(LinExpr({ix.lam_n[t, i, p]: 1.0, z1: -F}), 0.0, f"stab_{t}_{i}_{p}_c")
        m.add_le(LinExpr({ix.lam_n[t + 1, i, p]: 1.0, z0: -F}), 0.0, f"stab_{t}_{i}_{p}_d")

    def _pose_rows(self, t):
        sc, m, ix = self.sc, self.m, self.ix
        q = self.poses[t]
        dx, dy, dth = ix.dq[t]
        if t < sc.T:
            q1 = self.poses[t + 1]
            for k in range(3):
                m.add_eq(LinExpr({ix.dq[t + 1][k]: 1.0, ix.dq[t][k]: -1.0, ix.qdot[t][k]: -sc.step}),
                         q[k] - q1[k], f"qdyn{k}_{t}")
        R, dR = rot(q[2]), drot(q[2])
        for v, vb in enumerate(sc.object.vertex_array):
            world, dworld = R @ vb + q[:2], dR @ vb
            for hk, (n, d) in enumerate(sc.env.halfspaces):
                n = np.asarray(n)
                g = LinExpr({dx: n[0], dy: n[1], dth: float(n @ dworld)}, float(n @ world - d))
                if self.kin.contact_map[v, t] and self.kin.halfspace[v, t] == hk:
                    m.add_eq(g, 0.0, f"act_{t}_{v}")
                else:
                    m.add_ge(g, 0.0, f"sdf_{t}_{v}_{hk}")


def build_copt(scenario: Scenario, kin: KinematicsSolution,
               relaxation: Union[Relaxation, str, None] = None) -> CoptModel:
    """Build the schedule MILP on the kinematic poses (feasibility objective)."""
    if relaxation is None:
        relaxation = Relaxation()
    elif isinstance(relaxation, str):
        relaxation = Relaxation.parse(relaxation)
    return _Builder(scenario, kin, relaxation).build()


def add_no_good_cut(model: CoptModel, active_set: Sequence[tuple]) -> int:
    """Exclude one combination of active assignments: sum of those z <= N - 1."""
    active = sorted({tuple(int(k) for k in a) for a in active_set})
    if not active:
        raise CoptError("a no-good cut needs a nonempty active set")
    for key in active:
        if key not in model.index.z:
            raise CoptError(f"no assignment variable for {key}")
    expr = LinExpr({model.index.z[key]: 1.0 for key in active})
    cid = model.milp.add_le(expr, len(active) - 1.0, f"cut_{len(model.cuts)}")
    model.cuts.append(tuple(active))
    return cid


def relax_pose_variables(model: CoptModel, kin: Optional[KinematicsSolution] = None,
                         pose_box=(0.02, 0.02, 0.15)) -> CoptModel:
    """Rebuild with pose deviations inside ``pose_box`` as decision variables.

    Rotations are linearized about the kinematic headings and products of
    the heading deviation with forces and surface coordinates are relaxed by
    McCormick envelopes over the box.  Existing cuts are carried over.
    """
    kin = kin or model.kin
    relaxed = _Builder(model.scenario, kin, model.relaxation, pose_box).build()
    for active in model.cuts:
        add_no_good_cut(relaxed, active)
    return relaxed


def solve_copt(model: CoptModel, config: Optional[MilpConfig] = None) -> Union[ContactSchedule, CoptInfeasible]:
    cfg = config or MilpConfig()
    sol = milp.solve(model.milp, cfg)
    if not sol.status.has_solution:
        return CoptInfeasible(sol.status.value, sol.message, sol.elapsed, sol.nodes)
    sched = decode(model, sol.values)
    sched.elapsed, sched.nodes, sched.status = sol.elapsed, sol.nodes, sol.status.value
    return sched


def decode(model: CoptModel, x) -> ContactSchedule:
    sc, ix = model.scenario, model.index
    x = np.asarray(x, dtype=float)
    T, Nr, Np, Nv = sc.T, len(sc.robots), sc.object.n_surfaces, sc.object.n_vertices
    poses = model.kin.poses.copy()
    if model.pose_relaxed:
        for t in range(T + 1):
            poses[t] += x[list(ix.dq[t])]
    z = np.zeros((T + 1, Nr, Np), dtype=int)
    alpha = np.zeros((T + 1, Nr, Np))
    lam = np.zeros((T + 1, Nr, Np, 2))
    w = np.zeros((T + 1, Nr, Np))
    gaps = np.zeros((T + 1, Nr, Np))
    p_world = np.zeros((T + 1, Nr, 2))
    u = np.zeros((T + 1, Nr, 2))
    f = np.zeros((T + 1, Nv, 2))
    f_local = np.zeros((T + 1, Nv, 2))
    for (t, i, p), v in ix.z.items():
        z[t, i, p] = int(round(x[v]))
        alpha[t, i, p] = x[ix.alpha[t, i, p]]
        lam[t, i, p] = x[ix.lam_n[t, i, p]], x[ix.lam_s[t, i, p]]
        w[t, i, p] = x[ix.w[t, i, p]]
        gaps[t, i, p] = model.handles[t, i, p].gap_bound()
    for t in range(T + 1):
        R = rot(poses[t, 2])
        for i in range(Nr):
            body = np.zeros(2)
            for p, s in enumerate(sc.object.surfaces):
                body += -lam[t, i, p, 0] * s.normal + lam[t, i, p, 1] * s.tangent
            u[t, i] = R @ body
            assigned = np.flatnonzero(z[t, i])
            if assigned.size:
                p = int(assigned[0])
                p_world[t, i] = R @ sc.object.surfaces[p].point(alpha[t, i, p]) + poses[t, :2]
            else:
                p_world[t, i] = x[list(ix.p[t, i])]
    for (t, v), fn in ix.f_n.items():
        hk = ix.halfspace[t, v]
        f_local[t, v] = x[fn], x[ix.f_s[t, v]]
        f[t, v] = x[fn] * np.asarray(sc.env.halfspaces[hk][0]) + x[ix.f_s[t, v]] * sc.env.tangent(hk)
    return ContactSchedule(z, alpha, p_world, u, lam, f, f_local, w, poses, gaps)


def moment_residuals(scenario: Scenario, sched: ContactSchedule) -> np.ndarray:
    """Moment about the COM per step using true products (no relaxation)."""
    T = sched.T
    out = np.zeros(T + 1)
    com_b = np.asarray(scenario.object.com)
    for t in range(T + 1):
        q = sched.poses[t]
        R = rot(q[2])
        c = R @ com_b + q[:2]
        total = 0.0
        for i in range(len(scenario.robots)):
            total += cross2(sched.p_world[t, i] - c, sched.u[t, i])
        for v in range(scenario.object.n_vertices):
            e = R @ np.asarray(scenario.object.vertices[v]) + q[:2]
            total += cross2(e - c, sched.f[t, v])
        out[t] = total
    return out


def force_residuals(scenario: Scenario, sched: ContactSchedule) -> np.ndarray:
    return sched.u.sum(axis=1) + sched.f.sum(axis=1) + scenario.weight


__all__ = [
    "ContactSchedule", "CoptError", "CoptIndex", "CoptInfeasible", "CoptModel", "McCormick",
    "add_no_good_cut", "build_copt", "decode", "force_residuals", "moment_residuals",
    "relax_pose_variables", "solve_copt",
]
