"""Quasi-static trajectory optimization with the contact schedule frozen.

Decision vector, in order: poses q_t (T+1, 3), pose rates (T, 3), robot
positions p_t^i (T+1, N_r, 2), then for every step where robot i holds a
surface its coordinate alpha and local force (lam_n, lam_s), then for every
active extrinsic contact its local force (f_n, f_s) along the touched
halfspace's (normal, tangent).

Sticking/sliding is an eps-relaxed complementarity: with relative tangential
velocity v, tangential force g_s and cone margin c = mu g_n - |g_s|,

    |c v| <= eps     and     g_s v <= eps

with |g_s| smoothed as sqrt(g_s^2 + delta).
"""
from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Union

import numpy as np

from . import nlp
from .copt import ContactSchedule
from .kopt import KinematicsSolution
from .scene import Scenario, cross2, drot, halfspace_distances, rot, vertices_world

SMOOTH_DELTA = 1e-12
DEFAULT_EPS = (1e-2, 1e-3, 1e-4, 1e-6)


def _ddrot(theta):
    return -rot(theta)


@dataclass
class QoptOptions:
    robustness_weight: float = 0.0
    eps_schedule: tuple = DEFAULT_EPS
    feas_tol: float = 1e-7
    max_outer: int = 50
    time_limit: float = math.inf
    method: str = "slsqp"  # first choice per stage; auglag is the fallback


@dataclass
class Trajectory:
    poses: np.ndarray  # (T+1, 3)
    rates: np.ndarray  # (T, 3)
    p: np.ndarray  # (T+1, N_r, 2) robot positions, m
    u: np.ndarray  # (T+1, N_r, 2) world robot forces, N
    lam: np.ndarray  # (T+1, N_r, N_p, 2) local (normal, tangential) robot forces, N
    alpha: np.ndarray  # (T+1, N_r) surface coordinate, m (0 when unassigned)
    surface: np.ndarray  # (T+1, N_r) assigned surface, -1 when none
    f: np.ndarray  # (T+1, N_v, 2) world extrinsic forces, N
    f_local: np.ndarray  # (T+1, N_v, 2) (normal, tangent) along the touched halfspace
    contact_map: np.ndarray  # (N_v, T+1) bool
    halfspace: np.ndarray  # (N_v, T+1) int
    step: float
    eps: float = 0.0
    objective: float = math.nan
    residuals: Dict[str, float] = field(default_factory=dict)
    stages: List[dict] = field(default_factory=list)
    elapsed: float = 0.0

    @property
    def T(self) -> int:
        return len(self.poses) - 1

    def to_dict(self) -> dict:
        arrays = ("poses", "rates", "p", "u", "lam", "alpha", "surface", "f", "f_local", "halfspace")
        d = {k: getattr(self, k).tolist() for k in arrays}
        d["contact_map"] = self.contact_map.astype(int).tolist()
        d.update(step=self.step, eps=self.eps, objective=self.objective, residuals=dict(self.residuals),
                 stages=list(self.stages), elapsed=self.elapsed,
                 units={"length": "m", "angle": "rad", "force": "N", "time": "s"})
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Trajectory":
        floats = ("poses", "rates", "p", "u", "lam", "alpha", "f", "f_local")
        kw = {k: np.asarray(d[k], dtype=float) for k in floats}
        kw["rates"] = kw["rates"].reshape(-1, 3)
        return cls(surface=np.asarray(d["surface"], dtype=int),
                   contact_map=np.asarray(d["contact_map"], dtype=bool),
                   halfspace=np.asarray(d["halfspace"], dtype=int), step=float(d["step"]),
                   eps=float(d.get("eps", 0.0)), objective=float(d.get("objective", math.nan)),
                   residuals=dict(d.get("residuals", {})), stages=list(d.get("stages", [])),
                   elapsed=float(d.get("elapsed", 0.0)), **kw)

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


@dataclass
class InfeasibilityReport:
    """Q-Opt could not realize the schedule; ``active_set`` feeds a no-good cut."""

    active_set: List[tuple]
    stage_eps: float
    status: str
    max_violation: float
    message: str = ""
    stages: List[dict] = field(default_factory=list)
    elapsed: float = 0.0


class QoptError(ValueError):
    pass


class QoptProblem:
    """Index layout and residual families for one (scenario, schedule) pair."""

    def __init__(self, scenario: Scenario, kin: KinematicsSolution, schedule: ContactSchedule,
                 options: Optional[QoptOptions] = None):
        T = scenario.T
        if schedule.T != T or kin.T != T:
            raise QoptError("schedule, kinematics and scenario horizons differ")
        if schedule.z.shape[1:] != (len(scenario.robots), scenario.object.n_surfaces):
            raise QoptError("schedule does not match the scenario's robots and surfaces")
        self.sc, self.kin, self.schedule = scenario, kin, schedule
        self.opt = options or QoptOptions()
        obj = scenario.object
        self.T, self.h = T, scenario.step
        self.Nr, self.Nv = len(scenario.robots), obj.n_vertices
        self.surface = schedule.surface()
        self.contact_map = kin.contact_map.copy()
        self.hs = kin.halfspace.copy()
        com = np.asarray(obj.com)
        self.com = com

        # index layout
        self.nq = 3 * (T + 1)
        self.o_qd = self.nq
        self.o_p = self.o_qd + 3 * T
        n = self.o_p + 2 * (T + 1) * self.Nr
        self.att = [(t, i, int(self.surface[t, i])) for t in range(T + 1) for i in range(self.Nr)
                    if self.surface[t, i] >= 0]
        self.att_index = {(t, i): j for j, (t, i, _) in enumerate(self.att)}
        self.o_att = n
        n += 3 * len(self.att)
        self.ext = [(t, v, int(self.hs[v, t])) for t in range(T + 1) for v in range(self.Nv)
                    if self.contact_map[v, t]]
        self.ext_index = {(t, v): e for e, (t, v, _) in enumerate(self.ext)}
        self.o_ext = n
        n += 2 * len(self.ext)
        self.n = n

        # per-attachment constants
        S = obj.surfaces
        self.a_att = np.array([S[p].a for _, _, p in self.att]).reshape(-1, 2)
        self.n_att = np.array([S[p].normal for _, _, p in self.att]).reshape(-1, 2)
        self.tau_att = np.array([S[p].tangent for _, _, p in self.att]).reshape(-1, 2)
        self.L_att = np.array([S[p].length for _, _, p in self.att])
        self.mu_att = np.array([scenario.robots[i].mu for _, i, _ in self.att])
        arm = self.a_att - com
        self.c1_att = arm[:, 0] * (-self.n_att[:, 1]) - arm[:, 1] * (-self.n_att[:, 0])
        self.c2_att = arm[:, 0] * self.tau_att[:, 1] - arm[:, 1] * self.tau_att[:, 0]
        self.t_att = np.array([t for t, _, _ in self.att], dtype=int)
        # robot complementarity pairs: same robot, same surface at t and t+1
        self.rpairs = [(j, self.att_index[t + 1, i]) for j, (t, i, p) in enumerate(self.att)
                       if t < T and (t + 1, i) in self.att_index and self.surface[t + 1, i] == p]

        env = scenario.env
        self.vb = obj.vertex_array
        self.n_ext = np.array([env.halfspaces[k][0] for _, _, k in self.ext]).reshape(-1, 2)
        self.d_ext = np.array([env.halfspaces[k][1] for _, _, k in self.ext])
        self.tau_ext = np.array([env.tangent(k) for _, _, k in self.ext]).reshape(-1, 2)
        self.mu_ext = np.array([obj.mu_env[v] for _, v, _ in self.ext])
        self.t_ext = np.array([t for t, _, _ in self.ext], dtype=int)
        self.v_ext = np.array([v for _, v, _ in self.ext], dtype=int)
        self.epairs = [e for e, (t, v, k) in enumerate(self.ext) if t < T]
        # inactive (t, v, halfspace) non-penetration rows
        self.sdf_rows = [(t, v, k) for t in range(T + 1) for v in range(self.Nv)
                         for k in range(len(env.halfspaces))
                         if not (self.contact_map[v, t] and self.hs[v, t] == k)]
        # robustness radius per step: nearest active vertex to the COM
        self.radius = np.zeros(T + 1)
        for t in range(T + 1):
            act = np.flatnonzero(self.contact_map[:, t])
            if act.size:
                self.radius[t] = np.min(np.linalg.norm(self.vb[act] - com, axis=1))
        self.qref = scenario.reference()
        self.W = np.asarray(scenario.tracking_weights, dtype=float)
        self._bounds()
        self._precompute()

    # --- indices --------------------------------------------------------------
    def iq(self, t, k):
        return 3 * t + k

    def iqd(self, t, k):
        return self.o_qd + 3 * t + k

    def ip(self, t, i, k):
        return self.o_p + 2 * (t * self.Nr + i) + k

    def ia(self, j, k):
        """k = 0 alpha, 1 lam_n, 2 lam_s."""
        return self.o_att + 3 * j + k

    def ie(self, e, k):
        """k = 0 f_n, 1 f_s."""
        return self.o_ext + 2 * e + k

    def _bounds(self):
        sc, T = self.sc, self.T
        lo, hi = np.full(self.n, -np.inf), np.full(self.n, np.inf)
        pb = sc.pose_bounds
        for t in range(T + 1):
            lo[3 * t:3 * t + 3], hi[3 * t:3 * t + 3] = pb.lower, pb.upper
        for t in range(T):
            s = slice(self.iqd(t, 0), self.iqd(t, 0) + 3)
            lo[s], hi[s] = pb.rate_lower, pb.rate_upper
        F, Fe = sc.fmax_robot, sc.fmax_env
        for j in range(len(self.att)):
            lo[self.ia(j, 0)], hi[self.ia(j, 0)] = 0.0, self.L_att[j]
            lo[self.ia(j, 1)], hi[self.ia(j, 1)] = 0.0, F
            lo[self.ia(j, 2)], hi[self.ia(j, 2)] = -self.mu_att[j] * F, self.mu_att[j] * F
        for e in range(len(self.ext)):
            lo[self.ie(e, 0)], hi[self.ie(e, 0)] = 0.0, Fe
            lo[self.ie(e, 1)], hi[self.ie(e, 1)] = -self.mu_ext[e] * Fe, self.mu_ext[e] * Fe
        self.lower, self.upper = lo, hi

    # --- unpacking -------------------------------------------------------------
    def split(self, x):
        T, Nr = self.T, self.Nr
        q = x[:self.nq].reshape(T + 1, 3)
        qd = x[self.o_qd:self.o_p].reshape(T, 3)
        p = x[self.o_p:self.o_att].reshape(T + 1, Nr, 2)
        att = x[self.o_att:self.o_ext].reshape(-1, 3)
        ext = x[self.o_ext:].reshape(-1, 2)
        return q, qd, p, att, ext

    def initial_point(self) -> np.ndarray:
        sch, T = self.schedule, self.T
        x = np.zeros(self.n)
        q = sch.poses.copy()
        x[:self.nq] = q.ravel()
        x[self.o_qd:self.o_p] = (np.diff(q, axis=0) / self.h).ravel()
        x[self.o_p:self.o_att] = sch.p_world.ravel()
        for j, (t, i, p) in enumerate(self.att):
            x[self.ia(j, 0)] = sch.alpha[t, i, p]
            x[self.ia(j, 1)], x[self.ia(j, 2)] = sch.lam[t, i, p]
        for e, (t, v, _) in enumerate(self.ext):
            x[self.ie(e, 0)], x[self.ie(e, 1)] = sch.f_local[t, v]
        return np.clip(x, self.lower, self.upper)

    # --- objective ----------------------------------------------------------------
    def objective(self, x):
        q = x[:self.nq].reshape(self.T + 1, 3)
        d = q - self.qref
        val = float(np.sum(self.W * d * d))
        if self.opt.robustness_weight:
            val -= self.opt.robustness_weight * float(np.sum(self.radius * np.cos(q[:, 2]) ** 2))
        return val

    def objective_grad(self, x):
        q = x[:self.nq].reshape(self.T + 1, 3)
        g = np.zeros(self.n)
        gq = 2 * self.W * (q - self.qref)
        if self.opt.robustness_weight:
            gq[:, 2] += self.opt.robustness_weight * self.radius * np.sin(2 * q[:, 2])
        g[:self.nq] = gq.ravel()
        return g

    # --- vectorized residuals -------------------------------------------------------
    def _precompute(self):
        T, h, sc = self.T, self.h, self.sc
        Na, Ne = len(self.att), len(self.ext)
        ar = np.arange
        self.iqt_att = 3 * self.t_att + 2
        self.i_al = self.o_att + 3 * ar(Na)
        self.i_ln, self.i_ls = self.i_al + 1, self.i_al + 2
        self.i_fn = self.o_ext + 2 * ar(Ne)
        self.i_fs = self.i_fn + 1
        self.i_att_robot = np.array([i for _, i, _ in self.att], dtype=int)
        self.vb_ext = self.vb[self.v_ext] if Ne else np.zeros((0, 2))
        self.r_ext = self.vb_ext - self.com
        # row offsets of the equality families
        self.r_force = 3 * T
        self.r_mom = self.r_force + 2 * (T + 1)
        self.r_mem = self.r_mom + (T + 1)
        self.r_act = self.r_mem + 2 * Na
        self.n_eq = self.r_act + Ne
        # constant equality entries: dynamics and extrinsic force terms
        rows, cols, vals = [], [], []
        for t in range(T):
            for k in range(3):
                r = 3 * t + k
                rows += [r, r, r]
                cols += [self.iq(t + 1, k), self.iq(t, k), self.iqd(t, k)]
                vals += [1.0, -1.0, -h]
        for e, (t, _, _) in enumerate(self.ext):
            for k in range(2):
                rows += [self.r_force + 2 * t + k] * 2
                cols += [self.i_fn[e], self.i_fs[e]]
                vals += [self.n_ext[e, k], self.tau_ext[e, k]]
        self._eq_const = (np.array(rows, dtype=int), np.array(cols, dtype=int), np.array(vals, dtype=float))

        # inequalities: velocity rows and cones are linear
        rows, cols, vals = [], [], []
        lo_off = []
        r = 0
        for t in range(T):
            for i, rob in enumerate(sc.robots):
                for k in range(2):
                    for sgn, off in ((1.0, -rob.vel_lb[k]), (-1.0, rob.vel_ub[k])):
                        rows += [r, r]
                        cols += [self.ip(t + 1, i, k), self.ip(t, i, k)]
                        vals += [sgn / h, -sgn / h]
                        lo_off.append(off)
                        r += 1
        for j in range(Na):
            for sgn in (-1.0, 1.0):
                rows += [r, r]
                cols += [self.i_ln[j], self.i_ls[j]]
                vals += [self.mu_att[j], sgn]
                lo_off.append(0.0)
                r += 1
        for e in range(Ne):
            for sgn in (-1.0, 1.0):
                rows += [r, r]
                cols += [self.i_fn[e], self.i_fs[e]]
                vals += [self.mu_ext[e], sgn]
                lo_off.append(0.0)
                r += 1
        self.n_lin = r
        self._lin = (np.array(rows, dtype=int), np.array(cols, dtype=int), np.array(vals, dtype=float))
        A = np.zeros((r, self.n))
        np.add.at(A, (self._lin[0], self._lin[1]), self._lin[2])
        self._lin_A, self._lin_b = A, np.array(lo_off)
        # non-penetration rows
        env = sc.env
        self.s_t = np.array([t for t, _, _ in self.sdf_rows], dtype=int)
        self.s_vb = np.array([self.vb[v] for _, v, _ in self.sdf_rows]).reshape(-1, 2)
        self.s_n = np.array([env.halfspaces[k][0] for _, _, k in self.sdf_rows]).reshape(-1, 2)
        self.s_d = np.array([env.halfspaces[k][1] for _, _, k in self.sdf_rows])
        self.r_sdf = self.n_lin
        self.r_rc = self.r_sdf + len(self.sdf_rows)
        self.rp0 = np.array([a for a, _ in self.rpairs], dtype=int)
        self.rp1 = np.array([b for _, b in self.rpairs], dtype=int)
        self.r_ec = self.r_rc + 3 * len(self.rpairs)
        self.ep = np.array(self.epairs, dtype=int)
        self.n_ineq = self.r_ec + 3 * len(self.epairs)
        self._cache_eq = (None, None)
        self._cache_in = (None, None, None)

    @staticmethod
    def _rot_apply(c, s, v):
        """Row-wise R(theta) v for arrays of cos, sin and vectors (N, 2)."""
        return np.column_stack([c * v[:, 0] - s * v[:, 1], s * v[:, 0] + c * v[:, 1]])

    @staticmethod
    def _drot_apply(c, s, v):
        return np.column_stack([-s * v[:, 0] - c * v[:, 1], c * v[:, 0] - s * v[:, 1]])

    def _eval_eq(self, x):
        key = x.tobytes()
        if self._cache_eq[0] == key:
            return self._cache_eq[1]
        T, h = self.T, self.h
        q, qd, p, att, ext = self.split(x)
        res = np.zeros(self.n_eq)
        R0, C0, V0 = self._eq_const
        rows, cols, vals = [R0], [C0], [V0]
        res[:3 * T] = (q[1:] - q[:-1] - h * qd).ravel()

        force = np.tile(np.asarray(self.sc.weight, dtype=float), (T + 1, 1))
        if len(self.att):
            ta = self.t_att
            th = q[ta, 2]
            c, s = np.cos(th), np.sin(th)
            al, ln, ls = att[:, 0], att[:, 1], att[:, 2]
            fb = -ln[:, None] * self.n_att + ls[:, None] * self.tau_att
            Rfb = self._rot_apply(c, s, fb)
            dRfb = self._drot_apply(c, s, fb)
            Rn = self._rot_apply(c, s, self.n_att)
            Rt = self._rot_apply(c, s, self.tau_att)
            np.add.at(force, ta, Rfb)
            for k in range(2):
                rr = self.r_force + 2 * ta + k
                rows += [rr, rr, rr]
                cols += [self.iqt_att, self.i_ln, self.i_ls]
                vals += [dRfb[:, k], -Rn[:, k], Rt[:, k]]
            # moment
            mom_att = self.c1_att * ln + self.c2_att * ls + al * ln
            rr = self.r_mom + ta
            rows += [rr, rr, rr]
            cols += [self.i_al, self.i_ln, self.i_ls]
            vals += [ln, self.c1_att + al, self.c2_att.astype(float)]
            # membership
            local = self.a_att + al[:, None] * self.tau_att
            mem = p[ta, self.i_att_robot] - q[ta, :2] - self._rot_apply(c, s, local)
            dloc = self._drot_apply(c, s, local)
            res[self.r_mem:self.r_act] = mem.ravel()
            j = np.arange(len(self.att))
            for k in range(2):
                rr = self.r_mem + 2 * j + k
                rows += [rr, rr, rr, rr]
                cols += [self.o_p + 2 * (ta * self.Nr + self.i_att_robot) + k, 3 * ta + k, self.iqt_att, self.i_al]
                vals += [np.ones(len(j)), -np.ones(len(j)), -dloc[:, k], -Rt[:, k]]
        else:
            mom_att = np.zeros(0)
        mom = np.zeros(T + 1)
        np.add.at(mom, self.t_att, mom_att)
        if len(self.ext):
            te = self.t_ext
            th = q[te, 2]
            c, s = np.cos(th), np.sin(th)
            fn, fs = ext[:, 0], ext[:, 1]
            fw = fn[:, None] * self.n_ext + fs[:, None] * self.tau_ext
            np.add.at(force, te, fw)
            arm = self._rot_apply(c, s, self.r_ext)
            darm = self._drot_apply(c, s, self.r_ext)
            np.add.at(mom, te, _cross(arm, fw))
            rr = self.r_mom + te
            rows += [rr, rr, rr]
            cols += [3 * te + 2, self.i_fn, self.i_fs]
            vals += [_cross(darm, fw), _cross(arm, self.n_ext), _cross(arm, self.tau_ext)]
            # active contacts on their halfspace
            wv = self._rot_apply(c, s, self.vb_ext)
            dwv = self._drot_apply(c, s, self.vb_ext)
            res[self.r_act:] = np.sum(self.n_ext * (q[te, :2] + wv), axis=1) - self.d_ext
            rr = self.r_act + np.arange(len(self.ext))
            rows += [rr, rr, rr]
            cols += [3 * te, 3 * te + 1, 3 * te + 2]
            vals += [self.n_ext[:, 0], self.n_ext[:, 1], np.sum(self.n_ext * dwv, axis=1)]
        res[self.r_force:self.r_mom] = force.ravel()
        res[self.r_mom:self.r_mem] = mom
        J = np.zeros((self.n_eq, self.n))
        np.add.at(J, (np.concatenate(rows), np.concatenate(cols)), np.concatenate(vals))
        self._cache_eq = (key, (res, J))
        return res, J

    def eq(self, x):
        return self._eval_eq(np.asarray(x, dtype=float))[0]

    def eq_jac(self, x):
        return self._eval_eq(np.asarray(x, dtype=float))[1]

    def _comp(self, res, rows, cols, vals, r0, eps, mu, gn, gs, vel, ign, igs, dv):
        """Three complementarity rows per pair; ``dv`` lists (cols, d vel / d col)."""
        sm = np.sqrt(gs * gs + SMOOTH_DELTA)
        c = mu * gn - sm
        k = np.arange(len(vel))
        r = r0 + 3 * k
        res[r] = eps - c * vel
        res[r + 1] = eps + c * vel
        res[r + 2] = eps - gs * vel
        for sgn, rr in ((-1.0, r), (1.0, r + 1)):
            rows += [rr, rr]
            cols += [ign, igs]
            vals += [sgn * mu * vel, -sgn * gs / sm * vel]
            for col, d in dv:
                rows.append(rr)
                cols.append(col)
                vals.append(sgn * c * d)
        rows.append(r + 2)
        cols.append(igs)
        vals.append(-vel)
        for col, d in dv:
            rows.append(r + 2)
            cols.append(col)
            vals.append(-gs * d)

    def _eval_ineq(self, x, eps):
        key = x.tobytes()
        if self._cache_in[0] == key and self._cache_in[1] == eps:
            return self._cache_in[2]
        h = self.h
        q, qd, p, att, ext = self.split(x)
        res = np.zeros(self.n_ineq)
        res[:self.n_lin] = self._lin_A @ x + self._lin_b
        rows, cols, vals = [self._lin[0]], [self._lin[1]], [self._lin[2]]
        if len(self.sdf_rows):
            ts = self.s_t
            c, s = np.cos(q[ts, 2]), np.sin(q[ts, 2])
            wv = self._rot_apply(c, s, self.s_vb)
            dwv = self._drot_apply(c, s, self.s_vb)
            res[self.r_sdf:self.r_rc] = np.sum(self.s_n * (q[ts, :2] + wv), axis=1) - self.s_d
            rr = self.r_sdf + np.arange(len(ts))
            rows += [rr, rr, rr]
            cols += [3 * ts, 3 * ts + 1, 3 * ts + 2]
            vals += [self.s_n[:, 0], self.s_n[:, 1], np.sum(self.s_n * dwv, axis=1)]
        if len(self.rpairs):
            j0, j1 = self.rp0, self.rp1
            vel = -(att[j1, 0] - att[j0, 0]) / h
            dv = [(self.i_al[j1], np.full(len(j0), -1.0 / h)), (self.i_al[j0], np.full(len(j0), 1.0 / h))]
            self._comp(res, rows, cols, vals, self.r_rc, eps, self.mu_att[j0], att[j0, 1], att[j0, 2],
                       vel, self.i_ln[j0], self.i_ls[j0], dv)
        if len(self.epairs):
            e = self.ep
            t = self.t_ext[e]
            vb, tau = self.vb_ext[e], self.tau_ext[e]
            c0, s0 = np.cos(q[t, 2]), np.sin(q[t, 2])
            c1, s1 = np.cos(q[t + 1, 2]), np.sin(q[t + 1, 2])
            e0 = q[t, :2] + self._rot_apply(c0, s0, vb)
            e1 = q[t + 1, :2] + self._rot_apply(c1, s1, vb)
            vel = np.sum(tau * (e1 - e0), axis=1) / h
            d0 = np.sum(tau * self._drot_apply(c0, s0, vb), axis=1) / h
            d1 = np.sum(tau * self._drot_apply(c1, s1, vb), axis=1) / h
            dv = [(3 * (t + 1), tau[:, 0] / h), (3 * (t + 1) + 1, tau[:, 1] / h), (3 * (t + 1) + 2, d1),
                  (3 * t, -tau[:, 0] / h), (3 * t + 1, -tau[:, 1] / h), (3 * t + 2, -d0)]
            self._comp(res, rows, cols, vals, self.r_ec, eps, self.mu_ext[e], ext[e, 0], ext[e, 1],
                       vel, self.i_fn[e], self.i_fs[e], dv)
        J = np.zeros((self.n_ineq, self.n))
        np.add.at(J, (np.concatenate(rows), np.concatenate(cols)), np.concatenate(vals))
        self._cache_in = (key, eps, (res, J))
        return res, J

    def ineq(self, x, eps):
        return self._eval_ineq(np.asarray(x, dtype=float), eps)[0]

    def ineq_jac(self, x, eps):
        return self._eval_ineq(np.asarray(x, dtype=float), eps)[1]

    # --- assembly -------------------------------------------------------------------
    def nlp(self, eps: float, x0=None) -> nlp.NlpProblem:
        return nlp.NlpProblem(
            n=self.n, objective=self.objective, eq_residuals=self.eq,
            ineq_residuals=lambda x: self.ineq(x, eps), lower=self.lower, upper=self.upper,
            x0=self.initial_point() if x0 is None else x0, objective_grad=self.objective_grad,
            eq_jacobian=self.eq_jac, ineq_jacobian=lambda x: self.ineq_jac(x, eps),
        )

    def trajectory(self, x, eps=0.0) -> Trajectory:
        sc, T = self.sc, self.T
        q, qd, p, att, ext = self.split(x)
        Np, Nr, Nv = sc.object.n_surfaces, self.Nr, self.Nv
        lam = np.zeros((T + 1, Nr, Np, 2))
        alpha = np.zeros((T + 1, Nr))
        u = np.zeros((T + 1, Nr, 2))
        for j, (t, i, s) in enumerate(self.att):
            alpha[t, i] = att[j, 0]
            lam[t, i, s] = att[j, 1:]
            u[t, i] = rot(q[t, 2]) @ (-att[j, 1] * self.n_att[j] + att[j, 2] * self.tau_att[j])
        f = np.zeros((T + 1, Nv, 2))
        f_local = np.zeros((T + 1, Nv, 2))
        for e, (t, v, _) in enumerate(self.ext):
            f_local[t, v] = ext[e]
            f[t, v] = ext[e, 0] * self.n_ext[e] + ext[e, 1] * self.tau_ext[e]
        return Trajectory(
            poses=q.copy(), rates=qd.copy(), p=p.copy(), u=u, lam=lam, alpha=alpha,
            surface=self.surface.copy(), f=f, f_local=f_local, contact_map=self.contact_map.copy(),
            halfspace=self.hs.copy(), step=self.h, eps=eps, objective=self.objective(x),
        )

    def random_point(self, rng: np.random.Generator) -> np.ndarray:
        """A random point in the box near the initial point (gradient checks)."""
        x0 = self.initial_point()
        lo = np.where(np.isfinite(self.lower), self.lower, x0 - 1.0)
        hi = np.where(np.isfinite(self.upper), self.upper, x0 + 1.0)
        x = x0 + 0.1 * rng.standard_normal(self.n) * np.minimum(hi - lo, 1.0)
        return np.clip(x, lo, hi)


def _cross(a, b):
    return a[:, 0] * b[:, 1] - a[:, 1] * b[:, 0]


def build_qopt(scenario: Scenario, kin: KinematicsSolution, schedule: ContactSchedule,
               options: Optional[QoptOptions] = None, **kw) -> QoptProblem:
    if options is None:
        options = QoptOptions(**kw)
    return QoptProblem(scenario, kin, schedule, options)


def solve_qopt(problem: QoptProblem, eps_schedule: Optional[Sequence[float]] = None,
               config: Optional[nlp.NlpConfig] = None) -> Union[Trajectory, InfeasibilityReport]:
    """Continuation over the eps schedule, warm-starting every stage."""
    start = time.perf_counter()
    schedule = tuple(eps_schedule or problem.opt.eps_schedule)
    base = config or nlp.NlpConfig(feas_tol=problem.opt.feas_tol, max_outer=problem.opt.max_outer,
                                   time_limit=problem.opt.time_limit, method=problem.opt.method)
    x = problem.initial_point()
    mu_eq = mu_in = None
    stages = []
    active = problem.schedule.active_set()
    res = None
    for k, eps in enumerate(schedule):
        remaining = base.time_limit - (time.perf_counter() - start)
        cfg = nlp.NlpConfig(**{**base.__dict__, "time_limit": remaining})
        res = nlp.solve(problem.nlp(eps, x), cfg, mu_eq, mu_in)
        if not res.converged and cfg.method != "auglag":
            remaining = base.time_limit - (time.perf_counter() - start)
            if remaining > 0:
                retry = nlp.solve(problem.nlp(eps, x), nlp.NlpConfig(**{**cfg.__dict__, "method": "auglag",
                                                                      "time_limit": remaining}), mu_eq, mu_in)
                retry.elapsed += res.elapsed
                retry.inner_iterations += res.inner_iterations
                res = retry
        stages.append({"eps": eps, "status": res.status.value, "outer": res.outer_iterations,
                       "inner": res.inner_iterations, "max_violation": res.max_violation,
                       "elapsed": res.elapsed})
        if res.status is nlp.NlpStatus.DIVERGED or (k == len(schedule) - 1 and not res.converged):
            return InfeasibilityReport(active, eps, res.status.value, res.max_violation, res.message,
                                       stages, time.perf_counter() - start)
        x, mu_eq, mu_in = res.x, res.eq_multipliers, res.ineq_multipliers
    traj = problem.trajectory(x, schedule[-1])
    traj.stages = stages
    traj.residuals = verify_trajectory(problem.sc, traj)
    traj.elapsed = time.perf_counter() - start
    if not trajectory_ok(traj):
        return InfeasibilityReport(active, schedule[-1], "VerificationFailed", max(traj.residuals.values()),
                                   "exact residuals above tolerance", stages, traj.elapsed)
    return traj


# ---------------------------------------------------------------------------
# independent verification

RESIDUAL_TOL = 1e-6


def verify_trajectory(scenario: Scenario, traj: Trajectory) -> Dict[str, float]:
    """Exact residuals per constraint family (max over steps and contacts)."""
    obj, env = scenario.object, scenario.env
    T, h = traj.T, traj.step
    q = traj.poses
    out = {}
    out["dynamics"] = float(np.max(np.abs(q[1:] - q[:-1] - h * traj.rates), initial=0.0))
    fb = traj.u.sum(axis=1) + traj.f.sum(axis=1) + np.asarray(scenario.weight)
    out["force_balance"] = float(np.max(np.linalg.norm(fb, axis=1)))
    mom = np.zeros(T + 1)
    for t in range(T + 1):
        R = rot(q[t, 2])
        c = R @ np.asarray(obj.com) + q[t, :2]
        for i in range(traj.p.shape[1]):
            mom[t] += cross2(traj.p[t, i] - c, traj.u[t, i])
        for v in range(obj.n_vertices):
            e = R @ np.asarray(obj.vertices[v]) + q[t, :2]
            mom[t] += cross2(e - c, traj.f[t, v])
    out["moment_balance"] = float(np.max(np.abs(mom)))

    cone = 0.0
    member = 0.0
    for t in range(T + 1):
        R = rot(q[t, 2])
        for i, rob in enumerate(scenario.robots):
            s = traj.surface[t, i]
            for p in range(obj.n_surfaces):
                ln, ls = traj.lam[t, i, p]
                if p != s:
                    cone = max(cone, abs(ln), abs(ls))  # unassigned surfaces carry no force
                    continue
                cone = max(cone, abs(ls) - rob.mu * ln, -ln)
            if s >= 0:
                surf = obj.surfaces[s]
                local = R.T @ (traj.p[t, i] - q[t, :2])
                a = np.asarray(surf.a)
                al = float(np.clip((local - a) @ surf.tangent, 0.0, surf.length))
                member = max(member, float(np.linalg.norm(local - surf.point(al))))
            elif np.any(traj.u[t, i] != 0):
                cone = max(cone, float(np.max(np.abs(traj.u[t, i]))))
        for v in range(obj.n_vertices):
            fn, fs = traj.f_local[t, v]
            if traj.contact_map[v, t]:
                cone = max(cone, abs(fs) - obj.mu_env[v] * fn, -fn)
            else:
                cone = max(cone, abs(fn), abs(fs))
    out["friction_cone"] = cone
    out["surface_membership"] = member

    pen = 0.0
    contact = 0.0
    for t in range(T + 1):
        if env.halfspaces:
            d = halfspace_distances(env, vertices_world(obj, q[t]))
            pen = max(pen, float(np.max(-d.min(axis=1))))
            for v in np.flatnonzero(traj.contact_map[:, t]):
                contact = max(contact, abs(float(d[v, traj.halfspace[v, t]])))
    out["non_penetration"] = max(pen, 0.0)
    out["contact"] = contact

    vel = 0.0
    for t in range(T):
        for i, rob in enumerate(scenario.robots):
            rate = (traj.p[t + 1, i] - traj.p[t, i]) / h
            vel = max(vel, float(np.max(np.asarray(rob.vel_lb) - rate)), float(np.max(rate - np.asarray(rob.vel_ub))))
    out["robot_velocity"] = max(vel, 0.0)
    out["complementarity"] = complementarity_residual(scenario, traj)
    return out


def _contact_velocities(scenario: Scenario, traj: Trajectory):
    """Yield (mu, g_n, g_s, v) for every contact with a defined tangential velocity."""
    obj, env = scenario.object, scenario.env
    T, h, q = traj.T, traj.step, traj.poses
    for t in range(T):
        for i, rob in enumerate(scenario.robots):
            s = traj.surface[t, i]
            if s >= 0 and traj.surface[t + 1, i] == s:
                v = -(traj.alpha[t + 1, i] - traj.alpha[t, i]) / h
                yield rob.mu, traj.lam[t, i, s, 0], traj.lam[t, i, s, 1], v
        for vtx in np.flatnonzero(traj.contact_map[:, t]):
            k = traj.halfspace[vtx, t]
            tau = env.tangent(k)
            vb = np.asarray(obj.vertices[vtx])
            e0 = rot(q[t, 2]) @ vb + q[t, :2]
            e1 = rot(q[t + 1, 2]) @ vb + q[t + 1, :2]
            yield obj.mu_env[vtx], traj.f_local[t, vtx, 0], traj.f_local[t, vtx, 1], tau @ (e1 - e0) / h


def complementarity_residual(scenario: Scenario, traj: Trajectory) -> float:
    """max over contacts of max(|c v|, g_s v) with the exact cone margin c."""
    worst = 0.0
    for mu, gn, gs, v in _contact_velocities(scenario, traj):
        c = mu * gn - abs(gs)
        worst = max(worst, abs(c * v), gs * v)
    return worst


def complementarity_gap(scenario: Scenario, traj: Trajectory) -> float:
    """max over contacts of min(cone margin, |tangential velocity|)."""
    worst = 0.0
    for mu, gn, gs, v in _contact_velocities(scenario, traj):
        worst = max(worst, min(abs(mu * gn - abs(gs)), abs(v)))
    return worst


def trajectory_ok(traj: Trajectory, tol: float = RESIDUAL_TOL) -> bool:
    """Every family within ``tol``; complementarity within the final eps (plus tol)."""
    for name, val in traj.residuals.items():
        limit = traj.eps + tol if name == "complementarity" else tol
        if not val <= limit:
            return False
    return True


def robustness_score(scenario: Scenario, traj: Trajectory) -> float:
    """sum_t R_t cos(theta_t)^2 with R_t the nearest active extrinsic contact to the COM."""
    com = np.asarray(scenario.object.com)
    vb = scenario.object.vertex_array
    total = 0.0
    for t in range(traj.T + 1):
        act = np.flatnonzero(traj.contact_map[:, t])
        if act.size:
            total += float(np.min(np.linalg.norm(vb[act] - com, axis=1))) * math.cos(traj.poses[t, 2]) ** 2
    return total
