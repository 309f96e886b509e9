"""Kinematic trajectory optimization and extrinsic contact extraction."""
from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import nlp
from .scene import Scenario, drot, halfspace_distances, rot, vertices_world

CONTACT_TOL = 1e-4  # m
SLIP_TOL = 1e-4  # m/s


class KoptError(RuntimeError):
    def __init__(self, message, result: nlp.NlpResult):
        super().__init__(message)
        self.result = result


@dataclass
class KinematicsSolution:
    poses: np.ndarray  # (T+1, 3)
    rates: np.ndarray  # (T, 3)
    contact_map: np.ndarray  # (N_v, T+1) bool
    slip_map: np.ndarray  # (N_v, T+1) bool
    halfspace: np.ndarray  # (N_v, T+1) index of the touched halfspace, -1 when free
    slip_velocity: np.ndarray  # (N_v, T+1) tangential vertex velocity along that halfspace
    step: float
    elapsed: float = 0.0

    @property
    def T(self) -> int:
        return len(self.poses) - 1

    def to_dict(self) -> dict:
        return {
            "poses": self.poses.tolist(),
            "rates": self.rates.tolist(),
            "contact_map": self.contact_map.astype(int).tolist(),
            "slip_map": self.slip_map.astype(int).tolist(),
            "halfspace": self.halfspace.tolist(),
            "slip_velocity": self.slip_velocity.tolist(),
            "step": self.step,
            "elapsed": self.elapsed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "KinematicsSolution":
        return cls(
            poses=np.asarray(d["poses"], dtype=float),
            rates=np.asarray(d["rates"], dtype=float).reshape(-1, 3),
            contact_map=np.asarray(d["contact_map"], dtype=bool),
            slip_map=np.asarray(d["slip_map"], dtype=bool),
            halfspace=np.asarray(d["halfspace"], dtype=int),
            slip_velocity=np.asarray(d["slip_velocity"], dtype=float),
            step=float(d["step"]),
            elapsed=float(d.get("elapsed", 0.0)),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


def _layout(T):
    nq = 3 * (T + 1)
    return nq, nq + 3 * T


def build_kopt(scenario: Scenario) -> nlp.NlpProblem:
    """Pose-tracking NLP over [q_0..q_T, qdot_0..qdot_{T-1}].

    Non-penetration is written as one row per (step, vertex, halfspace); the
    feasible set equals the per-vertex minimum being nonnegative, and every
    row stays smooth.
    """
    T, h = scenario.T, scenario.step
    nq, n = _layout(T)
    W = np.asarray(scenario.tracking_weights, dtype=float)
    qref = scenario.reference()
    verts = scenario.object.vertex_array
    normals, offsets = scenario.env.normals, scenario.env.offsets
    H, V = len(offsets), len(verts)

    def split(z):
        return z[:nq].reshape(T + 1, 3), z[nq:].reshape(T, 3)

    def objective(z):
        q, _ = split(z)
        d = q - qref
        return float(np.sum(W * d * d))

    def objective_grad(z):
        q, _ = split(z)
        g = np.zeros(n)
        g[:nq] = (2 * W * (q - qref)).ravel()
        return g

    # dynamics rows are linear: q_{t+1} - q_t - h qdot_t
    Jeq = np.zeros((3 * T, n))
    for t in range(T):
        for k in range(3):
            r = 3 * t + k
            Jeq[r, 3 * (t + 1) + k] = 1.0
            Jeq[r, 3 * t + k] = -1.0
            Jeq[r, nq + 3 * t + k] = -h

    def eq(z):
        q, qd = split(z)
        return (q[1:] - q[:-1] - h * qd).ravel()

    def ineq(z):
        q, _ = split(z)
        rows = []
        for t in range(T + 1):
            rows.append(halfspace_distances(scenario.env, vertices_world(scenario.object, q[t])).ravel())
        return np.concatenate(rows) if rows else np.zeros(0)

    def ineq_jac(z):
        q, _ = split(z)
        J = np.zeros(((T + 1) * V * H, n))
        for t in range(T + 1):
            dR = drot(q[t, 2])
            dv = verts @ dR.T  # d(vertex_world)/dtheta, (V, 2)
            for v in range(V):
                for k in range(H):
                    r = (t * V + v) * H + k
                    J[r, 3 * t] = normals[k, 0]
                    J[r, 3 * t + 1] = normals[k, 1]
                    J[r, 3 * t + 2] = normals[k] @ dv[v]
        return J

    pb = scenario.pose_bounds
    lower = np.concatenate([np.tile(pb.lower, T + 1), np.tile(pb.rate_lower, T)])
    upper = np.concatenate([np.tile(pb.upper, T + 1), np.tile(pb.rate_upper, T)])
    qd0 = np.diff(qref, axis=0) / h
    x0 = np.clip(np.concatenate([qref.ravel(), qd0.ravel()]), lower, upper)
    return nlp.NlpProblem(
        n=n, objective=objective, eq_residuals=eq, ineq_residuals=ineq, lower=lower, upper=upper,
        x0=x0, objective_grad=objective_grad, eq_jacobian=lambda z: Jeq, ineq_jacobian=ineq_jac,
    )


def contact_maps(scenario: Scenario, poses: np.ndarray, contact_tol: float = CONTACT_TOL,
                 slip_tol: float = SLIP_TOL):
    """Contact map A, slip map B, touched halfspace and tangential vertex speed.

    Slip at step t uses the forward difference of the vertex position from
    t to t+1; the final step never slips.
    """
    T, h = len(poses) - 1, scenario.step
    V = scenario.object.n_vertices
    A = np.zeros((V, T + 1), dtype=bool)
    B = np.zeros((V, T + 1), dtype=bool)
    hs = np.full((V, T + 1), -1, dtype=int)
    vel = np.zeros((V, T + 1))
    if not scenario.env.halfspaces:
        return A, B, hs, vel
    world = np.stack([vertices_world(scenario.object, q) for q in poses])  # (T+1, V, 2)
    for t in range(T + 1):
        d = halfspace_distances(scenario.env, world[t])  # (V, H)
        k = np.argmin(np.abs(d), axis=1)
        close = np.abs(d[np.arange(V), k]) <= contact_tol
        A[:, t] = close
        hs[:, t] = np.where(close, k, -1)
    for t in range(T):
        for v in range(V):
            if A[v, t]:
                tangent = scenario.env.tangent(hs[v, t])
                vel[v, t] = tangent @ (world[t + 1, v] - world[t, v]) / h
                B[v, t] = abs(vel[v, t]) > slip_tol
    return A, B, hs, vel


def solve_kopt(scenario: Scenario, config: Optional[nlp.NlpConfig] = None) -> KinematicsSolution:
    problem = build_kopt(scenario)
    cfg = config or nlp.NlpConfig(feas_tol=1e-9, opt_tol=1e-8)
    res = nlp.solve(problem, cfg)
    if not res.converged:
        raise KoptError(f"K-Opt did not converge: {res.message}", res)
    T = scenario.T
    nq = 3 * (T + 1)
    poses = res.x[:nq].reshape(T + 1, 3)
    rates = res.x[nq:].reshape(T, 3)
    A, B, hs, vel = contact_maps(scenario, poses)
    return KinematicsSolution(poses, rates, A, B, hs, vel, scenario.step, res.elapsed)


def kinematics_from_poses(scenario: Scenario, poses) -> KinematicsSolution:
    """Wrap a given pose sequence (e.g. from a test or a checkpoint)."""
    poses = np.asarray(poses, dtype=float)
    A, B, hs, vel = contact_maps(scenario, poses)
    rates = np.diff(poses, axis=0) / scenario.step
    return KinematicsSolution(poses, rates, A, B, hs, vel, scenario.step)
