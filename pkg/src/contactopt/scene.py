"""Planar geometry and problem instances.

Conventions used throughout the package:

* Object polygons are given counter-clockwise in the body frame.
* A contact surface is a polygon edge ``a -> b``.  Its tangent is
  ``(b - a) / length`` and its outward normal is the tangent rotated by
  -90 degrees, so that ``(normal, tangent)`` is a right-handed frame.
* The environment is an intersection of halfspaces ``{x : n . x >= d}``.
* Indices (vertices, surfaces, robots, time steps) are 0-based.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import jsonschema
import numpy as np

GRAVITY = (0.0, -9.81)


class ScenarioError(ValueError):
    """Raised for malformed or inconsistent scenario data."""


def wrap_angle(theta: float) -> float:
    """Map an angle to (-pi, pi]."""
    r = math.remainder(theta, 2.0 * math.pi)
    if r <= -math.pi:
        r += 2.0 * math.pi
    return r


def rot(theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s], [s, c]])


def drot(theta: float) -> np.ndarray:
    """Derivative of ``rot`` with respect to theta."""
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[-s, -c], [c, -s]])


def cross2(a, b) -> float:
    return a[0] * b[1] - a[1] * b[0]


@dataclass(frozen=True)
class Pose2:
    x: float
    y: float
    theta: float

    def __post_init__(self):
        object.__setattr__(self, "x", float(self.x))
        object.__setattr__(self, "y", float(self.y))
        object.__setattr__(self, "theta", wrap_angle(float(self.theta)))

    @classmethod
    def from_array(cls, q) -> "Pose2":
        return cls(q[0], q[1], q[2])

    def to_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.theta])

    @property
    def translation(self) -> np.ndarray:
        return np.array([self.x, self.y])

    def rotation(self) -> np.ndarray:
        return rot(self.theta)

    def apply(self, point) -> np.ndarray:
        """Map a body-frame point to the world frame."""
        return self.rotation() @ np.asarray(point, dtype=float) + self.translation

    def compose(self, other: "Pose2") -> "Pose2":
        t = self.apply(other.translation)
        return Pose2(t[0], t[1], self.theta + other.theta)

    def inverse(self) -> "Pose2":
        t = -(self.rotation().T @ self.translation)
        return Pose2(t[0], t[1], -self.theta)

    def __matmul__(self, other: "Pose2") -> "Pose2":
        return self.compose(other)


@dataclass(frozen=True)
class Surface:
    id: int
    a: tuple
    b: tuple
    outward_normal: tuple

    def __post_init__(self):
        a = np.asarray(self.a, dtype=float)
        b = np.asarray(self.b, dtype=float)
        n = np.asarray(self.outward_normal, dtype=float)
        length = float(np.linalg.norm(b - a))
        if not length > 0:
            raise ScenarioError(f"surface {self.id}: zero length")
        if abs(np.linalg.norm(n) - 1.0) > 1e-9:
            raise ScenarioError(f"surface {self.id}: normal is not unit length")
        tangent = (b - a) / length
        if abs(n @ tangent) > 1e-9:
            raise ScenarioError(f"surface {self.id}: normal not perpendicular to edge")
        if cross2(n, tangent) < 0:
            raise ScenarioError(
                f"surface {self.id}: normal points inward for edge a->b "
                "(list the edge counter-clockwise)"
            )
        object.__setattr__(self, "a", tuple(a))
        object.__setattr__(self, "b", tuple(b))
        object.__setattr__(self, "outward_normal", tuple(n))

    @classmethod
    def from_edge(cls, id: int, a, b) -> "Surface":
        a = np.asarray(a, dtype=float)
        b = np.asarray(b, dtype=float)
        t = (b - a) / np.linalg.norm(b - a)
        return cls(id, tuple(a), tuple(b), (t[1], -t[0]))

    @property
    def length(self) -> float:
        return float(np.linalg.norm(np.subtract(self.b, self.a)))

    @property
    def tangent(self) -> np.ndarray:
        return (np.asarray(self.b) - np.asarray(self.a)) / self.length

    @property
    def normal(self) -> np.ndarray:
        return np.asarray(self.outward_normal)

    def frame(self) -> np.ndarray:
        """Body-frame rotation whose columns are (outward normal, tangent)."""
        return np.column_stack([self.normal, self.tangent])

    def point(self, alpha: float) -> np.ndarray:
        """Body-frame point at arc length ``alpha`` from ``a``."""
        return np.asarray(self.a) + alpha * self.tangent


def _polygon_area(pts: np.ndarray) -> float:
    x, y = pts[:, 0], pts[:, 1]
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


def _segments_intersect(p1, p2, p3, p4) -> bool:
    d1 = cross2(p4 - p3, p1 - p3)
    d2 = cross2(p4 - p3, p2 - p3)
    d3 = cross2(p2 - p1, p3 - p1)
    d4 = cross2(p2 - p1, p4 - p1)
    return (d1 * d2 < 0) and (d3 * d4 < 0)


def _is_simple(pts: np.ndarray) -> bool:
    n = len(pts)
    for i in range(n):
        for j in range(i + 1, n):
            if j == i + 1 or (i == 0 and j == n - 1):
                continue
            if _segments_intersect(pts[i], pts[(i + 1) % n], pts[j], pts[(j + 1) % n]):
                return False
    return True


def _inside(pts: np.ndarray, p) -> bool:
    inside = False
    n = len(pts)
    for i in range(n):
        a, b = pts[i], pts[(i + 1) % n]
        if (a[1] > p[1]) != (b[1] > p[1]):
            xint = a[0] + (p[1] - a[1]) * (b[0] - a[0]) / (b[1] - a[1])
            if p[0] < xint:
                inside = not inside
    return inside


@dataclass(frozen=True)
class ObjectModel:
    mass: float
    vertices: tuple
    surfaces: tuple = ()
    com: tuple = (0.0, 0.0)
    mu_env: tuple = ()

    def __post_init__(self):
        verts = np.asarray(self.vertices, dtype=float)
        if verts.ndim != 2 or verts.shape[1] != 2 or len(verts) < 3:
            raise ScenarioError("object needs at least 3 planar vertices")
        if not self.mass > 0:
            raise ScenarioError("object mass must be positive")
        if _polygon_area(verts) <= 0:
            raise ScenarioError("object vertices must be listed counter-clockwise")
        if not _is_simple(verts):
            raise ScenarioError("object polygon self-intersects")
        if not _inside(verts, self.com):
            raise ScenarioError("center of mass lies outside the polygon")
        surfaces = self.surfaces
        if not surfaces:
            n = len(verts)
            surfaces = tuple(Surface.from_edge(k, verts[k], verts[(k + 1) % n]) for k in range(n))
        mu = self.mu_env
        if np.isscalar(mu):
            mu = (float(mu),) * len(verts)
        elif len(mu) == 0:
            mu = (0.5,) * len(verts)
        if len(mu) != len(verts) or any(m < 0 for m in mu):
            raise ScenarioError("mu_env needs one nonnegative value per vertex")
        object.__setattr__(self, "vertices", tuple(map(tuple, verts)))
        object.__setattr__(self, "surfaces", tuple(surfaces))
        object.__setattr__(self, "com", tuple(float(c) for c in self.com))
        object.__setattr__(self, "mu_env", tuple(float(m) for m in mu))

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_surfaces(self) -> int:
        return len(self.surfaces)

    @property
    def vertex_array(self) -> np.ndarray:
        return np.asarray(self.vertices)

    def radius(self) -> float:
        """Largest distance from the body origin to a vertex."""
        return float(np.max(np.linalg.norm(self.vertex_array, axis=1)))


@dataclass(frozen=True)
class Gate:
    """Forbids robot contact at a time step.

    The gate fires at step ``t`` when ``t`` is in ``steps`` (or ``steps`` is
    None) and ``coeffs . q_t >= rhs`` (or ``coeffs`` is None).
    """

    coeffs: Optional[tuple] = None
    rhs: float = 0.0
    steps: Optional[frozenset] = None

    def __post_init__(self):
        if self.coeffs is None and self.steps is None:
            raise ScenarioError("a gate needs a pose predicate, a step set, or both")
        if self.coeffs is not None:
            object.__setattr__(self, "coeffs", tuple(float(c) for c in self.coeffs))
        if self.steps is not None:
            object.__setattr__(self, "steps", frozenset(int(s) for s in self.steps))

    def fires(self, t: int, q) -> bool:
        if self.steps is not None and t not in self.steps:
            return False
        if self.coeffs is not None:
            return float(np.dot(self.coeffs, np.asarray(q)[:3])) >= self.rhs
        return True


@dataclass(frozen=True)
class RobotSpec:
    id: int
    mu: float = 0.8
    vel_lb: tuple = (-0.5, -0.5)
    vel_ub: tuple = (0.5, 0.5)
    workspace_gates: tuple = ()

    def __post_init__(self):
        if self.mu < 0:
            raise ScenarioError(f"robot {self.id}: negative friction coefficient")
        if not all(lo < hi for lo, hi in zip(self.vel_lb, self.vel_ub)):
            raise ScenarioError(f"robot {self.id}: velocity bounds must satisfy lb < ub")
        object.__setattr__(self, "vel_lb", tuple(map(float, self.vel_lb)))
        object.__setattr__(self, "vel_ub", tuple(map(float, self.vel_ub)))
        object.__setattr__(self, "workspace_gates", tuple(self.workspace_gates))

    def gated(self, t: int, q) -> bool:
        return any(g.fires(t, q) for g in self.workspace_gates)


@dataclass(frozen=True)
class EnvModel:
    halfspaces: tuple = ()  # ((nx, ny), d) pairs

    def __post_init__(self):
        hs = []
        for n, d in self.halfspaces:
            n = np.asarray(n, dtype=float)
            if abs(np.linalg.norm(n) - 1.0) > 1e-9:
                raise ScenarioError("environment normals must be unit vectors")
            hs.append((tuple(n), float(d)))
        if len(hs) > 1 and not _free_space_nonempty(hs):
            raise ScenarioError("environment free space is empty")
        object.__setattr__(self, "halfspaces", tuple(hs))

    @property
    def normals(self) -> np.ndarray:
        return np.array([n for n, _ in self.halfspaces]).reshape(-1, 2)

    @property
    def offsets(self) -> np.ndarray:
        return np.array([d for _, d in self.halfspaces])

    def tangent(self, k: int) -> np.ndarray:
        """Tangent of halfspace ``k``: the normal rotated by -90 degrees."""
        n = self.halfspaces[k][0]
        return np.array([n[1], -n[0]])


def _free_space_nonempty(hs) -> bool:
    from scipy.optimize import linprog

    A = -np.array([n for n, _ in hs])
    b = -np.array([d for _, d in hs])
    res = linprog(np.zeros(2), A_ub=A, b_ub=b, bounds=[(None, None)] * 2, method="highs")
    return res.status == 0


@dataclass(frozen=True)
class PoseBounds:
    lower: tuple = (-1.0, -1.0, -2 * math.pi)
    upper: tuple = (1.0, 1.0, 2 * math.pi)
    rate_lower: tuple = (-0.5, -0.5, -4.0)
    rate_upper: tuple = (0.5, 0.5, 4.0)

    def __post_init__(self):
        for name in ("lower", "upper", "rate_lower", "rate_upper"):
            object.__setattr__(self, name, tuple(float(v) for v in getattr(self, name)))
        if not all(lo <= hi for lo, hi in zip(self.lower, self.upper)):
            raise ScenarioError("pose bounds must satisfy lower <= upper")
        if not all(lo <= hi for lo, hi in zip(self.rate_lower, self.rate_upper)):
            raise ScenarioError("pose-rate bounds must satisfy lower <= upper")

    def contains(self, q) -> bool:
        q = np.asarray(q)
        return bool(np.all(q >= np.array(self.lower) - 1e-12) and np.all(q <= np.array(self.upper) + 1e-12))


@dataclass(frozen=True)
class Scenario:
    object: ObjectModel
    robots: tuple
    env: EnvModel
    q_start: Pose2
    q_goal: Pose2
    horizon: int
    step: float
    gravity: tuple = GRAVITY
    pose_bounds: PoseBounds = field(default_factory=PoseBounds)
    tracking_weights: tuple = (1.0, 1.0, 0.3)
    robot_force_max: Optional[float] = None
    env_force_max: Optional[float] = None
    name: str = "scenario"

    def __post_init__(self):
        if self.horizon < 2:
            raise ScenarioError("horizon must be at least 2")
        if not self.step > 0:
            raise ScenarioError("step must be positive")
        object.__setattr__(self, "robots", tuple(self.robots))
        object.__setattr__(self, "gravity", tuple(map(float, self.gravity)))
        for label, q in (("q_start", self.q_start), ("q_goal", self.q_goal)):
            if not self.pose_bounds.contains(q.to_array()):
                raise ScenarioError(f"{label} lies outside the pose bounds")

    @property
    def T(self) -> int:
        return self.horizon

    @property
    def weight(self) -> np.ndarray:
        """Gravity force m*g in the world frame."""
        return self.object.mass * np.asarray(self.gravity)

    @property
    def fmax_robot(self) -> float:
        if self.robot_force_max is not None:
            return float(self.robot_force_max)
        return 5.0 * self.object.mass * float(np.linalg.norm(self.gravity))

    @property
    def fmax_env(self) -> float:
        if self.env_force_max is not None:
            return float(self.env_force_max)
        return 10.0 * self.object.mass * float(np.linalg.norm(self.gravity))

    def reference(self) -> np.ndarray:
        """Linear interpolation from start to goal, shape (T+1, 3)."""
        s = np.linspace(0.0, 1.0, self.horizon + 1)[:, None]
        qs, qg = self.q_start.to_array(), self.q_goal.to_array()
        return (1 - s) * qs + s * qg


def surface_frame(surface: Surface, q: Pose2):
    """World rotation of the surface frame and world position of its start point.

    The rotation's columns are the outward normal and the tangent of the
    surface expressed in the world frame.
    """
    R = q.rotation()
    return R @ surface.frame(), q.apply(surface.a)


def vertex_world(obj: ObjectModel, v: int, q: Pose2) -> np.ndarray:
    if not 0 <= v < obj.n_vertices:
        raise IndexError(f"vertex index {v} out of range for {obj.n_vertices} vertices")
    return q.apply(obj.vertices[v])


def vertices_world(obj: ObjectModel, q) -> np.ndarray:
    """All vertices in the world frame for a pose array or Pose2, shape (N_v, 2)."""
    q = q.to_array() if isinstance(q, Pose2) else np.asarray(q, dtype=float)
    return obj.vertex_array @ rot(q[2]).T + q[:2]


def halfspace_distances(env: EnvModel, points: np.ndarray) -> np.ndarray:
    """Signed distance of each point to each halfspace, shape (N, H)."""
    return points @ env.normals.T - env.offsets


def sdf(scenario: Scenario, q) -> np.ndarray:
    """Per-vertex signed distance to the environment (negative = penetration)."""
    if not scenario.env.halfspaces:
        return np.full(scenario.object.n_vertices, np.inf)
    return halfspace_distances(scenario.env, vertices_world(scenario.object, q)).min(axis=1)


# ---------------------------------------------------------------------------
# JSON

_VEC2 = {"type": "array", "items": {"type": "number"}, "minItems": 2, "maxItems": 2}
_VEC3 = {"type": "array", "items": {"type": "number"}, "minItems": 3, "maxItems": 3}

SCENARIO_SCHEMA = {
    "type": "object",
    "required": ["object", "env", "q_start", "q_goal", "horizon", "step"],
    "properties": {
        "name": {"type": "string"},
        "object": {
            "type": "object",
            "required": ["mass", "vertices"],
            "properties": {
                "mass": {"type": "number", "exclusiveMinimum": 0},
                "vertices": {"type": "array", "items": _VEC2, "minItems": 3},
                "com": _VEC2,
                "mu_env": {"oneOf": [{"type": "number", "minimum": 0},
                                     {"type": "array", "items": {"type": "number", "minimum": 0}}]},
                "surfaces": {
                    "type": "array",
                    "items": {
                        "type": "object",
                        "required": ["a", "b"],
                        "properties": {
                            "a": {"type": "integer", "minimum": 0},
                            "b": {"type": "integer", "minimum": 0},
                            "normal": _VEC2,
                        },
                    },
                },
            },
        },
        "robots": {
            "type": "array",
            "items": {
                "type": "object",
                "properties": {
                    "mu": {"type": "number", "minimum": 0},
                    "vel_lb": _VEC2,
                    "vel_ub": _VEC2,
                    "gates": {
                        "type": "array",
                        "items": {
                            "type": "object",
                            "properties": {
                                "coeffs": _VEC3,
                                "rhs": {"type": "number"},
                                "steps": {"type": "array", "items": {"type": "integer"}},
                            },
                        },
                    },
                },
            },
        },
        "env": {
            "type": "object",
            "required": ["halfspaces"],
            "properties": {
                "halfspaces": {
                    "type": "array",
                    "items": {
                        "type": "object",
                        "required": ["normal", "offset"],
                        "properties": {"normal": _VEC2, "offset": {"type": "number"}},
                    },
                }
            },
        },
        "q_start": _VEC3,
        "q_goal": _VEC3,
        "horizon": {"type": "integer", "minimum": 2},
        "step": {"type": "number", "exclusiveMinimum": 0},
        "gravity": _VEC2,
        "pose_bounds": {
            "type": "object",
            "properties": {k: _VEC3 for k in ("lower", "upper", "rate_lower", "rate_upper")},
        },
        "tracking_weights": _VEC3,
        "robot_force_max": {"type": ["number", "null"]},
        "env_force_max": {"type": ["number", "null"]},
    },
}


def scenario_from_dict(data: dict) -> Scenario:
    try:
        jsonschema.validate(data, SCENARIO_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ScenarioError(f"{where}: {exc.message}") from None
    o = data["object"]
    verts = np.asarray(o["vertices"], dtype=float)
    surfaces = ()
    if o.get("surfaces"):
        built = []
        for k, s in enumerate(o["surfaces"]):
            if s["a"] >= len(verts) or s["b"] >= len(verts):
                raise ScenarioError(f"object/surfaces/{k}: vertex index out of range")
            if "normal" in s:
                built.append(Surface(k, tuple(verts[s["a"]]), tuple(verts[s["b"]]), tuple(s["normal"])))
            else:
                built.append(Surface.from_edge(k, verts[s["a"]], verts[s["b"]]))
        surfaces = tuple(built)
    obj = ObjectModel(
        mass=o["mass"],
        vertices=tuple(map(tuple, verts)),
        surfaces=surfaces,
        com=tuple(o.get("com", (0.0, 0.0))),
        mu_env=o.get("mu_env", ()),
    )
    robots = []
    for i, r in enumerate(data.get("robots", [])):
        gates = tuple(
            Gate(
                coeffs=g.get("coeffs"),
                rhs=g.get("rhs", 0.0),
                steps=frozenset(g["steps"]) if g.get("steps") is not None else None,
            )
            for g in r.get("gates", [])
        )
        kwargs = {k: tuple(r[k]) for k in ("vel_lb", "vel_ub") if k in r}
        robots.append(RobotSpec(id=i, mu=r.get("mu", 0.8), workspace_gates=gates, **kwargs))
    env = EnvModel(tuple((tuple(h["normal"]), h["offset"]) for h in data["env"]["halfspaces"]))
    pb = data.get("pose_bounds", {})
    bounds = PoseBounds(**{k: tuple(v) for k, v in pb.items()})
    return Scenario(
        object=obj,
        robots=tuple(robots),
        env=env,
        q_start=Pose2.from_array(data["q_start"]),
        q_goal=Pose2.from_array(data["q_goal"]),
        horizon=data["horizon"],
        step=data["step"],
        gravity=tuple(data.get("gravity", GRAVITY)),
        pose_bounds=bounds,
        tracking_weights=tuple(data.get("tracking_weights", (1.0, 1.0, 0.3))),
        robot_force_max=data.get("robot_force_max"),
        env_force_max=data.get("env_force_max"),
        name=data.get("name", "scenario"),
    )


def scenario_to_dict(sc: Scenario) -> dict:
    verts = [list(v) for v in sc.object.vertices]

    def vidx(p):
        for k, v in enumerate(sc.object.vertices):
            if np.allclose(v, p):
                return k
        raise ScenarioError("surface endpoints must be polygon vertices to serialize")

    return {
        "name": sc.name,
        "object": {
            "mass": sc.object.mass,
            "vertices": verts,
            "com": list(sc.object.com),
            "mu_env": list(sc.object.mu_env),
            "surfaces": [
                {"a": vidx(s.a), "b": vidx(s.b), "normal": list(s.outward_normal)}
                for s in sc.object.surfaces
            ],
        },
        "robots": [
            {
                "mu": r.mu,
                "vel_lb": list(r.vel_lb),
                "vel_ub": list(r.vel_ub),
                "gates": [
                    {
                        **({"coeffs": list(g.coeffs)} if g.coeffs is not None else {}),
                        "rhs": g.rhs,
                        **({"steps": sorted(g.steps)} if g.steps is not None else {}),
                    }
                    for g in r.workspace_gates
                ],
            }
            for r in sc.robots
        ],
        "env": {"halfspaces": [{"normal": list(n), "offset": d} for n, d in sc.env.halfspaces]},
        "q_start": sc.q_start.to_array().tolist(),
        "q_goal": sc.q_goal.to_array().tolist(),
        "horizon": sc.horizon,
        "step": sc.step,
        "gravity": list(sc.gravity),
        "pose_bounds": {
            "lower": list(sc.pose_bounds.lower),
            "upper": list(sc.pose_bounds.upper),
            "rate_lower": list(sc.pose_bounds.rate_lower),
            "rate_upper": list(sc.pose_bounds.rate_upper),
        },
        "tracking_weights": list(sc.tracking_weights),
        "robot_force_max": sc.robot_force_max,
        "env_force_max": sc.env_force_max,
    }


def load_scenario(path) -> Scenario:
    with open(path) as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ScenarioError(f"{path}: invalid JSON ({exc})") from None
    return scenario_from_dict(data)


def save_scenario(sc: Scenario, path) -> None:
    Path(path).write_text(json.dumps(scenario_to_dict(sc), indent=2))


def box_vertices(width: float, height: float) -> tuple:
    w, h = width / 2.0, height / 2.0
    return ((-w, -h), (w, -h), (w, h), (-w, h))
