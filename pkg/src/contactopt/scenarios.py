"""Built-in problem instances used by tests, scripts and the bench harness."""
from __future__ import annotations

import math

from .scene import (
    EnvModel,
    Gate,
    ObjectModel,
    Pose2,
    PoseBounds,
    RobotSpec,
    Scenario,
    Surface,
    box_vertices,
)

BOX_W, BOX_H = 0.07, 0.05
BOX_MASS = 0.1
TABLE = EnvModel((((0.0, 1.0), 0.0),))


def box(width=BOX_W, height=BOX_H, mass=BOX_MASS, mu_env=0.5, surfaces=()) -> ObjectModel:
    return ObjectModel(mass=mass, vertices=box_vertices(width, height), surfaces=surfaces, mu_env=mu_env)


def resting_box(T: int = 4, h: float = 0.2, n_robots: int = 1) -> Scenario:
    """Box at rest on the table; start equals goal."""
    q = Pose2(0.0, BOX_H / 2, 0.0)
    return Scenario(box(), tuple(RobotSpec(i) for i in range(n_robots)), TABLE, q, q, T, h,
                    name="resting_box")


def sliding_box(T: int = 5, h: float = 0.2, distance: float = 0.05) -> Scenario:
    """Box pushed along the table by one robot."""
    q0 = Pose2(0.0, BOX_H / 2, 0.0)
    q1 = Pose2(distance, BOX_H / 2, 0.0)
    return Scenario(box(), (RobotSpec(0),), TABLE, q0, q1, T, h, name="sliding_box")


def free_box(T: int = 4, h: float = 0.2) -> Scenario:
    """No environment contact possible: the box moves well above the table."""
    return Scenario(box(), (RobotSpec(0),), TABLE, Pose2(0.0, 0.3, 0.0), Pose2(0.05, 0.3, 0.4), T, h,
                    name="free_box")


def pivot(T: int = 10, h: float = 0.2, mu_env: float = 0.5) -> Scenario:
    """Rotate the box by +90 degrees about its bottom-left corner with two robots."""
    q0 = Pose2(0.0, BOX_H / 2, 0.0)
    # corner (-w/2, -h/2) stays at (-w/2, 0): position = corner - R(pi/2) corner
    qg = Pose2(-BOX_W / 2 - BOX_H / 2, BOX_W / 2, math.pi / 2)
    robots = (RobotSpec(0, mu=0.8), RobotSpec(1, mu=0.8))
    return Scenario(box(mu_env=mu_env), robots, TABLE, q0, qg, T, h, name="pivot")


def two_arm_pivot(T: int = 10, h: float = 0.2, gate_theta: float = 0.6) -> Scenario:
    """Pivot with two arms; the second arm may only touch once the box has tilted."""
    base = pivot(T, h)
    gate = Gate(coeffs=(0.0, 0.0, -1.0), rhs=-gate_theta)  # fires while theta <= gate_theta
    robots = (RobotSpec(0, mu=0.8), RobotSpec(1, mu=0.8, workspace_gates=(gate,)))
    return Scenario(base.object, robots, base.env, base.q_start, base.q_goal, T, h, name="two_arm_pivot")


def grasp_lift(T: int = 5, h: float = 0.2, lift: float = 0.03) -> Scenario:
    """Two robots squeeze the side faces and lift the box off the table."""
    v = box_vertices(BOX_W, BOX_H)
    surfaces = (Surface.from_edge(0, v[1], v[2]), Surface.from_edge(1, v[3], v[0]))
    obj = box(surfaces=surfaces)
    q0 = Pose2(0.0, BOX_H / 2, 0.0)
    q1 = Pose2(0.0, BOX_H / 2 + lift, 0.0)
    robots = (RobotSpec(0, mu=0.8), RobotSpec(1, mu=0.8))
    return Scenario(obj, robots, TABLE, q0, q1, T, h, name="grasp_lift")


def stick_on_corner(T: int = 2, h: float = 0.2, tilt: float = 0.1) -> Scenario:
    """Thin kite balanced on its lower tip, given tilted so that it cannot balance as is."""
    verts = ((0.0, -0.1), (0.01, 0.0), (0.0, 0.1), (-0.01, 0.0))
    obj = ObjectModel(mass=0.05, vertices=verts, mu_env=0.8)
    y = 0.1 * math.cos(tilt)
    q = Pose2(-0.1 * math.sin(tilt), y, tilt)
    bounds = PoseBounds(lower=(-1, -1, -1), upper=(1, 1, 1))
    return Scenario(obj, (), TABLE, q, q, T, h, pose_bounds=bounds, name="stick_on_corner")


LIBRARY = {
    "resting_box": resting_box,
    "sliding_box": sliding_box,
    "free_box": free_box,
    "pivot": pivot,
    "two_arm_pivot": two_arm_pivot,
    "grasp_lift": grasp_lift,
    "stick_on_corner": stick_on_corner,
}
