"""SVG snapshots of a planned trajectory.

Frames are drawn evenly spaced in time with opacity rising toward the final
frame.  Forces are arrows of length ``FORCE_SCALE`` pixels per newton; world
coordinates are mapped at ``PX_PER_M`` pixels per meter with y pointing up.
"""
from __future__ import annotations

from typing import Optional
from xml.sax.saxutils import escape

import numpy as np

from .qopt import Trajectory
from .scene import Scenario, rot

PX_PER_M = 2000.0
FORCE_SCALE = 40.0  # px per N
MARGIN = 40.0


def snapshot_steps(T: int, n_snapshots: int) -> list:
    """Evenly spaced step indices ending at T; one snapshot means the final frame."""
    if n_snapshots < 1:
        raise ValueError("n_snapshots must be >= 1")
    if n_snapshots == 1:
        return [T]
    idx = np.linspace(0, T, min(n_snapshots, T + 1))
    return sorted({int(round(v)) for v in idx})


def _poly(points) -> str:
    return " ".join(f"{x:.2f},{y:.2f}" for x, y in points)


def render_svg(scenario: Scenario, traj: Trajectory, n_snapshots: int = 10,
               title: Optional[str] = None) -> str:
    obj = scenario.object
    verts = obj.vertex_array
    steps = snapshot_steps(traj.T, n_snapshots)

    def world(q):
        return verts @ rot(q[2]).T + q[:2]

    frames = [world(traj.poses[t]) for t in steps]
    goal = world(scenario.q_goal.to_array())
    pts = np.vstack(frames + [goal] + [traj.p[t].reshape(-1, 2) for t in steps if traj.p.size])
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    width = (hi[0] - lo[0]) * PX_PER_M + 2 * MARGIN
    height = (hi[1] - lo[1]) * PX_PER_M + 2 * MARGIN

    def px(p):
        p = np.asarray(p, dtype=float)
        return np.column_stack([(p[..., 0] - lo[0]) * PX_PER_M + MARGIN,
                                height - ((p[..., 1] - lo[1]) * PX_PER_M + MARGIN)])

    def arrow(origin, force, cls):
        a = px(origin)[0]
        b = a + np.array([force[0], -force[1]]) * FORCE_SCALE
        return (f'<line class="{cls}" x1="{a[0]:.2f}" y1="{a[1]:.2f}" x2="{b[0]:.2f}" y2="{b[1]:.2f}" '
                f'marker-end="url(#head)"/>')

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0f}" height="{height:.0f}" '
           f'viewBox="0 0 {width:.2f} {height:.2f}">',
           '<defs><marker id="head" markerWidth="6" markerHeight="6" refX="5" refY="3" orient="auto">'
           '<path d="M0,0 L6,3 L0,6 z"/></marker></defs>',
           '<style>.object{fill:#4a7bb7;stroke:#1d3557}.goal{fill:none;stroke:#000;stroke-width:3}'
           '.robot{fill:#e63946}.robot-force{stroke:#e63946;stroke-width:1.5}'
           '.env-force{stroke:#2a9d8f;stroke-width:1.5}.table{stroke:#555;stroke-width:2}</style>']
    if title:
        out.append(f"<title>{escape(title)}</title>")
    y0 = px(np.array([[lo[0], 0.0]]))[0, 1]
    out.append(f'<line class="table" x1="0" y1="{y0:.2f}" x2="{width:.2f}" y2="{y0:.2f}"/>')
    out.append(f'<polygon class="goal" points="{_poly(px(goal))}"/>')
    n = len(steps)
    for j, (t, poly) in enumerate(zip(steps, frames)):
        opacity = 0.15 + 0.85 * (j + 1) / n
        out.append(f'<g class="frame" data-step="{t}" opacity="{opacity:.3f}">')
        out.append(f'<polygon class="object" points="{_poly(px(poly))}"/>')
        for i in range(traj.p.shape[1]):
            if traj.surface[t, i] < 0:
                continue
            c = px(traj.p[t, i][None])[0]
            out.append(f'<circle class="robot" cx="{c[0]:.2f}" cy="{c[1]:.2f}" r="3"/>')
            out.append(arrow(traj.p[t, i][None], traj.u[t, i], "robot-force"))
        for v in np.flatnonzero(traj.contact_map[:, t]):
            out.append(arrow(poly[v][None], traj.f[t, v], "env-force"))
        out.append("</g>")
    out.append("</svg>")
    return "\n".join(out)
