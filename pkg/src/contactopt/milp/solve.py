"""Solve backends for :class:`MilpModel`.

``solve`` is the single entry point.  The ``"bnb"`` backend is the reference
best-first branch-and-bound in this module; ``"highs"`` hands the model to
HiGHS through :func:`scipy.optimize.milp`.  Either way the returned point is
re-checked against the model before it is reported as feasible.
"""
from __future__ import annotations

import enum
import heapq
import itertools
import logging
import math
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse as sp
from scipy.optimize import Bounds, LinearConstraint, linprog, milp

from .model import EQ, GE, LE, MilpModel

log = logging.getLogger(__name__)


class Status(str, enum.Enum):
    OPTIMAL = "Optimal"
    FEASIBLE = "Feasible"
    INFEASIBLE = "Infeasible"
    ITERATION_LIMIT = "IterationLimit"
    TIME_LIMIT = "TimeLimit"
    UNBOUNDED = "Unbounded"
    NUMERICAL_ERROR = "NumericalError"

    @property
    def has_solution(self) -> bool:
        return self in (Status.OPTIMAL, Status.FEASIBLE)


@dataclass
class MilpConfig:
    time_limit: float = 60.0
    node_limit: int = 200_000
    tolerance: float = 1e-6
    backend: str = "bnb"
    rounding: bool = True  # try the rounded LP point at every fractional node


@dataclass
class MilpSolution:
    status: Status
    values: Optional[np.ndarray] = None
    objective: float = math.nan
    nodes: int = 0
    elapsed: float = 0.0
    message: str = ""

    def __getitem__(self, v) -> float:
        return float(self.values[int(v)])


class _LPData:
    """Model rows split into the (A_ub, b_ub, A_eq, b_eq) form linprog wants."""

    def __init__(self, model: MilpModel):
        A, senses, rhs = model.matrix()
        le = senses == LE
        ge = senses == GE
        eq = senses == EQ
        self.A_ub = sp.vstack([A[le], -A[ge]]).tocsr() if (le.any() or ge.any()) else None
        self.b_ub = np.concatenate([rhs[le], -rhs[ge]]) if self.A_ub is not None else None
        self.A_eq = A[eq].tocsr() if eq.any() else None
        self.b_eq = rhs[eq] if eq.any() else None
        sign = 1.0 if model.minimize else 0.0
        self.c = sign * model.objective_vector()

    def solve(self, lb, ub):
        """Returns (status, x, objective); status in {'ok','infeasible','unbounded','error'}."""
        if np.any(lb > ub + 1e-12):
            return "infeasible", None, math.inf
        try:
            res = linprog(
                self.c, A_ub=self.A_ub, b_ub=self.b_ub, A_eq=self.A_eq, b_eq=self.b_eq,
                bounds=np.column_stack([lb, ub]), method="highs-ds",
            )
        except (ValueError, np.linalg.LinAlgError) as exc:  # pragma: no cover - defensive
            log.warning("LP relaxation failed: %s", exc)
            return "error", None, math.nan
        if res.status == 0:
            return "ok", res.x, float(res.fun)
        if res.status == 2:
            return "infeasible", None, math.inf
        if res.status == 3:
            return "unbounded", None, -math.inf
        return "error", None, math.nan


def _polish(model: MilpModel, lp: _LPData, x, lb, ub, tol):
    """Round binaries, re-solve the continuous part and verify the point."""
    b = model.binaries
    z = np.round(x[b])
    lb2, ub2 = lb.copy(), ub.copy()
    lb2[b] = z
    ub2[b] = z
    status, xp, _ = lp.solve(lb2, ub2)
    if status != "ok":
        return None
    xp = xp.copy()
    xp[b] = z
    if not model.is_feasible(xp, tol):
        return None
    return xp


def branch_and_bound(model: MilpModel, config: MilpConfig) -> MilpSolution:
    """Best-first branch-and-bound branching on the most fractional binary.

    Ties in the bound are broken by depth (deeper first) and then by creation
    order, so feasibility models are searched depth-first and the search is
    deterministic.
    """
    start = time.perf_counter()
    tol = config.tolerance
    lp = _LPData(model)
    b = model.binaries
    prio = np.array([model.variables[v].priority for v in b], dtype=int)
    lb0, ub0 = model.lower, model.upper
    counter = itertools.count()
    heap = [(-math.inf, 0, next(counter), lb0, ub0)]
    incumbent, best = None, math.inf
    nodes = 0
    numerical = False

    def done(status, msg=""):
        obj = model.objective_value(incumbent) if incumbent is not None else math.nan
        return MilpSolution(status, incumbent, obj, nodes, time.perf_counter() - start, msg)

    while heap:
        if time.perf_counter() - start > config.time_limit:
            return done(Status.FEASIBLE if incumbent is not None else Status.TIME_LIMIT, "time limit")
        if nodes >= config.node_limit:
            return done(Status.FEASIBLE if incumbent is not None else Status.ITERATION_LIMIT, "node limit")
        bound, negdepth, _, lb, ub = heapq.heappop(heap)
        if bound >= best - tol * max(1.0, abs(best)):
            continue
        nodes += 1
        status, x, obj = lp.solve(lb, ub)
        if status == "infeasible":
            continue
        if status == "unbounded":
            if nodes == 1:
                return done(Status.UNBOUNDED, "LP relaxation unbounded")
            continue
        if status == "error":
            numerical = True
            continue
        if obj >= best - tol * max(1.0, abs(best)):
            continue
        frac = np.abs(x[b] - np.round(x[b])) if len(b) else np.zeros(0)
        if len(b) == 0 or frac.max() <= tol:
            xp = _polish(model, lp, x, lb, ub, tol)
            if xp is not None:
                incumbent, best = xp, model.objective_value(xp) if model.minimize else 0.0
                if not model.minimize:
                    return done(Status.FEASIBLE)
                continue
            if len(b) == 0:
                numerical = True
                continue
        if config.rounding:
            xr = _polish(model, lp, x, lb, ub, tol)
            if xr is not None:
                val = model.objective_value(xr) if model.minimize else 0.0
                if val < best:
                    incumbent, best = xr, val
                if not model.minimize:
                    return done(Status.FEASIBLE, "rounding heuristic")
        # most fractional free binary within the highest fractional priority
        # class; ties go to the lowest index
        free = lb[b] < ub[b]
        if not free.any():
            numerical = True
            continue
        fractional = free & (frac > tol)
        top = prio[fractional].max() if fractional.any() else prio[free].max()
        dist = np.where(free & (prio == top), np.abs(x[b] - 0.5), np.inf)
        j = int(b[int(np.argmin(dist))])
        up_first = x[j] >= 0.5
        children = []
        for val in (1.0, 0.0) if up_first else (0.0, 1.0):
            if lb[j] > val or ub[j] < val:
                continue
            clb, cub = lb.copy(), ub.copy()
            clb[j] = cub[j] = val
            children.append((clb, cub))
        for clb, cub in children:
            heapq.heappush(heap, (obj, negdepth - 1, next(counter), clb, cub))

    if incumbent is not None:
        return done(Status.OPTIMAL)
    if numerical:
        return done(Status.NUMERICAL_ERROR, "LP relaxations failed numerically")
    return done(Status.INFEASIBLE)


def _solve_highs(model: MilpModel, config: MilpConfig) -> MilpSolution:
    start = time.perf_counter()
    A, senses, rhs = model.matrix()
    lo = np.where(senses == LE, -np.inf, rhs)
    hi = np.where(senses == GE, np.inf, rhs)
    integrality = np.zeros(model.n_vars)
    integrality[model.binaries] = 1
    c = model.objective_vector() if model.minimize else np.zeros(model.n_vars)
    cons = [LinearConstraint(A, lo.astype(float), hi.astype(float))] if model.n_constraints else []
    res = milp(
        c, integrality=integrality, bounds=Bounds(model.lower, model.upper), constraints=cons,
        options={"time_limit": config.time_limit, "node_limit": config.node_limit,
                 "mip_rel_gap": config.tolerance, "disp": False},
    )
    elapsed = time.perf_counter() - start
    if res.x is not None:
        x = res.x.copy()
        b = model.binaries
        x[b] = np.round(x[b])
        if not model.is_feasible(x, config.tolerance):
            lp = _LPData(model)
            x = _polish(model, lp, res.x, model.lower, model.upper, config.tolerance)
        if x is not None:
            status = Status.OPTIMAL if res.status == 0 else Status.FEASIBLE
            if not model.minimize and status is Status.OPTIMAL:
                status = Status.FEASIBLE
            return MilpSolution(status, x, model.objective_value(x), 0, elapsed, res.message)
    status = {2: Status.INFEASIBLE, 3: Status.UNBOUNDED, 1: Status.TIME_LIMIT}.get(
        res.status, Status.NUMERICAL_ERROR)
    return MilpSolution(status, None, math.nan, 0, elapsed, res.message)


BACKENDS = {"bnb": branch_and_bound, "highs": _solve_highs}


def solve(model: MilpModel, config: Optional[MilpConfig] = None) -> MilpSolution:
    config = config or MilpConfig()
    try:
        backend = BACKENDS[config.backend]
    except KeyError:
        raise ValueError(f"unknown MILP backend {config.backend!r}; choose from {sorted(BACKENDS)}")
    return backend(model, config)


def _activity_bounds(A, lb, ub):
    """Smallest and largest value of each row of ``A x`` over the box."""
    with np.errstate(invalid="ignore"):
        lo = np.where(A > 0, A * lb, np.where(A < 0, A * ub, 0.0)).sum(axis=1)
        hi = np.where(A > 0, A * ub, np.where(A < 0, A * lb, 0.0)).sum(axis=1)
    return lo, hi


def enumerate_binaries(model: MilpModel, tol: float = 1e-6) -> MilpSolution:
    """Exhaustive search over binary assignments, one LP per surviving leaf.

    Depth-first over the binaries in declaration order.  A subtree is skipped
    only when interval arithmetic on some row proves it empty; there is no
    objective bounding, so the result does not share logic with
    :func:`branch_and_bound`.  For cross-checking only.
    """
    lp = _LPData(model)
    b = list(model.binaries)
    if len(b) > 30:
        raise ValueError("too many binaries to enumerate")
    A, senses, rhs = model.matrix()
    A = A.toarray()
    le_rows = (senses == LE) | (senses == EQ)
    ge_rows = (senses == GE) | (senses == EQ)
    best, best_x = math.inf, None
    lb, ub = model.lower, model.upper
    stack = [(0, lb, ub)]
    while stack:
        depth, lb, ub = stack.pop()
        lo, hi = _activity_bounds(A, lb, ub)
        if np.any(lo[le_rows] > rhs[le_rows] + tol) or np.any(hi[ge_rows] < rhs[ge_rows] - tol):
            continue
        if depth < len(b):
            for bit in (1.0, 0.0):
                lb2, ub2 = lb.copy(), ub.copy()
                lb2[b[depth]] = ub2[b[depth]] = bit
                stack.append((depth + 1, lb2, ub2))
            continue
        status, x, _ = lp.solve(lb, ub)
        if status != "ok":
            continue
        val = model.objective_value(x) if model.minimize else 0.0
        if val < best - 1e-12:
            best, best_x = val, x
            if not model.minimize:
                break
    if best_x is None:
        return MilpSolution(Status.INFEASIBLE)
    return MilpSolution(Status.OPTIMAL, best_x, model.objective_value(best_x))
