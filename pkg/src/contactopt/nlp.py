"""Smooth constrained NLP solver.

Augmented Lagrangian (Powell-Hestenes-Rockafellar form) over equality
residuals ``c(x) = 0`` and inequality residuals ``g(x) >= 0``; box bounds are
kept out of the merit function and handled by the inner L-BFGS-B minimizer.
``method="slsqp"`` hands the same problem to scipy's SQP instead, which needs
far fewer evaluations on small dense problems.
"""
from __future__ import annotations

import enum
import logging
import math
import time
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.optimize import minimize

log = logging.getLogger(__name__)


class NlpStatus(str, enum.Enum):
    CONVERGED = "Converged"
    MAX_ITER = "MaxIter"
    DIVERGED = "Diverged"


@dataclass
class NlpProblem:
    n: int
    objective: Callable
    eq_residuals: Callable
    ineq_residuals: Callable
    lower: np.ndarray
    upper: np.ndarray
    x0: np.ndarray
    objective_grad: Optional[Callable] = None
    eq_jacobian: Optional[Callable] = None
    ineq_jacobian: Optional[Callable] = None

    def __post_init__(self):
        self.lower = np.broadcast_to(np.asarray(self.lower, dtype=float), (self.n,)).copy()
        self.upper = np.broadcast_to(np.asarray(self.upper, dtype=float), (self.n,)).copy()
        self.x0 = np.asarray(self.x0, dtype=float).copy()
        if self.x0.shape != (self.n,):
            raise ValueError(f"x0 has shape {self.x0.shape}, expected ({self.n},)")

    @property
    def box(self):
        return np.column_stack([self.lower, self.upper])

    def grad(self, x):
        if self.objective_grad is not None:
            return np.asarray(self.objective_grad(x), dtype=float)
        return fd_gradient(self.objective, x)

    def jac_eq(self, x):
        if self.eq_jacobian is not None:
            return np.asarray(self.eq_jacobian(x), dtype=float)
        return fd_jacobian(self.eq_residuals, x)

    def jac_ineq(self, x):
        if self.ineq_jacobian is not None:
            return np.asarray(self.ineq_jacobian(x), dtype=float)
        return fd_jacobian(self.ineq_residuals, x)

    def violations(self, x):
        c = np.asarray(self.eq_residuals(x), dtype=float)
        g = np.asarray(self.ineq_residuals(x), dtype=float)
        eq = float(np.max(np.abs(c), initial=0.0))
        ineq = float(np.max(-g, initial=0.0))
        return eq, max(ineq, 0.0)


@dataclass
class NlpConfig:
    feas_tol: float = 1e-6
    opt_tol: float = 1e-6
    max_outer: int = 50
    penalty_growth: float = 10.0
    penalty_init: float = 10.0
    penalty_max: float = 1e10
    max_inner: int = 3000
    time_limit: float = math.inf
    record_merit: bool = False
    method: str = "auglag"  # auglag | slsqp


@dataclass
class NlpResult:
    x: np.ndarray
    objective: float
    max_eq_violation: float
    max_ineq_violation: float
    status: NlpStatus
    outer_iterations: int = 0
    inner_iterations: int = 0
    message: str = ""
    eq_multipliers: Optional[np.ndarray] = None
    ineq_multipliers: Optional[np.ndarray] = None
    merit_traces: list = field(default_factory=list)
    elapsed: float = 0.0

    @property
    def converged(self) -> bool:
        return self.status is NlpStatus.CONVERGED

    @property
    def max_violation(self) -> float:
        return max(self.max_eq_violation, self.max_ineq_violation)


def _fd_step(x):
    return 1e-6 * (1.0 + np.abs(x))


def fd_gradient(f, x):
    x = np.asarray(x, dtype=float)
    g = np.empty_like(x)
    h = _fd_step(x)
    for i in range(x.size):
        xp, xm = x.copy(), x.copy()
        xp[i] += h[i]
        xm[i] -= h[i]
        g[i] = (f(xp) - f(xm)) / (2 * h[i])
    return g


def fd_jacobian(F, x):
    x = np.asarray(x, dtype=float)
    f0 = np.atleast_1d(np.asarray(F(x), dtype=float))
    J = np.empty((f0.size, x.size))
    h = _fd_step(x)
    for i in range(x.size):
        xp, xm = x.copy(), x.copy()
        xp[i] += h[i]
        xm[i] -= h[i]
        J[:, i] = (np.atleast_1d(F(xp)) - np.atleast_1d(F(xm))) / (2 * h[i])
    return J


class _NanError(FloatingPointError):
    pass


def solve(problem: NlpProblem, config: Optional[NlpConfig] = None,
          eq_multipliers=None, ineq_multipliers=None) -> NlpResult:
    """Minimize ``objective`` subject to ``eq = 0``, ``ineq >= 0`` and the box."""
    cfg = config or NlpConfig()
    if cfg.method == "slsqp":
        return _solve_slsqp(problem, cfg, eq_multipliers, ineq_multipliers)
    if cfg.method != "auglag":
        raise ValueError(f"unknown NLP method {cfg.method!r}")
    start = time.perf_counter()
    lo, hi = problem.lower, problem.upper
    x = np.clip(problem.x0, lo, hi)
    c0 = np.atleast_1d(np.asarray(problem.eq_residuals(x), dtype=float))
    g0 = np.atleast_1d(np.asarray(problem.ineq_residuals(x), dtype=float))
    mu = np.zeros(c0.size) if eq_multipliers is None else np.asarray(eq_multipliers, float).copy()
    nu = np.zeros(g0.size) if ineq_multipliers is None else np.asarray(ineq_multipliers, float).copy()
    rho = cfg.penalty_init
    traces = []
    inner_total = 0

    def merit(z):
        f = float(problem.objective(z))
        c = np.atleast_1d(np.asarray(problem.eq_residuals(z), dtype=float))
        g = np.atleast_1d(np.asarray(problem.ineq_residuals(z), dtype=float))
        if not (math.isfinite(f) and np.all(np.isfinite(c)) and np.all(np.isfinite(g))):
            raise _NanError("non-finite objective or residual")
        shifted = np.maximum(0.0, nu - rho * g)
        val = f + mu @ c + 0.5 * rho * (c @ c) + (shifted @ shifted - nu @ nu) / (2 * rho)
        grad = problem.grad(z)
        if c.size:
            grad = grad + problem.jac_eq(z).T @ (mu + rho * c)
        if g.size:
            grad = grad - problem.jac_ineq(z).T @ shifted
        return val, grad

    def viol(z):
        return problem.violations(z)

    prev_v = max(viol(x))
    status = NlpStatus.MAX_ITER
    msg = "outer iteration limit"
    outer = 0
    for outer in range(1, cfg.max_outer + 1):
        trace = []
        remaining = cfg.time_limit - (time.perf_counter() - start)
        if remaining <= 0:
            msg = "time limit"
            break
        try:
            cb = (lambda z: trace.append(merit(z)[0])) if cfg.record_merit else None
            res = minimize(merit, x, jac=True, method="L-BFGS-B", bounds=problem.box, callback=cb,
                           options={"maxiter": cfg.max_inner, "ftol": 1e-15, "gtol": 1e-10,
                                    "maxcor": 30})
        except _NanError as exc:
            status, msg = NlpStatus.DIVERGED, str(exc)
            break
        inner_total += res.nit
        if cfg.record_merit:
            traces.append(trace)
        x = np.clip(res.x, lo, hi)
        c = np.atleast_1d(np.asarray(problem.eq_residuals(x), dtype=float))
        g = np.atleast_1d(np.asarray(problem.ineq_residuals(x), dtype=float))
        if not (np.all(np.isfinite(c)) and np.all(np.isfinite(g))):
            status, msg = NlpStatus.DIVERGED, "non-finite residual"
            break
        mu = mu + rho * c
        nu = np.maximum(0.0, nu - rho * g)
        v = max(viol(x))
        # first-order check on the Lagrangian, projected onto the box
        lag = problem.grad(x)
        if c.size:
            lag = lag + problem.jac_eq(x).T @ mu
        if g.size:
            lag = lag - problem.jac_ineq(x).T @ nu
        pg = np.clip(x - lag, lo, hi) - x
        stationarity = float(np.max(np.abs(pg), initial=0.0))
        scale = max(1.0, float(np.max(np.abs(mu), initial=0.0)), float(np.max(nu, initial=0.0)))
        log.debug("outer %d: viol=%.3e stat=%.3e rho=%.1e", outer, v, stationarity, rho)
        if v <= cfg.feas_tol and stationarity <= cfg.opt_tol * scale:
            status, msg = NlpStatus.CONVERGED, "converged"
            break
        if v <= cfg.feas_tol and res.success and outer > 1 and stationarity <= math.sqrt(cfg.opt_tol) * scale:
            status, msg = NlpStatus.CONVERGED, "converged (feasible, inner solver stalled)"
            break
        if v > 0.25 * prev_v and v > cfg.feas_tol:
            rho = min(rho * cfg.penalty_growth, cfg.penalty_max)
        prev_v = v
    eqv, inv = viol(x)
    if status is NlpStatus.CONVERGED and max(eqv, inv) > cfg.feas_tol:
        status = NlpStatus.MAX_ITER
    return NlpResult(
        x=x, objective=float(problem.objective(x)), max_eq_violation=eqv, max_ineq_violation=inv,
        status=status, outer_iterations=outer, inner_iterations=inner_total, message=msg,
        eq_multipliers=mu, ineq_multipliers=nu, merit_traces=traces,
        elapsed=time.perf_counter() - start,
    )


class _Timeout(Exception):
    pass


def _solve_slsqp(problem: NlpProblem, cfg: NlpConfig, eq_multipliers, ineq_multipliers) -> NlpResult:
    start = time.perf_counter()
    x = np.clip(problem.x0, problem.lower, problem.upper)
    last = [x]

    def cb(z):
        last[0] = np.array(z, dtype=float)
        if time.perf_counter() - start > cfg.time_limit:
            raise _Timeout

    cons = []
    if np.size(problem.eq_residuals(x)):
        cons.append({"type": "eq", "fun": problem.eq_residuals, "jac": problem.jac_eq})
    if np.size(problem.ineq_residuals(x)):
        cons.append({"type": "ineq", "fun": problem.ineq_residuals, "jac": problem.jac_ineq})
    nit = 0
    try:
        with warnings.catch_warnings():
            # SLSQP clips trial points to the box itself and says so every time
            warnings.filterwarnings("ignore", message="Values in x were outside bounds")
            res = minimize(problem.objective, x, jac=problem.grad, method="SLSQP", bounds=problem.box,
                           constraints=cons, callback=cb,
                           options={"maxiter": cfg.max_inner, "ftol": cfg.opt_tol ** 2})
        x, nit = np.clip(res.x, problem.lower, problem.upper), res.nit
        ok, msg = res.status == 0, res.message
    except _Timeout:
        x, ok, msg = last[0], False, "time limit"
    except (FloatingPointError, ValueError) as exc:
        x, ok, msg = last[0], False, str(exc)
    eqv, inv = problem.violations(x)
    finite = math.isfinite(eqv) and math.isfinite(inv)
    if not finite:
        status = NlpStatus.DIVERGED
    elif ok and max(eqv, inv) <= cfg.feas_tol:
        status = NlpStatus.CONVERGED
    else:
        status = NlpStatus.MAX_ITER
    return NlpResult(
        x=x, objective=float(problem.objective(x)), max_eq_violation=eqv, max_ineq_violation=inv,
        status=status, outer_iterations=1, inner_iterations=nit, message=str(msg),
        eq_multipliers=eq_multipliers, ineq_multipliers=ineq_multipliers,
        elapsed=time.perf_counter() - start,
    )


@dataclass
class GradientReport:
    objective_error: float
    eq_error: float
    ineq_error: float
    rel_tol: float

    @property
    def max_error(self) -> float:
        return max(self.objective_error, self.eq_error, self.ineq_error)

    @property
    def ok(self) -> bool:
        return self.max_error <= self.rel_tol


def _rel_err(analytic, numeric) -> float:
    analytic, numeric = np.atleast_1d(analytic), np.atleast_1d(numeric)
    if analytic.size == 0:
        return 0.0
    return float(np.max(np.abs(analytic - numeric)) / max(1.0, float(np.max(np.abs(numeric)))))


def check_gradients(problem: NlpProblem, x, rel_tol: float = 1e-5) -> GradientReport:
    """Compare supplied derivatives with central differences (step 1e-6 (1+|x_i|))."""
    x = np.asarray(x, dtype=float)
    errs = []
    for supplied, fn, fd in (
        (problem.objective_grad, problem.objective, fd_gradient),
        (problem.eq_jacobian, problem.eq_residuals, fd_jacobian),
        (problem.ineq_jacobian, problem.ineq_residuals, fd_jacobian),
    ):
        errs.append(0.0 if supplied is None else _rel_err(supplied(x), fd(fn, x)))
    return GradientReport(*errs, rel_tol=rel_tol)
