import math

import numpy as np
import pytest

from contactopt.nlp import NlpConfig, NlpProblem, NlpStatus, check_gradients, solve

NONE = lambda x: np.zeros(0)  # noqa: E731


def _problem(n, f, eq=NONE, ineq=NONE, lb=-10.0, ub=10.0, x0=None, **kw):
    return NlpProblem(n, f, eq, ineq, lb, ub, np.zeros(n) if x0 is None else x0, **kw)


@pytest.mark.parametrize("method", ["auglag", "slsqp"])
def test_clipped_quadratic(method):
    p = _problem(1, lambda x: (x[0] - 3) ** 2, lb=-5, ub=2)
    res = solve(p, NlpConfig(method=method))
    assert res.converged
    assert res.x[0] == pytest.approx(2.0, abs=1e-6)


@pytest.mark.parametrize("method", ["auglag", "slsqp"])
def test_equality_lagrange_point(method):
    p = _problem(2, lambda x: x @ x, eq=lambda x: np.array([x[0] + x[1] - 1]))
    res = solve(p, NlpConfig(method=method))
    assert res.converged
    assert res.x == pytest.approx([0.5, 0.5], abs=1e-5)
    assert res.objective == pytest.approx(0.5, abs=1e-5)


@pytest.mark.parametrize("method", ["auglag", "slsqp"])
def test_infeasible_is_reported(method):
    p = _problem(1, lambda x: x[0] ** 2, ineq=lambda x: np.array([x[0] - 1, -x[0]]))
    res = solve(p, NlpConfig(method=method, max_outer=15))
    assert res.status is not NlpStatus.CONVERGED
    assert res.max_ineq_violation >= 0.4


def test_nan_diverges():
    p = _problem(1, lambda x: math.nan)
    res = solve(p)
    assert res.status is NlpStatus.DIVERGED
    assert res.message


def test_unknown_method():
    with pytest.raises(ValueError):
        solve(_problem(1, lambda x: x[0] ** 2), NlpConfig(method="ipopt"))


def test_converged_implies_feasible():
    p = _problem(3, lambda x: np.sum((x - 1) ** 2),
                 eq=lambda x: np.array([x[0] - 2 * x[1]]),
                 ineq=lambda x: np.array([0.5 - x[2], x[0] + x[1] - 0.1]))
    cfg = NlpConfig(feas_tol=1e-8)
    res = solve(p, cfg)
    assert res.converged and res.max_violation <= cfg.feas_tol


def _random_qp(rng, n, m_eq):
    A = rng.normal(size=(n, n))
    H = A @ A.T + n * np.eye(n)
    c = rng.normal(size=n)
    E = rng.normal(size=(m_eq, n))
    e = rng.normal(size=m_eq)
    kkt = np.block([[H, E.T], [E, np.zeros((m_eq, m_eq))]])
    x_star = np.linalg.solve(kkt, np.concatenate([-c, e]))[:n]
    p = _problem(n, lambda x: 0.5 * x @ H @ x + c @ x,
                 eq=lambda x: E @ x - e, lb=-1e3, ub=1e3,
                 objective_grad=lambda x: H @ x + c, eq_jacobian=lambda x: E)
    return p, x_star


@pytest.mark.parametrize("seed", range(20))
def test_random_convex_qp_matches_kkt(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 11))
    p, x_star = _random_qp(rng, n, int(rng.integers(0, n)))
    res = solve(p, NlpConfig(feas_tol=1e-9, opt_tol=1e-9))
    assert res.converged
    assert np.max(np.abs(res.x - x_star)) <= 1e-5


def test_merit_non_increasing_within_inner_solves():
    rng = np.random.default_rng(7)
    p, _ = _random_qp(rng, 6, 2)
    res = solve(p, NlpConfig(record_merit=True))
    assert res.merit_traces
    for trace in res.merit_traces:
        t = np.asarray(trace)
        assert np.all(np.diff(t) <= 1e-9 * (1 + np.abs(t[:-1])))


def test_check_gradients_quadratic():
    H = np.array([[2.0, 0.5], [0.5, 1.0]])
    p = _problem(2, lambda x: x @ H @ x, objective_grad=lambda x: 2 * H @ x)
    rep = check_gradients(p, np.array([0.3, -1.2]))
    assert rep.objective_error <= 1e-7 and rep.ok


def test_check_gradients_flags_wrong_gradient():
    p = _problem(2, lambda x: x @ x, objective_grad=lambda x: 3 * x)
    rep = check_gradients(p, np.array([1.0, 2.0]))
    assert not rep.ok and rep.objective_error > 1e-5


def test_linear_residual_jacobian_exact():
    # force balance of two contact forces against gravity: linear in the forces
    A = np.array([[1.0, 0, 1, 0], [0, 1, 0, 1]])
    b = np.array([0.0, 0.981])
    p = _problem(4, lambda x: 0.0, eq=lambda x: A @ x - b, eq_jacobian=lambda x: A)
    rep = check_gradients(p, np.array([0.1, 0.2, -0.3, 0.5]))
    assert rep.eq_error <= 1e-10
