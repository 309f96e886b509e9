import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from contactopt.milp import (
    BINARY,
    MilpConfig,
    MilpModel,
    ModelError,
    Status,
    branch_and_bound,
    enumerate_binaries,
    lin,
    read_lp,
    solve,
    write_lp,
)


def test_add_var_contract():
    m = MilpModel()
    z = m.add_var("z_0_0_1", BINARY, 0, 1)
    lam = m.add_var("lam_n", "continuous", 0, 100)
    assert (z, lam) == (0, 1)
    with pytest.raises(ModelError):
        m.add_var("bad", lb=2, ub=1)
    with pytest.raises(ModelError):
        m.add_var("bad", BINARY, 0, 2)


def test_add_constraint_contract():
    m = MilpModel()
    x, y = m.add_var("x", ub=1), m.add_var("y", ub=1)
    assert m.add_eq(lin([(x, 1), (y, 1)]), 1) == 0
    with pytest.raises(ModelError):
        m.add_eq(lin(), 1)
    with pytest.raises(ModelError):
        m.add_le({x: math.nan}, 1)
    with pytest.raises(ModelError):
        m.add_le({7: 1.0}, 1)


def test_lp_corner():
    m = MilpModel()
    x = m.add_var("x", lb=0, ub=10)
    m.add_ge({x: 1}, 3)
    m.set_objective({x: 1})
    for backend in ("bnb", "highs"):
        sol = solve(m, MilpConfig(backend=backend))
        assert sol.status is Status.OPTIMAL
        assert sol[x] == pytest.approx(3)


def test_binary_feasibility():
    m = MilpModel()
    z1, z2 = m.add_var("z1", BINARY, 0, 1), m.add_var("z2", BINARY, 0, 1)
    m.add_eq({z1: 1, z2: 1}, 1)
    sol = solve(m)
    assert sol.status is Status.FEASIBLE
    assert sorted([sol[z1], sol[z2]]) == [0, 1]


def test_infeasible():
    m = MilpModel()
    x = m.add_var("x", lb=0, ub=10)
    m.add_ge({x: 1}, 3)
    m.add_le({x: 1}, 2)
    for backend in ("bnb", "highs"):
        assert solve(m, MilpConfig(backend=backend)).status is Status.INFEASIBLE


def test_unknown_backend():
    with pytest.raises(ValueError):
        solve(MilpModel(), MilpConfig(backend="gurobi"))


def test_node_limit_reported():
    rng = np.random.default_rng(3)
    m = _random_model(rng, 12, 6)
    sol = branch_and_bound(m, MilpConfig(node_limit=1, rounding=False))
    assert sol.status in (Status.ITERATION_LIMIT, Status.FEASIBLE, Status.OPTIMAL, Status.INFEASIBLE)
    assert sol.nodes <= 1


def _random_model(rng, n_bin, n_cont, n_rows=None, minimize=True):
    m = MilpModel("rand")
    b = [m.add_var(f"b{k}", BINARY, 0, 1) for k in range(n_bin)]
    c = [m.add_var(f"x{k}", lb=-2, ub=3) for k in range(n_cont)]
    vs = b + c
    for r in range(n_rows or (n_bin + n_cont) // 2 + 1):
        picks = rng.choice(len(vs), size=min(4, len(vs)), replace=False)
        coeffs = {vs[k]: float(rng.integers(-3, 4)) or 1.0 for k in picks}
        sense = rng.choice(["<=", ">=", "="], p=[0.45, 0.45, 0.1])
        m.add_constraint(coeffs, sense, float(rng.integers(-2, 3)))
    if minimize:
        m.set_objective({v: float(rng.normal()) for v in vs})
    return m


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 10), st.integers(0, 5))
def test_bnb_matches_enumeration(seed, n_bin, n_cont):
    m = _random_model(np.random.default_rng(seed), n_bin, n_cont)
    ref = enumerate_binaries(m)
    got = branch_and_bound(m, MilpConfig(node_limit=10**6, time_limit=60))
    assert got.status.has_solution == ref.status.has_solution
    if ref.status.has_solution:
        assert m.is_feasible(got.values)
        assert got.objective == pytest.approx(ref.objective, abs=1e-6, rel=1e-6)


@pytest.mark.parametrize("n_bin", [16, 24, 30])
@pytest.mark.parametrize("seed", range(4))
def test_bnb_matches_enumeration_at_larger_size(seed, n_bin):
    rng = np.random.default_rng(100 + seed)
    m = _random_model(rng, n_bin, 4, n_rows=10)
    # a cardinality row keeps the number of feasible leaves enumerable
    m.add_le({v: 1.0 for v in m.binaries}, int(rng.integers(2, 5)), "card")
    ref = enumerate_binaries(m)
    got = branch_and_bound(m, MilpConfig(node_limit=10**6, time_limit=120))
    assert got.status.has_solution == ref.status.has_solution
    if ref.status.has_solution:
        assert got.objective == pytest.approx(ref.objective, abs=1e-6)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 8), st.integers(0, 4))
def test_solutions_verify_independently(seed, n_bin, n_cont):
    m = _random_model(np.random.default_rng(seed), n_bin, n_cont, minimize=False)
    for backend in ("bnb", "highs"):
        sol = solve(m, MilpConfig(backend=backend))
        if sol.status.has_solution:
            viol = m.violation(sol.values)
            assert max(viol.values()) <= 1e-6


def test_lp_format_sections():
    m = MilpModel("demo")
    x = m.add_var("x", lb=-1, ub=1)
    z = m.add_var("z", BINARY, 0, 1)
    m.add_le({x: 1, z: 2}, 1.5, "row")
    text = write_lp(m)
    order = [text.index(s) for s in ("Minimize", "Subject To", "Bounds", "Binaries", "End")]
    assert order == sorted(order)
    assert "obj: 0" in text
    assert " z" in text.split("Binaries")[1]


def test_lp_writer_names_are_sanitized():
    m = MilpModel()
    m.add_var("1 bad:name", lb=0, ub=1)
    m.add_var("1 bad:name", lb=0, ub=1)
    m.add_le({0: 1, 1: 1}, 1)
    back = read_lp(write_lp(m))
    assert back.n_vars == 2
    assert len({v.name for v in back.variables}) == 2


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(0, 6), st.integers(1, 5), st.booleans())
def test_lp_round_trip(seed, n_bin, n_cont, minimize):
    rng = np.random.default_rng(seed)
    m = _random_model(rng, n_bin, n_cont, minimize=minimize)
    back = read_lp(write_lp(m))
    assert back.n_vars == m.n_vars and back.n_constraints == m.n_constraints
    assert np.array_equal(back.lower, m.lower) and np.array_equal(back.upper, m.upper)
    assert list(back.binaries) == list(m.binaries)
    for a, b in zip(m.constraints, back.constraints):
        assert a.coeffs == b.coeffs and a.sense == b.sense and a.rhs == b.rhs
    assert back.objective == m.objective and back.minimize == m.minimize
    # same solution set: identical optimal value, and each solution is feasible in the other model
    s1, s2 = enumerate_binaries(m), enumerate_binaries(back)
    assert s1.status == s2.status
    if s1.status.has_solution:
        assert back.is_feasible(s1.values) and m.is_feasible(s2.values)
        assert s1.objective == pytest.approx(s2.objective, abs=1e-9)


def test_lp_reader_rejects_garbage():
    with pytest.raises(ModelError):
        read_lp("Subject To\n c: x <= \nEnd")
