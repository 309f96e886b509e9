import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from contactopt.milp import BINARY, LinExpr, MilpConfig, MilpModel, ModelError, Status, solve
from contactopt.relax import (
    BilinearTerm,
    BinaryEncoded,
    McCormick,
    NaivePiecewise,
    PartitionSpec,
    Relaxation,
    binary_codes,
    binary_encoded,
    bilinear_term,
    compute_big_m,
    envelope_rows,
    implication,
    implication_eq,
    mccormick,
    piecewise_naive,
)

from oracles import attainable_w, contained, same_intervals


def _term_model(xb=(0.0, 1.0), yb=(0.0, 1.0)):
    m = MilpModel()
    x = m.add_var("x", lb=xb[0], ub=xb[1])
    y = m.add_var("y", lb=yb[0], ub=yb[1])
    return m, bilinear_term(m, x, y, "w")


def _w_range(m, term, x, y):
    """min and max of w at fixed (x, y) through two MILP solves."""
    out = []
    for sign in (1.0, -1.0):
        mm = m.copy()
        mm.variables[term.x].lb = mm.variables[term.x].ub = x
        mm.variables[term.y].lb = mm.variables[term.y].ub = y
        mm.set_objective({term.w: sign})
        sol = solve(mm, MilpConfig(backend="bnb"))
        assert sol.status is Status.OPTIMAL
        out.append(sol[term.w])
    return tuple(out)


def test_mccormick_examples():
    m, t = _term_model((0, 2), (0, 3))
    assert len(mccormick(m, t)) == 4
    assert _w_range(m, t, 2, 3) == pytest.approx((6, 6))
    m, t = _term_model((-1, 1), (-1, 1))
    mccormick(m, t)
    assert _w_range(m, t, 0, 0) == pytest.approx((-1, 1))
    m, t = _term_model()
    mccormick(m, t)
    for y in np.linspace(0, 1, 5):
        assert _w_range(m, t, 0, y) == pytest.approx((0, 0), abs=1e-12)


def test_bilinear_requires_bounds():
    m = MilpModel()
    x = m.add_var("x", lb=0)  # ub = inf
    y = m.add_var("y", lb=0, ub=1)
    with pytest.raises(ModelError):
        bilinear_term(m, x, y, "w")
    with pytest.raises(ModelError):
        BilinearTerm(0, 1, 2, (0, math.inf), (0, 1))


def test_binary_codes_match_worked_example():
    codes = binary_codes(4)
    assert codes == ((0, 0), (0, 1), (1, 0), (1, 1))
    d = codes[2]  # region (1, 0)
    assert (d[0], d[1]) == (1, 0)
    assert binary_codes(8)[5] == (1, 0, 1)


@pytest.mark.parametrize("C", [2, 4, 8, 16])
def test_binary_counts(C):
    m, t = _term_model()
    h = piecewise_naive(m, t, PartitionSpec.uniform(t, C))
    assert len(h.binaries) == C == m.binaries.size
    m, t = _term_model()
    h = binary_encoded(m, t, PartitionSpec.uniform(t, C, pad_to_power_of_two=True))
    assert len(h.binaries) == math.ceil(math.log2(C)) == m.binaries.size


def test_non_power_of_two_is_padded():
    m, t = _term_model((0, 3), (0, 1))
    spec = PartitionSpec.uniform(t, 3, pad_to_power_of_two=True)
    assert spec.C == 4
    assert [r[:2] for r in spec.region_bounds] == pytest.approx([(0, 1), (1, 2), (2, 2.5), (2.5, 3)])
    h = binary_encoded(m, t, spec)
    assert len(h.binaries) == 2
    with pytest.raises(ModelError):
        binary_encoded(*_term_model(), PartitionSpec.uniform(t, 3))


def test_partition_validation():
    _, t = _term_model((0, 2), (0, 1))
    good = PartitionSpec.uniform(t, 2)
    good.validate(t)
    with pytest.raises(ModelError):
        PartitionSpec(good.region_bounds, ((0,), (0,))).validate(t)
    with pytest.raises(ModelError):
        PartitionSpec(((0, 0.9, 0, 1), (1, 2, 0, 1)), good.codes).validate(t)
    with pytest.raises(ModelError):
        piecewise_naive(*_term_model(), PartitionSpec.uniform(t, 1))


def test_naive_region_follows_x():
    m, t = _term_model((0, 2), (0, 1))
    h = piecewise_naive(m, t, PartitionSpec.uniform(t, 2))
    m.variables[t.x].lb = m.variables[t.x].ub = 0.5
    sol = solve(m, MilpConfig(backend="bnb"))
    eta = [sol[v] for v in h.binaries]
    assert eta == [1.0, 0.0]


def test_encoded_activation_semantics():
    # K = 2: fix the bits to region (1, 0); that region's s and eta vanish,
    # a region one bit away gets eta = 1 and its envelope is switched off
    m, t = _term_model((0, 4), (0, 1))
    h = binary_encoded(m, t, PartitionSpec.uniform(t, 4))
    nu, s, eta = h.aux["nu"], h.aux["s"], h.aux["eta"]
    m.variables[nu[0]].lb = m.variables[nu[0]].ub = 1
    m.variables[nu[1]].lb = m.variables[nu[1]].ub = 0
    for target in (2, 0, 3):
        for sign in (1, -1):
            mm = m.copy()
            mm.set_objective({eta[target]: sign})
            sol = solve(mm, MilpConfig(backend="bnb"))
            expected = {2: 0.0, 0: 1.0, 3: 1.0}[target]
            assert sol[eta[target]] == pytest.approx(expected)
            if target == 2:
                assert [sol[v] for v in s[2]] == pytest.approx([0, 0])
            # x is forced into region 2 = [2, 3]
            assert 2 - 1e-9 <= sol[t.x] <= 3 + 1e-9
    mm = m.copy()
    mm.variables[t.x].lb = mm.variables[t.x].ub = 2.5
    mm.variables[t.y].lb = mm.variables[t.y].ub = 1.0
    mm.set_objective({t.w: 1})
    assert solve(mm, MilpConfig(backend="bnb"))[t.w] == pytest.approx(2.5)


def test_compute_big_m_examples():
    m = MilpModel()
    x = m.add_var("x", lb=0, ub=1)
    y = m.add_var("y", lb=-1, ub=1)
    assert compute_big_m(LinExpr({x: 1, y: 2}), m) == pytest.approx(3.15)
    assert compute_big_m(LinExpr(const=5.0), m) == pytest.approx(5.25)
    u = m.add_var("u", lb=0)
    with pytest.raises(ModelError):
        compute_big_m(LinExpr({u: 1}), m)
    with pytest.raises(ModelError):
        implication(m, x, LinExpr({x: 1}), M=math.inf)


@pytest.mark.parametrize("z_val, slack", [(1, False), (0, True)])
def test_implication(z_val, slack):
    m = MilpModel()
    x = m.add_var("x", lb=0, ub=4)
    z = m.add_var("z", BINARY, 0, 1)
    implication(m, z, LinExpr({x: 1}, -1.0))  # z = 1 => x <= 1
    m.variables[z].lb = m.variables[z].ub = z_val
    m.set_objective({x: -1})
    sol = solve(m)
    assert sol[x] == pytest.approx(4.0 if slack else 1.0)


def test_implication_eq_adds_two_rows():
    m = MilpModel()
    x = m.add_var("x", lb=-1, ub=1)
    z = m.add_var("z", BINARY, 0, 1)
    ids = implication_eq(m, z, LinExpr({x: 1}, -0.5))
    assert len(ids) == 2 and m.n_constraints == 2
    m.variables[z].lb = 1
    for sign in (1, -1):
        mm = m.copy()
        mm.set_objective({x: sign})
        assert solve(mm)[x] == pytest.approx(0.5)


def _grid(xb, yb, n=21):
    return np.meshgrid(np.linspace(*xb, n), np.linspace(*yb, n), indexing="ij")


@pytest.mark.parametrize("C", [2, 4, 8])
def test_encoded_equals_naive_projection(C):
    xb, yb = (0.0, 0.07), (-0.8, 1.6)
    X, Y = _grid(xb, yb)
    m1, t1 = _term_model(xb, yb)
    piecewise_naive(m1, t1, PartitionSpec.uniform(t1, C))
    m2, t2 = _term_model(xb, yb)
    binary_encoded(m2, t2, PartitionSpec.uniform(t2, C))
    a = attainable_w(m1, t1.x, t1.y, t1.w, X, Y)
    b = attainable_w(m2, t2.x, t2.y, t2.w, X, Y)
    assert same_intervals(a, b, tol=1e-9)


def test_single_region_is_plain_mccormick():
    xb, yb = (-1.0, 2.0), (0.5, 3.0)
    X, Y = _grid(xb, yb, 11)
    m1, t1 = _term_model(xb, yb)
    mccormick(m1, t1)
    m2, t2 = _term_model(xb, yb)
    spec = PartitionSpec.uniform(t2, 1)
    for k, g in enumerate(envelope_rows(t2, *spec.region_bounds[0])):
        m2.add_le(g, 0.0)
    assert same_intervals(attainable_w(m1, t1.x, t1.y, t1.w, X, Y),
                          attainable_w(m2, t2.x, t2.y, t2.w, X, Y))


def test_monotone_tightening():
    xb, yb = (0.0, 1.0), (-1.0, 1.0)
    X, Y = _grid(xb, yb)
    sets = []
    for C in (1, 2, 4):
        m, t = _term_model(xb, yb)
        if C == 1:
            mccormick(m, t)
        else:
            binary_encoded(m, t, PartitionSpec.uniform(t, C))
        sets.append(attainable_w(m, t.x, t.y, t.w, X, Y))
    assert contained(sets[2], sets[1]) and contained(sets[1], sets[0])


@settings(max_examples=40, deadline=None)
@given(st.sampled_from(["mccormick", "naive:2", "naive:4", "encoded:2", "encoded:4"]),
       st.floats(-2, 0), st.floats(0.1, 2), st.floats(-2, 0), st.floats(0.1, 2), st.integers(0, 10**6))
def test_soundness_gap_bound(rel, xl, dx, yl, dy, seed):
    """Any feasible (x, y, w) stays in the box and within the active region's gap."""
    rng = np.random.default_rng(seed)
    xb, yb = (xl, xl + dx), (yl, yl + dy)
    m, t = _term_model(xb, yb)
    h = Relaxation.parse(rel).apply(m, t)
    m.set_objective({t.w: float(rng.choice([-1, 1])), t.x: float(rng.normal()), t.y: float(rng.normal())})
    sol = solve(m, MilpConfig(backend="bnb"))
    x, y, w = sol[t.x], sol[t.y], sol[t.w]
    assert xb[0] - 1e-9 <= x <= xb[1] + 1e-9 and yb[0] - 1e-9 <= y <= yb[1] + 1e-9
    region = h.spec.region_of(x) if h.spec is not None else None
    assert abs(w - x * y) <= h.gap_bound(region) + 1e-7


@settings(max_examples=40, deadline=None)
@given(st.sampled_from([2, 4, 8]), st.integers(0, 7), st.booleans(), st.booleans())
def test_corner_exactness(C, region, right, top):
    xb, yb = (0.0, 0.08), (-0.5, 1.0)
    m, t = _term_model(xb, yb)
    h = binary_encoded(m, t, PartitionSpec.uniform(t, C))
    xl, xu, yl, yu = h.spec.region_bounds[region % C]
    x, y = (xu if right else xl), (yu if top else yl)
    lo, hi = _w_range(m, t, x, y)
    assert lo == pytest.approx(x * y, abs=1e-9) and hi == pytest.approx(x * y, abs=1e-9)


def test_relaxation_parsing():
    assert str(Relaxation.parse("mccormick")) == "mccormick"
    assert Relaxation.parse("encoded:4") == BinaryEncoded(4)
    assert Relaxation.parse("naive:8") == NaivePiecewise(8)
    assert Relaxation.parse("mc") == McCormick()
    with pytest.raises(ValueError):
        Relaxation.parse("sos2:4")
    with pytest.raises(ValueError):
        Relaxation("encoded", 1)
