"""Linear relaxations of bilinear products ``w = x * y``.

Three builders share one interface: plain McCormick envelopes, a piecewise
envelope selected by one binary per region, and the same piecewise envelope
selected through a binary code word with ``ceil(log2 C)`` binaries.  Every
conditional row is written in big-M form with M from :func:`compute_big_m`.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Mapping, Sequence, Tuple, Union

from .milp import BINARY, CONTINUOUS, LinExpr, MilpModel, ModelError, VarId

BIG_M_SAFETY = 1.05


@dataclass(frozen=True)
class BilinearTerm:
    w: VarId
    x: VarId
    y: VarId
    x_bounds: Tuple[float, float]
    y_bounds: Tuple[float, float]

    def __post_init__(self):
        for label, (lo, hi) in (("x", self.x_bounds), ("y", self.y_bounds)):
            if not (math.isfinite(lo) and math.isfinite(hi)):
                raise ModelError(f"bilinear term needs finite bounds on {label}")
            if lo > hi:
                raise ModelError(f"bilinear term: {label} bounds reversed")

    def gap_bound(self) -> float:
        """Largest |w - xy| the plain envelope admits."""
        (xl, xu), (yl, yu) = self.x_bounds, self.y_bounds
        return (xu - xl) * (yu - yl) / 4.0


def binary_codes(C: int) -> Tuple[Tuple[int, ...], ...]:
    """Plain binary code words, most significant bit first, for regions 0..C-1."""
    K = max(0, math.ceil(math.log2(C))) if C > 1 else 0
    return tuple(tuple((c >> (K - 1 - k)) & 1 for k in range(K)) for c in range(C))


@dataclass(frozen=True)
class PartitionSpec:
    region_bounds: Tuple[Tuple[float, float, float, float], ...]  # (xl, xu, yl, yu)
    codes: Tuple[Tuple[int, ...], ...]
    axis: str = "x"

    @property
    def C(self) -> int:
        return len(self.region_bounds)

    @property
    def K(self) -> int:
        return len(self.codes[0]) if self.codes else 0

    @classmethod
    def uniform(cls, term: BilinearTerm, C: int, axis: str = "x",
                pad_to_power_of_two: bool = False) -> "PartitionSpec":
        """Equal-width regions along one axis; the other axis keeps its global bounds.

        With ``pad_to_power_of_two`` the last region is split in halves until
        the count is a power of two, so every code word names a region.
        """
        if C < 1:
            raise ValueError("need at least one region")
        lo, hi = term.x_bounds if axis == "x" else term.y_bounds
        cuts = [lo + (hi - lo) * k / C for k in range(C + 1)]
        cuts[-1] = hi
        if pad_to_power_of_two:
            target = 1 << max(0, math.ceil(math.log2(C))) if C > 1 else 1
            while len(cuts) - 1 < target:
                a, b = cuts[-2], cuts[-1]
                cuts.insert(-1, 0.5 * (a + b))
        regions = []
        for a, b in zip(cuts[:-1], cuts[1:]):
            if axis == "x":
                regions.append((a, b, *term.y_bounds))
            else:
                regions.append((*term.x_bounds, a, b))
        return cls(tuple(regions), binary_codes(len(regions)), axis)

    def validate(self, term: BilinearTerm, tol: float = 1e-12) -> None:
        if len(set(self.codes)) != len(self.codes):
            raise ModelError("duplicate code words")
        if len(self.codes) != self.C:
            raise ModelError("one code word per region required")
        if any(b not in (0, 1) for code in self.codes for b in code):
            raise ModelError("code words must be 0/1")
        lo, hi = term.x_bounds if self.axis == "x" else term.y_bounds
        k0, k1 = (0, 1) if self.axis == "x" else (2, 3)
        spans = sorted((r[k0], r[k1]) for r in self.region_bounds)
        if abs(spans[0][0] - lo) > tol or abs(spans[-1][1] - hi) > tol:
            raise ModelError("regions do not cover the global bounds")
        for (a0, b0), (a1, b1) in zip(spans[:-1], spans[1:]):
            if abs(b0 - a1) > tol:
                raise ModelError("regions leave a gap or overlap")
        for r in self.region_bounds:
            if r[0] > r[1] or r[2] > r[3]:
                raise ModelError("region with reversed bounds")

    def region_of(self, value: float, tol: float = 1e-9) -> int:
        k0, k1 = (0, 1) if self.axis == "x" else (2, 3)
        for c, r in enumerate(self.region_bounds):
            if r[k0] - tol <= value <= r[k1] + tol:
                return c
        raise ValueError(f"{value} outside the partition")


@dataclass
class RelaxationHandle:
    kind: str
    term: BilinearTerm
    spec: Union[PartitionSpec, None] = None
    binaries: List[VarId] = field(default_factory=list)
    aux: dict = field(default_factory=dict)
    constraints: List[int] = field(default_factory=list)

    def gap_bound(self, active_region: Union[int, None] = None) -> float:
        if self.spec is None:
            return self.term.gap_bound()
        regions = self.spec.region_bounds if active_region is None else [self.spec.region_bounds[active_region]]
        return max((xu - xl) * (yu - yl) / 4.0 for xl, xu, yl, yu in regions)


# ---------------------------------------------------------------------------
# big-M helpers

def _bounds_lookup(bounds):
    if isinstance(bounds, MilpModel):
        return bounds.bounds
    return lambda v: bounds[v]


def expr_interval(expr: LinExpr, bounds) -> Tuple[float, float]:
    get = _bounds_lookup(bounds)
    lo = hi = expr.const
    for v, c in expr.terms.items():
        vl, vu = get(v)
        if not (math.isfinite(vl) and math.isfinite(vu)):
            raise ModelError(f"variable {v} is unbounded; cannot bound the expression")
        lo += min(c * vl, c * vu)
        hi += max(c * vl, c * vu)
    return lo, hi


def compute_big_m(expr: LinExpr, bounds: Union[MilpModel, Mapping]) -> float:
    """Interval-arithmetic bound on |expr| over the variable box, times 1.05."""
    lo, hi = expr_interval(expr, bounds)
    return BIG_M_SAFETY * max(abs(lo), abs(hi))


def _as_expr(indicator) -> LinExpr:
    return indicator if isinstance(indicator, LinExpr) else LinExpr.var(indicator)


def implication(model: MilpModel, indicator, g: LinExpr, M: Union[float, None] = None,
                active: int = 1, name: Union[str, None] = None) -> int:
    """Enforce ``g <= 0`` whenever ``indicator == active``.

    active=1 writes ``g <= M (1 - indicator)``; active=0 writes
    ``g <= M * indicator`` (the indicator may then be any nonnegative
    expression that is at least 1 when the row should be slack).
    """
    if M is None:
        M = compute_big_m(g, model)
    if not math.isfinite(M):
        raise ModelError("big-M must be finite")
    ind = _as_expr(indicator)
    if active == 1:
        return model.add_le(g + M * ind, M, name)
    return model.add_le(g - M * ind, 0.0, name)


def implication_eq(model: MilpModel, indicator, g: LinExpr, M: Union[float, None] = None,
                   active: int = 1, name: Union[str, None] = None) -> Tuple[int, int]:
    """``g == 0`` whenever ``indicator == active``, as two opposing rows."""
    if M is None:
        M = compute_big_m(g, model)
    return (implication(model, indicator, g, M, active, name),
            implication(model, indicator, -g, M, active, name))


# ---------------------------------------------------------------------------
# envelopes

def envelope_rows(term: BilinearTerm, xl, xu, yl, yu) -> List[LinExpr]:
    """The four McCormick inequalities over a box, each as ``g <= 0``."""
    x, y, w = LinExpr.var(term.x), LinExpr.var(term.y), LinExpr.var(term.w)
    return [
        xl * y + yl * x - xl * yl - w,
        xu * y + yu * x - xu * yu - w,
        w - (xu * y + yl * x - xu * yl),
        w - (xl * y + yu * x - xl * yu),
    ]


def box_rows(term: BilinearTerm, xl, xu, yl, yu) -> List[LinExpr]:
    """Region membership rows as ``g <= 0``; rows implied by the global box are skipped."""
    x, y = LinExpr.var(term.x), LinExpr.var(term.y)
    (gxl, gxu), (gyl, gyu) = term.x_bounds, term.y_bounds
    rows = []
    if xl > gxl:
        rows.append(xl - x)
    if xu < gxu:
        rows.append(x - xu)
    if yl > gyl:
        rows.append(yl - y)
    if yu < gyu:
        rows.append(y - yu)
    return rows


def _check_term(model: MilpModel, term: BilinearTerm) -> None:
    for v, (lo, hi) in ((term.x, term.x_bounds), (term.y, term.y_bounds)):
        vl, vu = model.bounds(v)
        if vl < lo - 1e-12 or vu > hi + 1e-12:
            raise ModelError(f"variable {model.variables[v].name} bounds exceed the term bounds")
    model.bounds(term.w)


def bilinear_term(model: MilpModel, x: VarId, y: VarId, name: str) -> BilinearTerm:
    """Register ``w`` for ``x * y`` with bounds from the product of intervals."""
    xb, yb = model.bounds(x), model.bounds(y)
    if not all(math.isfinite(b) for b in (*xb, *yb)):
        raise ModelError(f"{name}: bilinear factors must be bounded")
    corners = [a * b for a in xb for b in yb]
    w = model.add_var(name, CONTINUOUS, min(corners), max(corners))
    return BilinearTerm(w, x, y, xb, yb)


def mccormick(model: MilpModel, term: BilinearTerm) -> List[int]:
    _check_term(model, term)
    (xl, xu), (yl, yu) = term.x_bounds, term.y_bounds
    return [model.add_le(g, 0.0, f"mc_{model.variables[term.w].name}_{k}")
            for k, g in enumerate(envelope_rows(term, xl, xu, yl, yu))]


def mccormick_handle(model: MilpModel, term: BilinearTerm) -> RelaxationHandle:
    return RelaxationHandle("mccormick", term, None, [], {}, mccormick(model, term))


def piecewise_naive(model: MilpModel, term: BilinearTerm, spec: PartitionSpec,
                    global_envelope: bool = True) -> RelaxationHandle:
    """One binary per region; exactly one region is selected.

    ``global_envelope`` also adds the whole-box envelope.  It never cuts off
    an integral point (each regional envelope lies inside it) but keeps the
    LP relaxation at least as tight as plain McCormick.
    """
    if spec.C < 2:
        raise ModelError("piecewise relaxation needs C >= 2 (use mccormick for one region)")
    _check_term(model, term)
    spec.validate(term)
    base = model.variables[term.w].name
    eta = [model.add_var(f"eta_{base}_{c}", BINARY, 0, 1) for c in range(spec.C)]
    cids = [model.add_eq(LinExpr({e: 1.0 for e in eta}), 1.0, f"sel_{base}")]
    for c, (xl, xu, yl, yu) in enumerate(spec.region_bounds):
        for k, g in enumerate(envelope_rows(term, xl, xu, yl, yu) + box_rows(term, xl, xu, yl, yu)):
            cids.append(implication(model, eta[c], g, active=1, name=f"pw_{base}_{c}_{k}"))
    if global_envelope:
        cids += mccormick(model, term)
    return RelaxationHandle("naive", term, spec, eta, {"eta": eta}, cids)


def binary_encoded(model: MilpModel, term: BilinearTerm, spec: PartitionSpec,
                   global_envelope: bool = True) -> RelaxationHandle:
    """Region selection through a K-bit code word.

    For region c, s_ck measures whether bit k of the code disagrees with the
    binary nu_k, and eta_c = sum_k s_ck is zero exactly for the selected
    region; the region's envelope and box rows are enforced when eta_c = 0.
    """
    _check_term(model, term)
    spec.validate(term)
    C, K = spec.C, spec.K
    if C < 2 or (C & (C - 1)) != 0:
        raise ModelError("binary encoding needs a power-of-two region count; pad the partition")
    base = model.variables[term.w].name
    nu = [model.add_var(f"nu_{base}_{k}", BINARY, 0, 1) for k in range(K)]
    s = [[model.add_var(f"s_{base}_{c}_{k}", CONTINUOUS, 0.0, 1.0) for k in range(K)] for c in range(C)]
    eta = [model.add_var(f"etac_{base}_{c}", CONTINUOUS, 0.0, float(K)) for c in range(C)]
    cids = []
    for c, code in enumerate(spec.codes):
        for k, d in enumerate(code):
            sck, n = LinExpr.var(s[c][k]), LinExpr.var(nu[k])
            # s >= |nu - d| with d constant
            cids.append(model.add_ge(sck - n, -d, f"sabs1_{base}_{c}_{k}"))
            cids.append(model.add_ge(sck + n, d, f"sabs2_{base}_{c}_{k}"))
            # s <= M (nu + d - 2 nu d): the mismatch indicator is linear since d is fixed
            mismatch = n if d == 0 else 1.0 - n
            M = compute_big_m(sck, model)
            cids.append(model.add_le(sck - M * mismatch, 0.0, f"sub_{base}_{c}_{k}"))
        cids.append(model.add_eq(LinExpr({**{s[c][k]: 1.0 for k in range(K)}, eta[c]: -1.0}), 0.0,
                                 f"eta_{base}_{c}"))
        xl, xu, yl, yu = spec.region_bounds[c]
        for k, g in enumerate(envelope_rows(term, xl, xu, yl, yu) + box_rows(term, xl, xu, yl, yu)):
            cids.append(implication(model, eta[c], g, active=0, name=f"enc_{base}_{c}_{k}"))
    if global_envelope:
        cids += mccormick(model, term)
    return RelaxationHandle("encoded", term, spec, nu, {"nu": nu, "s": s, "eta": eta}, cids)


@dataclass(frozen=True)
class Relaxation:
    """Which relaxation a C-Opt model uses for its bilinear moment terms."""

    kind: str = "encoded"  # mccormick | naive | encoded
    C: int = 8

    def __post_init__(self):
        if self.kind not in ("mccormick", "naive", "encoded"):
            raise ValueError(f"unknown relaxation {self.kind!r}")
        if self.kind != "mccormick" and self.C < 2:
            raise ValueError("piecewise relaxations need C >= 2")
        if self.kind == "mccormick":
            object.__setattr__(self, "C", 1)

    @classmethod
    def parse(cls, text: str) -> "Relaxation":
        """'mccormick', 'naive:8' or 'encoded:8'."""
        kind, _, c = text.strip().lower().partition(":")
        aliases = {"mc": "mccormick", "piecewise": "naive", "binary": "encoded", "be": "encoded"}
        kind = aliases.get(kind, kind)
        return cls(kind, int(c) if c else (1 if kind == "mccormick" else 8))

    def __str__(self) -> str:
        return "mccormick" if self.kind == "mccormick" else f"{self.kind}:{self.C}"

    def apply(self, model: MilpModel, term: BilinearTerm, axis: str = "x") -> RelaxationHandle:
        if self.kind == "mccormick":
            return mccormick_handle(model, term)
        spec = PartitionSpec.uniform(term, self.C, axis, pad_to_power_of_two=self.kind == "encoded")
        if self.kind == "naive":
            return piecewise_naive(model, term, spec)
        return binary_encoded(model, term, spec)


def McCormick() -> Relaxation:
    return Relaxation("mccormick", 1)


def NaivePiecewise(C: int) -> Relaxation:
    return Relaxation("naive", C)


def BinaryEncoded(C: int) -> Relaxation:
    return Relaxation("encoded", C)
