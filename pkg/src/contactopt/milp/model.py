"""Solver-neutral mixed-integer linear models."""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Mapping, NewType, Optional, Union

import numpy as np
import scipy.sparse as sp

VarId = NewType("VarId", int)

LE, EQ, GE = "<=", "=", ">="
_SENSES = {LE, EQ, GE, "=="}


class ModelError(ValueError):
    pass


class VarKind(str, enum.Enum):
    CONTINUOUS = "continuous"
    BINARY = "binary"


CONTINUOUS = VarKind.CONTINUOUS
BINARY = VarKind.BINARY


class LinExpr:
    """Sparse affine expression ``sum(coef * var) + const``."""

    __slots__ = ("terms", "const")

    def __init__(self, terms: Optional[Mapping[int, float]] = None, const: float = 0.0):
        self.terms: Dict[int, float] = dict(terms) if terms else {}
        self.const = float(const)

    @classmethod
    def var(cls, v: int, coef: float = 1.0) -> "LinExpr":
        return cls({v: coef})

    def copy(self) -> "LinExpr":
        return LinExpr(self.terms, self.const)

    def add_term(self, v: int, coef: float) -> "LinExpr":
        if coef != 0.0:
            self.terms[v] = self.terms.get(v, 0.0) + coef
        return self

    def _iadd(self, other, scale: float) -> "LinExpr":
        if isinstance(other, LinExpr):
            for v, c in other.terms.items():
                self.terms[v] = self.terms.get(v, 0.0) + scale * c
            self.const += scale * other.const
        else:
            self.const += scale * float(other)
        return self

    def __add__(self, other):
        return self.copy()._iadd(other, 1.0)

    __radd__ = __add__

    def __sub__(self, other):
        return self.copy()._iadd(other, -1.0)

    def __rsub__(self, other):
        return (-self)._iadd(other, 1.0)

    def __neg__(self):
        return self * -1.0

    def __mul__(self, k):
        k = float(k)
        return LinExpr({v: k * c for v, c in self.terms.items()}, k * self.const)

    __rmul__ = __mul__

    def value(self, x) -> float:
        return self.const + sum(c * x[v] for v, c in self.terms.items())

    def __repr__(self):
        body = " + ".join(f"{c:g}*x{v}" for v, c in self.terms.items())
        return f"LinExpr({body or '0'} + {self.const:g})"


def lin(terms: Iterable = (), const: float = 0.0) -> LinExpr:
    """Build an expression from ``(var, coef)`` pairs."""
    e = LinExpr(const=const)
    for v, c in terms:
        e.add_term(v, c)
    return e


@dataclass
class Variable:
    name: str
    kind: VarKind
    lb: float
    ub: float
    priority: int = 0  # branching class; higher classes are branched first


@dataclass
class Constraint:
    coeffs: Dict[int, float]
    sense: str
    rhs: float
    name: str


@dataclass
class MilpModel:
    name: str = "model"
    variables: List[Variable] = field(default_factory=list)
    constraints: List[Constraint] = field(default_factory=list)
    objective: Dict[int, float] = field(default_factory=dict)
    objective_constant: float = 0.0
    minimize: bool = False  # False: feasibility model with a zero objective

    @property
    def n_vars(self) -> int:
        return len(self.variables)

    @property
    def n_constraints(self) -> int:
        return len(self.constraints)

    def add_var(self, name: str, kind: Union[VarKind, str] = CONTINUOUS,
                lb: float = 0.0, ub: float = math.inf, priority: int = 0) -> VarId:
        kind = VarKind(kind)
        lb, ub = float(lb), float(ub)
        if math.isnan(lb) or math.isnan(ub) or lb > ub:
            raise ModelError(f"variable {name!r}: invalid bounds [{lb}, {ub}]")
        if kind is BINARY and (lb, ub) != (0.0, 1.0):
            raise ModelError(f"binary variable {name!r} must have bounds [0, 1]")
        self.variables.append(Variable(name, kind, lb, ub, int(priority)))
        return VarId(len(self.variables) - 1)

    def _check_var(self, v) -> int:
        v = int(v)
        if not 0 <= v < len(self.variables):
            raise ModelError(f"unknown variable id {v}")
        return v

    def _normalize(self, expr) -> LinExpr:
        if isinstance(expr, LinExpr):
            e = expr
        elif isinstance(expr, Mapping):
            e = LinExpr(expr)
        else:
            e = lin(expr)
        for v, c in e.terms.items():
            self._check_var(v)
            if not math.isfinite(c):
                raise ModelError(f"non-finite coefficient {c} on variable {v}")
        if not math.isfinite(e.const):
            raise ModelError("non-finite constant")
        return e

    def add_constraint(self, expr, sense: str, rhs: float = 0.0, name: Optional[str] = None) -> int:
        """Add ``expr sense rhs``; any constant in ``expr`` moves to the right side."""
        if sense not in _SENSES:
            raise ModelError(f"unknown sense {sense!r}")
        sense = EQ if sense == "==" else sense
        e = self._normalize(expr)
        coeffs = {v: c for v, c in e.terms.items() if c != 0.0}
        if not coeffs:
            raise ModelError("constraint expression has no variables")
        rhs = float(rhs) - e.const
        if not math.isfinite(rhs):
            raise ModelError("non-finite right-hand side")
        cid = len(self.constraints)
        self.constraints.append(Constraint(coeffs, sense, rhs, name or f"c{cid}"))
        return cid

    def add_le(self, expr, rhs=0.0, name=None) -> int:
        return self.add_constraint(expr, LE, rhs, name)

    def add_ge(self, expr, rhs=0.0, name=None) -> int:
        return self.add_constraint(expr, GE, rhs, name)

    def add_eq(self, expr, rhs=0.0, name=None) -> int:
        return self.add_constraint(expr, EQ, rhs, name)

    def set_objective(self, expr, minimize: bool = True) -> None:
        e = self._normalize(expr)
        self.objective = {v: c for v, c in e.terms.items() if c != 0.0}
        self.objective_constant = e.const
        self.minimize = minimize

    def var_index(self, name: str) -> VarId:
        for k, v in enumerate(self.variables):
            if v.name == name:
                return VarId(k)
        raise KeyError(name)

    def bounds(self, v) -> tuple:
        var = self.variables[self._check_var(v)]
        return var.lb, var.ub

    @property
    def binaries(self) -> np.ndarray:
        return np.array([k for k, v in enumerate(self.variables) if v.kind is BINARY], dtype=int)

    @property
    def lower(self) -> np.ndarray:
        return np.array([v.lb for v in self.variables])

    @property
    def upper(self) -> np.ndarray:
        return np.array([v.ub for v in self.variables])

    def objective_vector(self) -> np.ndarray:
        c = np.zeros(self.n_vars)
        for v, coef in self.objective.items():
            c[v] = coef
        return c

    def matrix(self):
        """Constraint matrix (CSR), senses array and right-hand sides."""
        rows, cols, vals = [], [], []
        for r, con in enumerate(self.constraints):
            for v, c in con.coeffs.items():
                rows.append(r)
                cols.append(v)
                vals.append(c)
        A = sp.csr_matrix((vals, (rows, cols)), shape=(self.n_constraints, self.n_vars))
        senses = np.array([c.sense for c in self.constraints], dtype=object)
        rhs = np.array([c.rhs for c in self.constraints])
        return A, senses, rhs

    def violation(self, x, int_tol: float = 1e-6) -> dict:
        """Independent re-evaluation of every constraint, bound and integrality."""
        x = np.asarray(x, dtype=float)
        worst_row = 0.0
        for con in self.constraints:
            act = sum(c * x[v] for v, c in con.coeffs.items())
            if con.sense == LE:
                worst_row = max(worst_row, act - con.rhs)
            elif con.sense == GE:
                worst_row = max(worst_row, con.rhs - act)
            else:
                worst_row = max(worst_row, abs(act - con.rhs))
        lo, hi = self.lower, self.upper
        worst_bound = float(np.max(np.maximum(lo - x, x - hi), initial=0.0))
        b = self.binaries
        worst_int = float(np.max(np.abs(x[b] - np.round(x[b])), initial=0.0)) if len(b) else 0.0
        return {"constraints": worst_row, "bounds": worst_bound, "integrality": worst_int}

    def is_feasible(self, x, tol: float = 1e-6) -> bool:
        return all(val <= tol for val in self.violation(x).values())

    def objective_value(self, x) -> float:
        return self.objective_constant + sum(c * x[v] for v, c in self.objective.items())

    def copy(self) -> "MilpModel":
        m = MilpModel(self.name)
        m.variables = [Variable(v.name, v.kind, v.lb, v.ub, v.priority) for v in self.variables]
        m.constraints = [Constraint(dict(c.coeffs), c.sense, c.rhs, c.name) for c in self.constraints]
        m.objective = dict(self.objective)
        m.objective_constant = self.objective_constant
        m.minimize = self.minimize
        return m
