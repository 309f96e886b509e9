"""LP text format writer and reader.

Section order is fixed::

    \\ Model <name>
    Minimize
     obj: <terms>       ("obj: 0" for feasibility models)
    Subject To
     <name>: <terms> <= | = | >= <rhs>
    Bounds
     <lb> <= <var> <= <ub>     (or "<var> free")
    Binaries
     <var> ...
    End

Every variable gets an explicit bounds line in declaration order, so the
default ``[0, inf)`` convention never matters and variable ids survive a
round trip.  Numbers are written with ``repr`` so the round trip is exact.
The reader understands the subset this writer emits plus ``Maximize``,
one-sided bounds and ``-inf``/``+inf`` spellings.
"""
from __future__ import annotations

import math
import re

from .model import BINARY, CONTINUOUS, MilpModel, ModelError

_VALID = re.compile(r"[^A-Za-z0-9_.\[\]]")


def _clean(name: str, used: set) -> str:
    s = _VALID.sub("_", name) or "x"
    if s[0].isdigit() or s[0] in ".eE" or s.lower() in ("inf", "infinity", "free"):
        s = "v" + s
    base, k = s, 1
    while s in used:
        s = f"{base}__{k}"
        k += 1
    used.add(s)
    return s


def _num(x: float) -> str:
    if math.isinf(x):
        return "+inf" if x > 0 else "-inf"
    return repr(float(x))


def _terms(coeffs: dict, names: list) -> str:
    parts = []
    for v, c in coeffs.items():
        sign = "-" if c < 0 else "+"
        parts.append(f"{sign} {_num(abs(c))} {names[v]}")
    s = " ".join(parts)
    return s[2:] if s.startswith("+ ") else s


def write_lp(model: MilpModel) -> str:
    used: set = set()
    names = [_clean(v.name, used) for v in model.variables]
    out = [f"\\ Model {model.name}", "Minimize"]
    if model.minimize and model.objective:
        out.append(f" obj: {_terms(model.objective, names)}")
    else:
        out.append(" obj: 0")
    out.append("Subject To")
    cused: set = set()
    for con in model.constraints:
        sense = {"<=": "<=", ">=": ">=", "=": "="}[con.sense]
        out.append(f" {_clean(con.name, cused)}: {_terms(con.coeffs, names)} {sense} {_num(con.rhs)}")
    out.append("Bounds")
    # every variable gets a line, in declaration order, so the reader can
    # rebuild the same variable ids
    for k, v in enumerate(model.variables):
        if math.isinf(v.lb) and v.lb < 0 and math.isinf(v.ub) and v.ub > 0:
            out.append(f" {names[k]} free")
        else:
            out.append(f" {_num(v.lb)} <= {names[k]} <= {_num(v.ub)}")
    bins = [names[k] for k, v in enumerate(model.variables) if v.kind is BINARY]
    if bins:
        out.append("Binaries")
        for i in range(0, len(bins), 8):
            out.append(" " + " ".join(bins[i:i + 8]))
    out.append("End")
    return "\n".join(out) + "\n"


_SECTIONS = {
    "minimize": "obj", "minimum": "obj", "min": "obj",
    "maximize": "max", "maximum": "max", "max": "max",
    "subject to": "st", "such that": "st", "st": "st", "s.t.": "st",
    "bounds": "bounds", "bound": "bounds",
    "binaries": "bin", "binary": "bin", "bin": "bin",
    "generals": "gen", "general": "gen", "end": "end",
}

_NUMBER = r"(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?"
_TOKEN = re.compile(r"\s*(<=|>=|=<|=>|=|<|>|" + _NUMBER + r"|[+-]|[^\s<>=+-]+)")
_NUMERIC = re.compile(r"^[+-]?(?:" + _NUMBER + r"|inf|infinity)$", re.IGNORECASE)


def _parse_float(tok: str) -> float:
    t = tok.lower()
    if t in ("inf", "+inf", "infinity", "+infinity"):
        return math.inf
    if t in ("-inf", "-infinity"):
        return -math.inf
    return float(tok)


def _tokens(s: str) -> list:
    return [m.group(1) for m in _TOKEN.finditer(s) if m.group(1).strip()]


def _is_number(tok: str) -> bool:
    return bool(_NUMERIC.match(tok))


def _signed(tokens: list) -> list:
    """Glue unary signs onto the numbers that follow them (bounds lines)."""
    out, k = [], 0
    while k < len(tokens):
        if tokens[k] in "+-" and k + 1 < len(tokens) and _is_number(tokens[k + 1]):
            out.append(tokens[k] + tokens[k + 1])
            k += 2
        else:
            out.append(tokens[k])
            k += 1
    return out


def _parse_linear(tokens: list) -> tuple:
    """Returns (terms as [(coef, name)], constant)."""
    terms, const = [], 0.0
    sign, coef = 1.0, None
    for tok in tokens:
        if tok in "+-":
            sign = sign * (-1.0 if tok == "-" else 1.0)
            continue
        if _is_number(tok):
            coef = (coef or 1.0) * _parse_float(tok)
            continue
        terms.append((sign * (1.0 if coef is None else coef), tok))
        sign, coef = 1.0, None
    if coef is not None:
        const += sign * coef
    return terms, const


def read_lp(text: str) -> MilpModel:
    model = MilpModel()
    index: dict = {}
    pending_bounds: dict = {}
    binaries: list = []

    def var(name):
        if name not in index:
            index[name] = model.add_var(name, CONTINUOUS, 0.0, math.inf)
        return index[name]

    section = None
    objective, obj_sense = [], True
    rows = []
    buf = ""
    for raw in text.splitlines():
        if raw.startswith("\\ Model "):
            model.name = raw[len("\\ Model "):].strip()
        line = raw.split("\\", 1)[0].strip()
        if not line:
            continue
        key = line.lower()
        if key in _SECTIONS:
            if buf:
                rows.append(buf)
                buf = ""
            section = _SECTIONS[key]
            if section == "max":
                obj_sense, section = False, "obj"
            if section == "end":
                break
            continue
        if section == "obj":
            objective.append(line)
        elif section == "st":
            if ":" in line and buf:
                rows.append(buf)
                buf = ""
            buf = (buf + " " + line).strip()
            if re.search(r"(<=|>=|=<|=>|=|<|>)\s*\S+\s*$", buf):
                rows.append(buf)
                buf = ""
        elif section == "bounds":
            toks = _signed(_tokens(line))
            if len(toks) == 2 and toks[1].lower() == "free":
                pending_bounds[toks[0]] = (-math.inf, math.inf)
            elif len(toks) == 5:
                lo, name, hi = _parse_float(toks[0]), toks[2], _parse_float(toks[4])
                pending_bounds[name] = (lo, hi)
            elif len(toks) == 3:
                name, op, val = toks
                if _is_number(name):
                    name, val = val, name
                    op = {"<=": ">=", ">=": "<=", "=<": "=>", "=>": "=<"}.get(op, op)
                val = _parse_float(val)
                lo, hi = pending_bounds.get(name, (0.0, math.inf))
                if op in ("<=", "=<", "<"):
                    hi = val
                elif op in (">=", "=>", ">"):
                    lo = val
                else:
                    lo = hi = val
                pending_bounds[name] = (lo, hi)
            else:
                raise ModelError(f"cannot parse bound line: {line!r}")
        elif section == "bin":
            binaries.extend(line.split())
        elif section == "gen":
            raise ModelError("general integer variables are not supported")
    if buf:
        rows.append(buf)

    obj_text = " ".join(objective)
    if ":" in obj_text:
        obj_text = obj_text.split(":", 1)[1]
    obj_terms, _ = _parse_linear(_tokens(obj_text))
    for name, (lo, hi) in pending_bounds.items():
        v = var(name)
        model.variables[v].lb, model.variables[v].ub = lo, hi
    for row in rows:
        name = None
        if ":" in row:
            name, row = row.split(":", 1)
            name = name.strip()
        toks = _tokens(row)
        k = next((i for i, t in enumerate(toks) if t in ("<=", ">=", "=<", "=>", "=", "<", ">")), None)
        if k is None or not any(_is_number(t) for t in toks[k + 1:]):
            raise ModelError(f"cannot parse constraint: {row.strip()!r}")
        terms, const = _parse_linear(toks[:k])
        rhs_terms, rhs = _parse_linear(toks[k + 1:])
        if rhs_terms:
            raise ModelError(f"variables on the right-hand side: {row.strip()!r}")
        sense = {"<": "<=", "=<": "<=", ">": ">=", "=>": ">="}.get(toks[k], toks[k])
        coeffs: dict = {}
        for c, n in terms:
            v = var(n)
            coeffs[v] = coeffs.get(v, 0.0) + c
        model.add_constraint(coeffs, sense, rhs - const, name)
    obj: dict = {}
    for c, n in obj_terms:
        v = var(n)
        obj[v] = obj.get(v, 0.0) + c
    for name in binaries:
        v = var(name)
        model.variables[v].kind = BINARY
        model.variables[v].lb, model.variables[v].ub = 0.0, 1.0
    if obj:
        if not obj_sense:
            obj = {v: -c for v, c in obj.items()}
        model.set_objective(obj, minimize=True)
    return model
