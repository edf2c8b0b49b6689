"""Realistic-space constraints: univariate (binary, range) and multivariate (OHE, relations).

All checks run on vectors in raw (denormalized) units, still one-hot encoded.
"""
from __future__ import annotations

import ast
import math
import operator
import warnings
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

DEFAULT_TOL = 1e-3
# slack on range bounds for values that went through normalize/denormalize
RANGE_SLACK = 1e-9

_BINOPS = {ast.Add: operator.add, ast.Sub: operator.sub, ast.Mult: operator.mul,
           ast.Div: operator.truediv, ast.Pow: operator.pow}
_UNOPS = {ast.USub: operator.neg, ast.UAdd: operator.pos}
_CONSTANTS = {"pi": math.pi, "e": math.e}


class ConstraintError(ValueError):
    pass


class Expression:
    """Arithmetic expression over raw feature names: + - * / ^ and constants."""

    def __init__(self, text: str):
        self.text = text.strip()
        src = self.text.replace("^", "**").replace("×", "*").replace("÷", "/").replace("π", "pi")
        try:
            tree = ast.parse(src, mode="eval")
        except SyntaxError as exc:
            raise ConstraintError(f"malformed expression {text!r}: {exc.msg}") from None
        self.names = set()
        self._check(tree.body)
        self._tree = tree.body

    def _check(self, node):
        if isinstance(node, ast.BinOp) and type(node.op) in _BINOPS:
            self._check(node.left)
            self._check(node.right)
        elif isinstance(node, ast.UnaryOp) and type(node.op) in _UNOPS:
            self._check(node.operand)
        elif isinstance(node, ast.Constant) and isinstance(node.value, (int, float)) \
                and not isinstance(node.value, bool):
            pass
        elif isinstance(node, ast.Name):
            self.names.add(node.id)
        else:
            raise ConstraintError(f"unsupported syntax in {self.text!r}")

    def evaluate(self, values: dict) -> float:
        """Evaluate with raw feature values; ZeroDivisionError propagates."""
        def ev(node):
            if isinstance(node, ast.BinOp):
                return float(_BINOPS[type(node.op)](ev(node.left), ev(node.right)))
            if isinstance(node, ast.UnaryOp):
                return _UNOPS[type(node.op)](ev(node.operand))
            if isinstance(node, ast.Constant):
                return float(node.value)
            # a feature named like a constant shadows it
            if node.id in values:
                return float(values[node.id])
            return _CONSTANTS[node.id]
        return ev(self._tree)

    def __repr__(self):
        return f"Expression({self.text!r})"


@dataclass(frozen=True)
class BinaryRule:
    feature: str
    index: int


@dataclass(frozen=True)
class RangeRule:
    feature: str
    index: int
    lo: float
    hi: float


@dataclass(frozen=True)
class OheRule:
    feature: str
    indices: tuple[int, ...]


@dataclass(frozen=True)
class RelationRule:
    text: str
    lhs: Expression = field(compare=False)
    rhs: Expression = field(compare=False)
    indices: tuple = field(compare=False)  # (name, encoded index) pairs
    tol: float = DEFAULT_TOL

    def holds(self, raw_row) -> bool:
        values = {name: raw_row[j] for name, j in self.indices}
        try:
            a = self.lhs.evaluate(values)
            b = self.rhs.evaluate(values)
        except (ZeroDivisionError, OverflowError, ValueError):
            return False
        if not (math.isfinite(a) and math.isfinite(b)):
            return False
        return abs(a - b) <= self.tol * max(1.0, abs(b))


Univariate = Union[BinaryRule, RangeRule]
Multivariate = Union[OheRule, RelationRule]


@dataclass(frozen=True)
class ConstraintSet:
    univariate: tuple = ()
    multivariate: tuple = ()

    def without(self, rule) -> "ConstraintSet":
        return ConstraintSet(tuple(r for r in self.univariate if r is not rule),
                             tuple(r for r in self.multivariate if r is not rule))

    @property
    def relations(self):
        return [r for r in self.multivariate if isinstance(r, RelationRule)]


def parse_relation(text: str, encoding, tol: float = DEFAULT_TOL) -> RelationRule:
    parts = text.split("=")
    if len(parts) != 2 or not parts[0].strip() or not parts[1].strip():
        raise ConstraintError(f"relation must have the form '<expr> = <expr>': {text!r}")
    lhs, rhs = Expression(parts[0]), Expression(parts[1])
    idx = []
    for name in sorted(lhs.names | rhs.names):
        try:
            col = encoding[name]
        except KeyError:
            if name in _CONSTANTS:
                continue
            raise ConstraintError(f"relation {text!r}: unknown feature {name!r}") from None
        if col.kind == "categorical":
            raise ConstraintError(f"relation {text!r}: {name!r} is categorical")
        idx.append((name, col.indices[0]))
    return RelationRule(text.strip(), lhs, rhs, tuple(idx), float(tol))


def parse_constraints(entries, encoding, default_ranges: Optional[dict] = None) -> ConstraintSet:
    """Build a ConstraintSet from schema ``[[constraint]]`` entries.

    Implicit rules come first: every binary column and every OHE dummy must
    be 0/1, every categorical column is an OHE group, and every numeric
    column gets a range (``default_ranges[name]``, typically the schema
    range or the train-split min/max). Explicit entries are added on top; an
    explicit range replaces the default for its feature.

    Entry forms (keys of a TOML table)::

        {feature = "age", range = [17, 90]}
        {feature = "smoker", binary = true}
        {ohe = ["color"]}
        {relation = "area = pi*radius^2", tol = 1e-3}
    """
    default_ranges = dict(default_ranges or {})
    uni: list = []
    multi: list = []
    explicit_ranges = {}
    extra_uni = []
    for entry in entries:
        if "relation" in entry:
            multi.append(parse_relation(entry["relation"], encoding, entry.get("tol", DEFAULT_TOL)))
        elif "ohe" in entry:
            names = entry["ohe"] if isinstance(entry["ohe"], list) else [entry["ohe"]]
            for name in names:
                col = _lookup(encoding, name)
                if col.kind != "categorical":
                    raise ConstraintError(f"ohe rule on non-categorical feature {name!r}")
                # implicit already; kept for explicitness
        elif "range" in entry:
            col = _lookup(encoding, entry.get("feature"))
            lo, hi = (float(v) for v in entry["range"])
            if lo > hi:
                raise ConstraintError(f"range for {col.name!r} has lo > hi")
            if col.kind == "categorical":
                raise ConstraintError(f"range rule on categorical feature {col.name!r}")
            explicit_ranges[col.name] = (lo, hi)
        elif entry.get("binary"):
            col = _lookup(encoding, entry.get("feature"))
            if col.kind == "categorical":
                raise ConstraintError(f"binary rule on categorical feature {col.name!r}")
            extra_uni.append(BinaryRule(col.name, col.indices[0]))
        else:
            raise ConstraintError(f"unrecognized constraint entry {entry!r}")

    for col in encoding.columns:
        if col.kind == "numeric":
            rng = explicit_ranges.get(col.name, default_ranges.get(col.name))
            if rng is not None:
                uni.append(RangeRule(col.name, col.indices[0], float(rng[0]), float(rng[1])))
        elif col.kind == "binary":
            uni.append(BinaryRule(col.name, col.indices[0]))
            if col.name in explicit_ranges:
                lo, hi = explicit_ranges[col.name]
                uni.append(RangeRule(col.name, col.indices[0], lo, hi))
        else:
            for j in col.indices:
                uni.append(BinaryRule(col.name, j))
            multi.insert(0, OheRule(col.name, col.indices))
    for r in extra_uni:
        if r not in uni:
            uni.append(r)
    return ConstraintSet(tuple(uni), tuple(multi))


def _lookup(encoding, name):
    if name is None:
        raise ConstraintError("constraint entry has no feature")
    try:
        return encoding[name]
    except KeyError:
        raise ConstraintError(f"unknown feature {name!r}") from None


def dataset_constraints(ds) -> ConstraintSet:
    """ConstraintSet for a prepared dataset; ranges default to train min/max."""
    ranges = {}
    for col in ds.encoding.columns:
        if col.kind == "numeric":
            j = col.indices[0]
            ranges[col.name] = (float(ds.stats.raw_lower[j]), float(ds.stats.raw_upper[j]))
    return parse_constraints(ds.schema.constraints, ds.encoding, ranges)


def check_ruc(raw_row, cs: ConstraintSet) -> int:
    """1 iff every univariate rule holds for the raw encoded vector."""
    if raw_row is None:
        return 0
    row = np.asarray(raw_row, dtype=float)
    if not np.all(np.isfinite(row)):
        return 0
    for r in cs.univariate:
        v = row[r.index]
        if isinstance(r, BinaryRule):
            if v != 0.0 and v != 1.0:
                return 0
        else:
            slack_lo = RANGE_SLACK * max(1.0, abs(r.lo))
            slack_hi = RANGE_SLACK * max(1.0, abs(r.hi))
            if v < r.lo - slack_lo or v > r.hi + slack_hi:
                return 0
    return 1


def check_rmc(raw_row, cs: ConstraintSet) -> int:
    """1 iff every OHE group has a single active dummy and every relation holds."""
    if raw_row is None:
        return 0
    row = np.asarray(raw_row, dtype=float)
    for r in cs.multivariate:
        if isinstance(r, OheRule):
            vals = row[list(r.indices)]
            if not (np.all((vals == 0.0) | (vals == 1.0)) and np.count_nonzero(vals) == 1):
                return 0
        elif not r.holds(row):
            return 0
    return 1


def realistic(raw_row, cs: ConstraintSet) -> int:
    if raw_row is None:
        return 0
    return int(check_ruc(raw_row, cs) and check_rmc(raw_row, cs))


def audit_rows(X_raw, cs: ConstraintSet, name: str = "dataset") -> list[int]:
    """Rows violating their own constraints; each one is reported as a data-quality warning."""
    bad = [i for i, row in enumerate(np.asarray(X_raw)) if not realistic(row, cs)]
    if bad:
        warnings.warn(f"{name}: {len(bad)} rows violate their realistic constraints "
                      f"(first: {bad[:5]})")
    return bad
