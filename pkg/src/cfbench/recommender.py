"""Depth-limited Gini decision trees that recommend a generator for a setting."""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import kernels
from .metrics import DIRECTIONS

FEATURES = (
    "neurons", "auc_test", "rows_train", "columns_numerical", "columns_categorical",
    "misclassified", "factual_prediction", "factual_share",
)
FAMILIES = {"gradient": "CO", "growing_spheres": "HE", "greedy_mean": "HE"}


@dataclass
class RecommenderRow:
    features: tuple
    target: str


def build_rows(entries, metric: str, mode: str = "valid", family: bool = False,
               families: Optional[dict] = None) -> list[RecommenderRow]:
    """One row per factual and best algorithm; tied winners each get a row.

    ``entries`` are dicts with ``dataset``, ``factual``, ``generator``,
    ``metrics`` and ``context`` (the 8 query features).
    """
    families = {**FAMILIES, **(families or {})}
    higher = DIRECTIONS[metric]
    by_factual: dict = {}
    for e in entries:
        by_factual.setdefault((e["dataset"], e["factual"]), []).append(e)
    rows = []
    for key in sorted(by_factual):
        group = by_factual[key]
        ok = []
        for e in group:
            mv = e["metrics"]
            if not mv.get("coverage") or mv.get(metric) is None:
                continue
            if mode == "realistic" and not mv.get("realistic"):
                continue
            ok.append(e)
        if not ok:
            continue
        vals = [float(e["metrics"][metric]) for e in ok]
        best = max(vals) if higher else min(vals)
        feats = tuple(float(group[0]["context"][f]) for f in FEATURES)
        winners = sorted({e["generator"] for e, v in zip(ok, vals) if v == best})
        if family:
            winners = sorted({families.get(w, w) for w in winners})
        rows.extend(RecommenderRow(feats, w) for w in winners)
    return rows


def gini(counts) -> float:
    # integer arithmetic keeps the value correctly rounded
    counts = [int(round(c)) for c in counts]
    n = sum(counts)
    if n == 0:
        return 0.0
    return (n * n - sum(c * c for c in counts)) / (n * n)


@dataclass
class Node:
    gini: float
    samples: int
    counts: np.ndarray
    feature: Optional[int] = None
    threshold: Optional[float] = None
    left: Optional["Node"] = None
    right: Optional["Node"] = None

    @property
    def is_leaf(self) -> bool:
        return self.feature is None


@dataclass
class DecisionTree:
    classes: list
    root: Node
    feature_names: tuple = FEATURES
    max_depth: int = 3

    def depth(self) -> int:
        def d(n):
            return 0 if n.is_leaf else 1 + max(d(n.left), d(n.right))
        return d(self.root)

    def nodes(self) -> list[Node]:
        out, stack = [], [self.root]
        while stack:
            n = stack.pop()
            out.append(n)
            if not n.is_leaf:
                stack.extend((n.right, n.left))
        return out

    def leaf(self, x) -> Node:
        n = self.root
        while not n.is_leaf:
            n = n.left if x[n.feature] <= n.threshold else n.right
        return n

    def to_dict(self) -> dict:
        def enc(n):
            d = {"gini": n.gini, "samples": n.samples, "counts": [float(c) for c in n.counts]}
            if not n.is_leaf:
                d.update(feature=n.feature, threshold=n.threshold, left=enc(n.left), right=enc(n.right))
            return d
        return {"classes": list(self.classes), "features": list(self.feature_names),
                "max_depth": self.max_depth, "root": enc(self.root)}

    @classmethod
    def from_dict(cls, d) -> "DecisionTree":
        def dec(x):
            n = Node(x["gini"], x["samples"], np.array(x["counts"]))
            if "feature" in x:
                n.feature, n.threshold = x["feature"], x["threshold"]
                n.left, n.right = dec(x["left"]), dec(x["right"])
            return n
        return cls(d["classes"], dec(d["root"]), tuple(d["features"]), d["max_depth"])


def fit_tree(rows, max_depth: int = 3, classes=None) -> DecisionTree:
    """Greedy CART on weighted Gini over midpoint thresholds; fully deterministic."""
    X = np.array([r.features for r in rows], dtype=float)
    labels = [r.target for r in rows]
    classes = sorted(set(labels)) if classes is None else list(classes)
    lookup = {c: i for i, c in enumerate(classes)}
    y = np.array([lookup[t] for t in labels], dtype=np.intp)
    nc = len(classes)

    def grow(idx, depth):
        counts = np.bincount(y[idx], minlength=nc).astype(float)
        node = Node(gini(counts), int(idx.size), counts)
        if depth >= max_depth or node.gini == 0.0 or idx.size < 2:
            return node
        f, thr, w = kernels.best_split(X[idx], y[idx], nc)
        if f < 0 or not w < node.gini - kernels.TIE_EPS:
            return node
        go_left = X[idx, f] <= thr
        node.feature, node.threshold = int(f), float(thr)
        node.left = grow(idx[go_left], depth + 1)
        node.right = grow(idx[~go_left], depth + 1)
        return node

    if X.shape[0] == 0:
        raise ValueError("no rows to fit")
    return DecisionTree(classes, grow(np.arange(X.shape[0]), 0), FEATURES, max_depth)


def recommend(trees: dict, query) -> dict:
    """Per metric, algorithm scores = class shares in the leaf the query reaches."""
    if isinstance(query, dict):
        query = [float(query[f]) for f in FEATURES]
    out = {}
    for metric, tree in trees.items():
        leaf = tree.leaf(query)
        share = leaf.counts / leaf.counts.sum()
        pairs = [(c, float(s)) for c, s in zip(tree.classes, share) if s > 0]
        out[metric] = sorted(pairs, key=lambda t: (-t[1], t[0]))
    return out


def export_tree(tree: DecisionTree) -> str:
    """Indented text, one node per line: condition, gini, samples, counts, majority."""
    lines = []

    def render(n, depth, prefix):
        pad = "|   " * depth
        value = "[" + ", ".join(repr(float(c)) for c in n.counts) + "]"
        majority = tree.classes[int(np.argmax(n.counts))]
        body = f"gini = {float(n.gini)!r}, samples = {n.samples}, value = {value}, class = {majority}"
        lines.append(f"{pad}{prefix}{body}")
        if not n.is_leaf:
            name = tree.feature_names[n.feature]
            render(n.left, depth + 1, f"[{name} <= {n.threshold!r}] ")
            render(n.right, depth + 1, f"[{name} > {n.threshold!r}] ")

    lines.append("classes: " + ", ".join(tree.classes))
    render(tree.root, 0, "")
    return "\n".join(lines)


_LINE = re.compile(
    r"^(?P<pad>(\|   )*)(\[(?P<feat>\w+) (?P<op><=|>) (?P<thr>[^\]]+)\] )?"
    r"gini = (?P<gini>\S+), samples = (?P<samples>\d+), value = \[(?P<value>[^\]]*)\], class = .*$")


def parse_tree(text: str) -> DecisionTree:
    """Inverse of :func:`export_tree`."""
    lines = text.splitlines()
    if not lines or not lines[0].startswith("classes: "):
        raise ValueError("missing classes header")
    classes = lines[0][len("classes: "):].split(", ")
    parsed = []
    for ln in lines[1:]:
        m = _LINE.match(ln)
        if not m:
            raise ValueError(f"unparseable line: {ln!r}")
        parsed.append(m)
    pos = 0

    def build(depth):
        nonlocal pos
        m = parsed[pos]
        pos += 1
        n = Node(float(m["gini"]), int(m["samples"]),
                 np.array([float(v) for v in m["value"].split(", ")]))
        if pos < len(parsed) and len(parsed[pos]["pad"]) // 4 == depth + 1:
            child = parsed[pos]
            n.feature = FEATURES.index(child["feat"])
            n.threshold = float(child["thr"])
            n.left = build(depth + 1)
            n.right = build(depth + 1)
        return n

    root = build(0)
    tree = DecisionTree(classes, root, FEATURES)
    tree.max_depth = max(3, tree.depth())
    return tree
