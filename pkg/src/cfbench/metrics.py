"""The nine evaluation metrics, computed in the normalized model space.

Class flips are re-validated here against the model; a generator's own
``valid`` flag is never trusted.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from .constraints import check_rmc, check_ruc

EQ_TOL = 1e-9

# metric -> True when higher is better
DIRECTIONS = {
    "coverage": True,
    "sparsity": True,
    "stability": True,
    "ruc": True,
    "rmc": True,
    "l2": False,
    "mad": False,
    "md": False,
    "ct": False,
}
METRICS = tuple(DIRECTIONS)


@dataclass
class MetricVector:
    coverage: int
    ct: float
    sparsity: Optional[float] = None
    stability: Optional[int] = None
    l2: Optional[float] = None
    ruc: Optional[int] = None
    rmc: Optional[int] = None
    mad: Optional[float] = None
    md: Optional[float] = None

    @property
    def realistic(self) -> int:
        return int(bool(self.coverage and self.ruc and self.rmc))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["realistic"] = self.realistic
        return d


def coverage(model, x, c) -> int:
    """1 iff ``c`` exists and the model classes of x and c differ."""
    if c is None:
        return 0
    return int(model.predict(np.asarray(c, dtype=float)) != model.predict(np.asarray(x, dtype=float)))


def _same(x, c):
    return np.abs(np.asarray(x, dtype=float) - np.asarray(c, dtype=float)) <= EQ_TOL


def sparsity(x, c, encoding=None, variant: str = "encoded") -> float:
    """Share of unchanged features (per encoded column, or per raw feature if grouped)."""
    same = _same(x, c)
    if variant == "encoded":
        return float(same.sum()) / same.size
    if variant == "grouped":
        units = encoding.units()
        return sum(bool(same[list(u)].all()) for u in units) / len(units)
    raise ValueError(f"unknown sparsity variant {variant!r}")


def stability(c1, c2) -> int:
    """1 iff both runs produced counterfactuals that agree elementwise."""
    if c1 is None or c2 is None:
        return 0
    return int(bool(_same(c1, c2).all()))


def l2(x, c) -> float:
    d = np.asarray(x, dtype=float) - np.asarray(c, dtype=float)
    return float(np.sqrt(np.dot(d, d)))


def mad_distance(x, c, mads, encoding, variant: str = "default") -> float:
    """Mean MAD-scaled L1 over numeric columns plus mean change indicator over categoricals.

    ``variant="unchanged"`` counts *unchanged* categorical features
    instead (an alternative reading of the categorical indicator).
    """
    x = np.asarray(x, dtype=float)
    c = np.asarray(c, dtype=float)
    total = 0.0
    num = encoding.numeric_indices
    if num:
        total += float(np.mean(np.abs(x[num] - c[num]) / np.asarray(mads)[num]))
    cats = [tuple(col.indices) for col in encoding.columns if col.kind != "numeric"]
    if cats:
        same = [bool(_same(x[list(u)], c[list(u)]).all()) for u in cats]
        if variant == "default":
            total += sum(not s for s in same) / len(cats)
        elif variant == "unchanged":
            total += sum(same) / len(cats)
        else:
            raise ValueError(f"unknown MAD variant {variant!r}")
    return total


def mahalanobis(c, u, cov_inv) -> float:
    d = np.asarray(c, dtype=float) - np.asarray(u, dtype=float)
    q = float(d @ np.asarray(cov_inv) @ d)
    return float(np.sqrt(max(q, 0.0)))


def score_record(record, other, model, ds, constraints, x=None,
                 sparsity_variant: str = "encoded", mad_variant: str = "default") -> MetricVector:
    """All metrics for ``record``; ``other`` is the paired run used for stability."""
    if x is None:
        raise ValueError("factual vector required")
    c = record.counterfactual
    cov = coverage(model, x, c)
    mv = MetricVector(coverage=cov, ct=float(record.seconds))
    if not cov:
        return mv
    st = ds.stats
    raw = ds.to_raw(c)
    mv.sparsity = sparsity(x, c, ds.encoding, sparsity_variant)
    other_c = other.counterfactual if other is not None else None
    mv.stability = stability(c, other_c) if other is not None and coverage(model, x, other_c) else 0
    mv.l2 = l2(x, c)
    mv.ruc = check_ruc(raw, constraints)
    mv.rmc = check_rmc(raw, constraints)
    mv.mad = mad_distance(x, c, st.mad_denominator, ds.encoding, mad_variant)
    mv.md = mahalanobis(c, st.u, st.cov_inv)
    return mv
