"""Tie-averaged ranking, Friedman omnibus test and Nemenyi critical difference."""
from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import special

from . import kernels
from .metrics import DIRECTIONS

logger = logging.getLogger(__name__)

# q_alpha for alpha = 0.05 (studentized range / sqrt(2)), k = 2..20
NEMENYI_Q05 = {
    2: 1.960, 3: 2.343, 4: 2.569, 5: 2.728, 6: 2.850, 7: 2.949, 8: 3.031, 9: 3.102,
    10: 3.164, 11: 3.219, 12: 3.268, 13: 3.313, 14: 3.354, 15: 3.391, 16: 3.426,
    17: 3.458, 18: 3.489, 19: 3.517, 20: 3.544,
}
GROUPINGS = ("all", "numerical", "categorical", "mixed")
VALIDITY_MODES = ("valid", "realistic")


def rank_row(values: Sequence[Optional[float]], higher_better: bool,
             eligible: Optional[Sequence[bool]] = None) -> np.ndarray:
    """Ranks 1..k with ties averaged; ineligible (or ``None``) entries share the worst ranks."""
    k = len(values)
    if k < 2:
        raise ValueError("need at least two algorithms to rank")
    ok = np.array([v is not None for v in values], dtype=bool)
    if eligible is not None:
        ok &= np.asarray(eligible, dtype=bool)
    vals = np.array([0.0 if v is None else float(v) for v in values])
    return np.asarray(kernels.rank_rows(vals[None, :], ok[None, :], bool(higher_better)))[0]


@dataclass
class RankMatrix:
    grouping: str
    metric: str
    mode: str
    algorithms: list
    ranks: np.ndarray  # (Q, k)
    values: np.ndarray = field(default=None, repr=False)  # raw metric values, NaN if ineligible

    @property
    def Q(self) -> int:
        return self.ranks.shape[0]

    @property
    def k(self) -> int:
        return self.ranks.shape[1]


def rank_matrix(values, eligible, higher_better: bool, algorithms, grouping="all",
                metric="?", mode="valid") -> RankMatrix:
    values = np.asarray(values, dtype=float)
    eligible = np.asarray(eligible, dtype=bool) & np.isfinite(values)
    ranks = np.asarray(kernels.rank_rows(np.where(eligible, values, 0.0), eligible, bool(higher_better)))
    return RankMatrix(grouping, metric, mode, list(algorithms), ranks,
                      np.where(eligible, values, np.nan))


def mean_ranks(rm) -> np.ndarray:
    ranks = rm.ranks if isinstance(rm, RankMatrix) else np.asarray(rm, dtype=float)
    return ranks.mean(axis=0)


def chi2_sf(x: float, df: int) -> float:
    """Upper tail of the chi-square distribution (regularized upper incomplete gamma)."""
    if x <= 0:
        return 1.0
    return float(special.gammaincc(df / 2.0, x / 2.0))


def friedman_test(rm, iman_davenport: bool = False) -> tuple[float, float]:
    """Friedman chi-square on tie-averaged ranks and its p-value.

    With ``iman_davenport=True`` returns the F statistic and its p-value
    instead.
    """
    ranks = rm.ranks if isinstance(rm, RankMatrix) else np.asarray(rm, dtype=float)
    Q, k = ranks.shape
    if k < 3:
        raise ValueError("Friedman test needs k >= 3 algorithms")
    if Q < 2:
        raise ValueError("Friedman test needs at least 2 rows")
    R = ranks.mean(axis=0)
    stat = 12.0 * Q / (k * (k + 1)) * (float(np.sum(R ** 2)) - k * (k + 1) ** 2 / 4.0)
    stat = max(stat, 0.0)
    if not iman_davenport:
        return stat, chi2_sf(stat, k - 1)
    denom = Q * (k - 1) - stat
    if denom <= 0:
        return math.inf, 0.0
    f = (Q - 1) * stat / denom
    d1, d2 = k - 1, (k - 1) * (Q - 1)
    return f, float(special.betainc(d2 / 2.0, d1 / 2.0, d2 / (d2 + d1 * f)))


def nemenyi_cd(k: int, Q: float, alpha: float = 0.05) -> float:
    """Critical difference q_alpha * sqrt(k(k+1) / (6Q))."""
    if alpha != 0.05:
        raise ValueError("only alpha = 0.05 constants are embedded")
    if k not in NEMENYI_Q05:
        raise ValueError(f"no Nemenyi constant for k={k} (supported 2..20)")
    if Q <= 0:
        raise ValueError("Q must be positive")
    return NEMENYI_Q05[k] * math.sqrt(k * (k + 1) / (6.0 * Q))


def best_set(R, cd: float, p: Optional[float], alpha: float = 0.05) -> np.ndarray:
    """Flags algorithms not significantly worse than the best mean rank."""
    R = np.asarray(R, dtype=float)
    if p is None or p >= alpha:
        return np.ones(R.size, dtype=bool)
    return (R - R.min()) <= cd


@dataclass
class RankTable:
    grouping: str
    metric: str
    mode: str
    algorithms: list
    mean_ranks: np.ndarray
    mean_values: np.ndarray
    Q: int
    statistic: Optional[float]
    p_value: Optional[float]
    cd: Optional[float]
    best: np.ndarray


def rank_table(rm: RankMatrix, alpha: float = 0.05, iman_davenport: bool = False) -> RankTable:
    R = mean_ranks(rm)
    stat = p = cd = None
    if rm.k >= 3 and rm.Q >= 2:
        stat, p = friedman_test(rm, iman_davenport)
    if rm.k in NEMENYI_Q05:
        cd = nemenyi_cd(rm.k, rm.Q, alpha)
    best = best_set(R, cd if cd is not None else math.inf, p, alpha)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        mv = np.nanmean(rm.values, axis=0) if rm.values is not None else np.full(rm.k, np.nan)
    return RankTable(rm.grouping, rm.metric, rm.mode, rm.algorithms, R, mv, rm.Q, stat, p, cd, best)


def _eligible(entry, mode: str, metric: str) -> bool:
    mv = entry["metrics"]
    if not mv.get("coverage"):
        return False
    if mode == "realistic" and not mv.get("realistic"):
        return False
    return mv.get(metric) is not None


def grouping_tables(rows, algorithms=None, modes=VALIDITY_MODES, metrics=None,
                    alpha: float = 0.05, per_dataset: bool = False) -> dict:
    """Rank tables per (mode, grouping, metric).

    ``rows`` is an iterable of dicts with keys ``dataset``, ``dataset_type``,
    ``factual``, ``generator`` and ``metrics`` (a MetricVector dict) - one
    per factual and generator (the first of the paired runs).
    """
    rows = list(rows)
    metrics = list(metrics or DIRECTIONS)
    if algorithms is None:
        algorithms = sorted({r["generator"] for r in rows})
    k = len(algorithms)
    col = {a: j for j, a in enumerate(algorithms)}
    by_factual: dict = {}
    for r in rows:
        key = (r["dataset"], r["factual"])
        by_factual.setdefault(key, {"type": r["dataset_type"], "cells": {}})["cells"][r["generator"]] = r
    groups = {g: [] for g in GROUPINGS}
    for key, item in sorted(by_factual.items(), key=lambda kv: (kv[0][0], kv[0][1])):
        if len(item["cells"]) != k:
            continue
        groups["all"].append(item)
        groups[item["type"]].append(item)
        if per_dataset:
            groups.setdefault(f"dataset:{key[0]}", []).append(item)
    out = {}
    for mode in modes:
        for g, items in groups.items():
            if not items:
                if g in GROUPINGS:
                    logger.warning("grouping %r is empty; omitted", g)
                continue
            for metric in metrics:
                vals = np.full((len(items), k), np.nan)
                elig = np.zeros((len(items), k), dtype=bool)
                for i, item in enumerate(items):
                    for a, entry in item["cells"].items():
                        if _eligible(entry, mode, metric):
                            elig[i, col[a]] = True
                            vals[i, col[a]] = float(entry["metrics"][metric])
                rm = rank_matrix(vals, elig, DIRECTIONS[metric], algorithms, g, metric, mode)
                out[(mode, g, metric)] = rank_table(rm, alpha)
    return out


def format_tables(tables: dict, fmt: str = "markdown") -> str:
    """Render rank tables with one row per algorithm and one column per metric.

    Best-set cells carry a ``*`` marker.
    """
    lines = []
    keys = sorted({(m, g) for m, g, _ in tables}, key=lambda t: (t[0], GROUPINGS.index(t[1]) if t[1] in GROUPINGS else 99, t[1]))
    for mode, g in keys:
        mets = [met for (m2, g2, met) in tables if (m2, g2) == (mode, g)]
        first = tables[(mode, g, mets[0])]
        title = f"{'valid' if mode == 'valid' else 'valid and realistic'} counterfactuals - {g} (Q={first.Q})"
        if fmt == "markdown":
            lines.append(f"### {title}")
            lines.append("")
            lines.append("| algorithm | " + " | ".join(mets) + " |")
            lines.append("|---|" + "---|" * len(mets))
        else:
            lines.append(title)
        for j, alg in enumerate(first.algorithms):
            cells = []
            for met in mets:
                t = tables[(mode, g, met)]
                mark = "*" if t.best[j] else ""
                cells.append(f"{t.mean_ranks[j]:.2f}{mark}")
            if fmt == "markdown":
                lines.append(f"| {alg} | " + " | ".join(cells) + " |")
            else:
                lines.append(f"{alg:<18}" + "".join(f"{c:>10}" for c in cells))
        lines.append("")
    return "\n".join(lines)


def tables_to_csv_rows(tables: dict) -> list[dict]:
    out = []
    for (mode, g, met), t in sorted(tables.items()):
        for j, alg in enumerate(t.algorithms):
            out.append({
                "mode": mode, "grouping": g, "metric": met, "algorithm": alg,
                "mean_rank": repr(float(t.mean_ranks[j])),
                "mean_value": "" if np.isnan(t.mean_values[j]) else repr(float(t.mean_values[j])),
                "best": int(t.best[j]), "Q": t.Q,
                "friedman": "" if t.statistic is None else repr(t.statistic),
                "p_value": "" if t.p_value is None else repr(t.p_value),
                "cd": "" if t.cd is None else repr(t.cd),
            })
    return out
