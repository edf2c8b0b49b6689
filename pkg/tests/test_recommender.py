from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cfbench.recommender import (FEATURES, DecisionTree, RecommenderRow, build_rows, export_tree,
                                 fit_tree, gini, parse_tree, recommend)


def frac_gini(counts):
    n = sum(counts)
    return 1 - sum(Fraction(c, n) ** 2 for c in counts)


def split_oracle(rows):
    """Every (feature, midpoint) pair scored with exact fractions; ties -> lowest feature, threshold."""
    classes = sorted({r.target for r in rows})
    best = None
    for f in range(len(FEATURES)):
        vals = sorted({r.features[f] for r in rows})
        for a, b in zip(vals, vals[1:]):
            thr = (a + b) / 2
            left = [r.target for r in rows if r.features[f] <= thr]
            right = [r.target for r in rows if r.features[f] > thr]
            w = sum(Fraction(len(side), len(rows)) * frac_gini([side.count(c) for c in classes])
                    for side in (left, right))
            key = (w, f, thr)
            if best is None or key < best:
                best = key
    return best


def fixture20(seed=0):
    rng = np.random.default_rng(seed)
    rows = []
    for i in range(20):
        feats = (float(rng.choice([3, 5, 9])), float(rng.choice([0.9, 0.95, 1.0])),
                 float(rng.integers(50, 60)), float(rng.integers(0, 3)), float(rng.integers(0, 3)),
                 float(rng.integers(0, 2)), round(float(rng.uniform(0.5, 1)), 2),
                 round(float(rng.uniform(0.2, 0.8)), 1))
        target = "A" if feats[6] > 0.8 else ("B" if feats[3] >= 1 else "C")
        if i % 7 == 0:
            target = "C"
        rows.append(RecommenderRow(feats, target))
    return rows


def test_root_split_matches_oracle():
    for seed in range(5):
        rows = fixture20(seed)
        tree = fit_tree(rows)
        w, f, thr = split_oracle(rows)
        assert (tree.root.feature, tree.root.threshold) == (f, thr)
        n = tree.root.samples
        wl = tree.root.left.samples / n * tree.root.left.gini
        wr = tree.root.right.samples / n * tree.root.right.gini
        assert wl + wr == pytest.approx(float(w), abs=1e-12)


def test_gini_fixtures():
    assert gini([5, 0]) == 0.0
    assert gini([3, 3]) == 0.5
    assert gini([1, 1, 1, 1]) == 0.75
    assert gini([2, 1]) == pytest.approx(4 / 9, abs=1e-16)
    assert gini([]) == 0.0


def test_node_ginis_hand_computed():
    # 1-feature data: x<=1.5 -> 2xA, else 1xA + 3xB
    rows = [RecommenderRow((v,) + (0.0,) * 7, t) for v, t in
            [(1, "A"), (1, "A"), (2, "A"), (3, "B"), (3, "B"), (3, "B")]]
    tree = fit_tree(rows, max_depth=1)
    assert tree.root.gini == 0.5
    assert (tree.root.feature, tree.root.threshold) == (0, 2.5)
    assert tree.root.left.counts.tolist() == [3, 0] and tree.root.left.gini == 0.0
    assert tree.root.right.gini == 0.0
    deeper = fit_tree(rows[:3] + [RecommenderRow((2,) + (0.0,) * 7, "B")] + rows[3:])
    assert deeper.root.gini == pytest.approx(1 - (3 / 7) ** 2 - (4 / 7) ** 2, abs=1e-15)


def test_separable_and_pure():
    rows = [RecommenderRow((float(i),) + (0.0,) * 7, "A" if i < 5 else "B") for i in range(10)]
    tree = fit_tree(rows)
    assert tree.depth() == 1
    assert tree.root.left.gini == 0 and tree.root.right.gini == 0
    pure = fit_tree([RecommenderRow((float(i),) + (0.0,) * 7, "A") for i in range(4)])
    assert pure.depth() == 0 and pure.root.is_leaf
    with pytest.raises(ValueError):
        fit_tree([])


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.lists(st.integers(0, 5), min_size=8, max_size=8),
                          st.sampled_from("ABCD")), min_size=1, max_size=60),
       st.integers(0, 4))
def test_tree_invariants(data, depth):
    rows = [RecommenderRow(tuple(map(float, f)), t) for f, t in data]
    tree = fit_tree(rows, max_depth=depth)
    assert tree.depth() <= depth
    for n in tree.nodes():
        if not n.is_leaf:
            assert n.left.samples + n.right.samples == n.samples
            assert np.array_equal(n.left.counts + n.right.counts, n.counts)
    again = fit_tree(rows, max_depth=depth)
    assert export_tree(again) == export_tree(tree)
    back = parse_tree(export_tree(tree))
    assert [(n.feature, n.threshold) for n in back.nodes()] == \
        [(n.feature, n.threshold) for n in tree.nodes()]
    for metric, scores in recommend({"m": tree}, rows[0].features).items():
        assert sum(s for _, s in scores) == pytest.approx(1.0)
        assert [s for _, s in scores] == sorted((s for _, s in scores), reverse=True)


def test_export_rendering():
    rows = fixture20(1)
    tree = fit_tree(rows)
    text = export_tree(tree)
    lines = text.splitlines()
    assert len(lines) - 1 == len(tree.nodes())
    assert "gini = " in lines[1] and "samples = 20" in lines[1] and "class = " in lines[1]
    leaf = fit_tree([RecommenderRow((0.0,) * 8, "A")])
    assert len(export_tree(leaf).splitlines()) == 2
    with pytest.raises(ValueError):
        parse_tree("nonsense")


def test_recommend_scores():
    rows = [RecommenderRow((0.0,) * 8, t) for t in "AAAB"]
    rows += [RecommenderRow((10.0,) + (0.0,) * 7, "C")] * 4
    tree = fit_tree(rows)
    q = dict(zip(FEATURES, [0.0] * 8))
    assert recommend({"l2": tree}, q)["l2"] == [("A", 0.75), ("B", 0.25)]
    q["neurons"] = 1e9  # outside the training range still routes
    assert recommend({"l2": tree}, q)["l2"] == [("C", 1.0)]


def _entry(fac, gen, val, cov=1, realistic=1):
    ctx = dict(zip(FEATURES, [5, 0.99, 100, 2, 0, 0, 0.9, 0.5]))
    ctx["factual_prediction"] = 0.5 + fac / 100
    return {"dataset": "d", "factual": fac, "generator": gen, "context": ctx,
            "metrics": {"coverage": cov, "l2": val if cov else None, "realistic": realistic}}


def test_build_rows():
    entries = [_entry(0, "gradient", 1.0), _entry(0, "greedy_mean", 2.0), _entry(0, "growing_spheres", 3.0),
               _entry(1, "gradient", 1.0), _entry(1, "greedy_mean", 1.0), _entry(1, "growing_spheres", 5.0),
               _entry(2, "gradient", None, cov=0), _entry(2, "greedy_mean", None, cov=0),
               _entry(3, "gradient", 1.0, realistic=0), _entry(3, "growing_spheres", 4.0)]
    rows = build_rows(entries, "l2")
    by_fac = {}
    for r in rows:
        by_fac.setdefault(r.features[6], []).append(r.target)
    assert by_fac[0.5] == ["gradient"]
    assert by_fac[0.51] == ["gradient", "greedy_mean"]
    assert 0.52 not in by_fac
    assert by_fac[0.53] == ["gradient"]
    real = build_rows(entries, "l2", mode="realistic")
    assert [r.target for r in real if r.features[6] == 0.53] == ["growing_spheres"]
    fam = build_rows(entries, "l2", family=True)
    assert [r.target for r in fam if r.features[6] == 0.51] == ["CO", "HE"]


def test_dict_round_trip():
    tree = fit_tree(fixture20(2))
    back = DecisionTree.from_dict(tree.to_dict())
    assert export_tree(back) == export_tree(tree)
