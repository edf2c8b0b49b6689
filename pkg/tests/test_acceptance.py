"""Acceptance suite: one test per criterion, each reporting a PASS/FAIL line.

The lines are printed as the tests run (visible with ``-s``) and repeated in
the terminal summary by ``conftest.pytest_terminal_summary``.
"""
import functools
import math
import time

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from cfbench import kernels
from cfbench.constraints import (check_rmc, check_ruc, dataset_constraints, parse_constraints,
                                 parse_relation)
from cfbench.generators import build_request, make_generator
from cfbench.metrics import coverage, l2, mad_distance, mahalanobis, score_record, sparsity, stability
from cfbench.model import TrainConfig, cross_entropy, grid_search, init_model, train
from cfbench.pipeline import builtin_path, load_config, masked_lines, read_records, run_benchmark
from cfbench.ranking import NEMENYI_Q05, friedman_test, grouping_tables, nemenyi_cd, rank_row
from cfbench.recommender import fit_tree, gini
from cfbench.schema import (EncodedColumn, EncodingMap, load_and_encode, load_schema, prepare,
                            select_factuals)

from conftest import linear_model
from test_recommender import fixture20, frac_gini, split_oracle

RESULTS = {}
BUNDLED = ("iris", "linear2d", "catsynth", "mixedsynth", "circles", "adverts", "pageblocks")


def criterion(number, title):
    def wrap(fn):
        @functools.wraps(fn)
        def run(*args, **kwargs):
            try:
                fn(*args, **kwargs)
            except BaseException:
                RESULTS[number] = (title, "FAIL")
                print(f"criterion {number:>2} FAIL  {title}")
                raise
            # parametrized criteria pass only if every case passes
            RESULTS.setdefault(number, (title, "PASS"))
            print(f"criterion {number:>2} PASS  {title}")
        return run
    return wrap


# --- 1: metric oracles -----------------------------------------------------

ENC = EncodingMap((
    EncodedColumn("a", "numeric", (0,)),
    EncodedColumn("b", "numeric", (1,)),
    EncodedColumn("c", "categorical", (2, 3, 4), ("x", "y", "z")),
    EncodedColumn("d", "binary", (5,), ("n", "y")),
    EncodedColumn("e", "numeric", (6,)),
))
UNITS = [[0], [1], [2, 3, 4], [5], [6]]
NUMERIC = [0, 1, 6]


def random_pair(rng):
    x = np.zeros(7)
    x[NUMERIC] = rng.normal(size=3)
    x[2 + rng.integers(3)] = 1.0
    x[5] = float(rng.integers(2))
    c = x.copy()
    for u in UNITS:
        if rng.random() < 0.5:
            continue
        if u == [2, 3, 4]:
            c[u] = 0.0
            c[2 + rng.integers(3)] = 1.0
        elif u == [5]:
            c[5] = 1.0 - c[5]
        else:
            c[u[0]] += rng.normal()
    return x, c


def oracle_l2(x, c):
    return math.sqrt(math.fsum((a - b) ** 2 for a, b in zip(x, c)))


def oracle_sparsity(x, c):
    return sum(1 for a, b in zip(x, c) if a == b) / len(x)


def oracle_mad(x, c, mads):
    num = math.fsum(abs(x[j] - c[j]) / mads[j] for j in NUMERIC) / len(NUMERIC)
    changed = [any(x[j] != c[j] for j in u) for u in UNITS if u[0] not in NUMERIC]
    return num + sum(changed) / len(changed)


def oracle_md(c, u, S):
    d = [a - b for a, b in zip(c, u)]
    q = math.fsum(d[i] * S[i][j] * d[j] for i in range(len(d)) for j in range(len(d)))
    return math.sqrt(max(q, 0.0))


def oracle_constraints(row):
    ruc = all(row[j] in (0.0, 1.0) for j in (2, 3, 4, 5)) and -3.0 <= row[0] <= 3.0
    rmc = sum(row[2:5]) == 1.0 and abs(row[6] - 2 * row[1]) <= 1e-3 * max(1.0, abs(2 * row[1]))
    return int(ruc), int(rmc)


@criterion(1, "metric formulas vs brute-force oracles on 1000 pairs")
def test_c1_metric_oracles():
    t0 = time.perf_counter()
    rng = np.random.default_rng(11)
    A = rng.normal(size=(7, 7))
    S = A @ A.T + 7 * np.eye(7)
    u = rng.normal(size=7)
    mads = rng.uniform(0.2, 3.0, size=7)
    cs = parse_constraints([{"feature": "a", "range": [-3, 3]}, {"relation": "e = 2*b"}], ENC)
    model = linear_model(np.eye(7)[0])
    for i in range(1000):
        x, c = random_pair(rng)
        if i % 3 == 0:
            c[6] = 2 * c[1] * (1 + rng.choice([0.0, 5e-4, 2e-3]))
        assert abs(l2(x, c) - oracle_l2(x, c)) <= 1e-9
        assert sparsity(x, c) == oracle_sparsity(x, c)
        assert abs(mad_distance(x, c, mads, ENC) - oracle_mad(x, c, mads)) <= 1e-9
        assert abs(mahalanobis(c, u, S) - oracle_md(c, u, S.tolist())) <= 1e-9
        assert stability(x, c) == int(all(a == b for a, b in zip(x, c)))
        assert coverage(model, x, c) == int((x[0] > 0) != (c[0] > 0))
        ruc, rmc = oracle_constraints(c)
        assert check_ruc(c, cs) == ruc
        assert check_rmc(c, cs) == rmc
    assert time.perf_counter() - t0 < 10.0


# --- 2: Mahalanobis reduces to L2 -----------------------------------------

@criterion(2, "md = l2 under identity covariance")
def test_c2_mahalanobis_identity():
    rng = np.random.default_rng(2)
    for _ in range(1000):
        m = int(rng.integers(1, 12))
        c, u = rng.normal(size=m) * 5, rng.normal(size=m) * 5
        assert abs(mahalanobis(c, u, np.eye(m)) - l2(c, u)) <= 1e-12


# --- 3: input gradients ---------------------------------------------------

@criterion(3, "analytic input gradients vs central differences")
@pytest.mark.parametrize("backend", sorted(kernels.backends()))
def test_c3_gradients(backend):
    impl = kernels.backends()[backend]
    rng = np.random.default_rng(3)
    worst = 0.0
    for i in range(50):
        m, h = int(rng.integers(1, 8)), int(rng.integers(1, 10))
        model = init_model(m, TrainConfig(h, 0.01, 0), seed=i)
        model.b1 = rng.normal(size=h) * 0.3
        x = rng.normal(size=m)
        t = int(rng.integers(2))
        _, g = impl.mlp_input_gradient(model.W1, model.b1, model.W2, model.b2, x, t)
        eps = 1e-6
        fd = np.array([(cross_entropy(model, [x + eps * e], [t]) - cross_entropy(model, [x - eps * e], [t]))
                       / (2 * eps) for e in np.eye(m)])
        worst = max(worst, float(np.max(np.abs(np.asarray(g) - fd))))
    assert worst <= 1e-4


# --- 4: Iris model pipeline -----------------------------------------------

@criterion(4, "Iris grid search reaches test AUC >= 0.95 within 2 min")
def test_c4_iris():
    t0 = time.perf_counter()
    ds = prepare(load_schema(builtin_path("schema_iris.toml")), seed=0)
    assert (ds.n_rows, ds.width) == (150, 4)
    result = grid_search(ds, seed=0, jobs=4)
    elapsed = time.perf_counter() - t0
    print(f"  iris: selected {result.selected}, test AUC {result.model.eval['auc_test']:.4f}, {elapsed:.1f}s")
    assert result.model.eval["auc_test"] >= 0.95
    assert elapsed < 120.0


# --- 5: generators on a linear boundary -----------------------------------

def annulus_lattice(r_lo, r_hi, step):
    """Offsets on the ``step`` lattice with r_lo <= |p| <= r_hi."""
    n = int(math.ceil(r_hi / step))
    k = np.arange(-n, n + 1)
    out = []
    for j in k:
        dy = j * step
        dx = k * step
        d2 = dx * dx + dy * dy
        keep = (d2 >= r_lo * r_lo) & (d2 <= r_hi * r_hi)
        if keep.any():
            out.append(np.c_[dx[keep], np.full(keep.sum(), dy)])
    return np.concatenate(out)


def grid_min_flip(model, x, radius):
    """Smallest lattice distance to a flipped point: 0.01 pass, then 1e-3 near the hit radius."""
    y = model.predict(x)

    def scan(step, r_lo, r_hi):
        P = annulus_lattice(r_lo, r_hi, step)
        d = np.linalg.norm(P, axis=1)
        hit = model.predict(x + P) != y
        return d[hit].min() if hit.any() else math.inf

    coarse = scan(0.01, 0.0, radius)
    return scan(1e-3, max(coarse - 0.01, 0.0), coarse + 1e-3)


@criterion(5, "native generators on linear2d: coverage 1, gradient L2 within 1.5x of grid oracle")
def test_c5_generators_linear2d():
    ds = prepare(load_schema(builtin_path("schema_linear2d.toml")), seed=0)
    model = train(ds, TrainConfig(5, 0.01, 100), seed=0)
    facts = select_factuals(ds, model, 25, seed=0)
    assert len(facts) == 50
    dist = {}
    gens = {"gradient": make_generator("gradient", step_size=0.001),
            "growing_spheres": make_generator("growing_spheres"),
            "greedy_mean": make_generator("greedy_mean")}
    for name, gen in gens.items():
        recs = [gen.generate(build_request(ds, model, f, seed=0)) for f in facts]
        assert all(coverage(model, f.x, r.counterfactual) for f, r in zip(facts, recs)), name
        dist[name] = [l2(f.x, r.counterfactual) for f, r in zip(facts, recs)]
    oracle = [grid_min_flip(model, f.x, d + 0.05) for f, d in zip(facts, dist["gradient"])]
    ratio = np.mean(dist["gradient"]) / np.mean(oracle)
    print(f"  linear2d: gradient mean L2 {np.mean(dist['gradient']):.4f}, "
          f"oracle {np.mean(oracle):.4f}, ratio {ratio:.3f}")
    assert ratio <= 1.5


# --- 6: realistic coverage and OHE projection -----------------------------

@criterion(6, "spheres without OHE projection lose realistic coverage; with it they keep it")
def test_c6_projection():
    ds = prepare(load_schema(builtin_path("schema_catsynth.toml")), seed=0)
    model = train(ds, TrainConfig(2 * ds.width + 1, 0.01, 100), seed=0)
    cs = dataset_constraints(ds)
    facts = select_factuals(ds, model, 10, seed=0)
    gen = make_generator("growing_spheres")
    out = {}
    for project in (False, True):
        cov = real = 0
        for f in facts:
            rec = gen.generate(build_request(ds, model, f, seed=0, project_ohe=project))
            mv = score_record(rec, None, model, ds, cs, x=f.x)
            cov += mv.coverage
            real += mv.realistic
        out[project] = (cov / len(facts), real / len(facts))
    print(f"  catsynth (coverage, realistic): raw {out[False]}, projected {out[True]}")
    assert out[False][1] < out[False][0]
    assert out[True][1] == out[True][0]


# --- 7: ranking statistics ------------------------------------------------

# alpha = 0.05 row of the two-tailed Nemenyi table, copied independently
Q_TABLE = (1.960, 2.343, 2.569, 2.728, 2.850, 2.949, 3.031, 3.102, 3.164)


@criterion(7, "Friedman vs scipy, Nemenyi CD vs table constants")
def test_c7_ranking_statistics():
    rng = np.random.default_rng(7)
    for Q, k in ((10, 3), (25, 4), (8, 5), (50, 3), (12, 7)):
        R = np.array([rng.permutation(k) + 1.0 for _ in range(Q)])
        stat, p = friedman_test(R)
        ref = stats.friedmanchisquare(*R.T)
        assert abs(stat - ref.statistic) <= 1e-6 and abs(p - ref.pvalue) <= 1e-6
    for k, q in enumerate(Q_TABLE, start=2):
        for Q in (5, 40, 1000):
            assert abs(nemenyi_cd(k, Q) - q * math.sqrt(k * (k + 1) / (6 * Q))) <= 1e-6
    for k in range(2, 21):
        ref = stats.studentized_range.ppf(0.95, k, np.inf) / math.sqrt(2)
        assert abs(NEMENYI_Q05[k] - ref) < 1e-3
    rank_sums()


@settings(max_examples=500, deadline=None)
@given(st.lists(st.one_of(st.none(), st.floats(-5, 5), st.sampled_from([0.0, 1.0])), min_size=2, max_size=12),
       st.booleans())
def rank_sums(values, higher):
    k = len(values)
    assert rank_row(values, higher).sum() == k * (k + 1) / 2


# --- 8: mean value vs mean rank -------------------------------------------

@criterion(8, "fixture where the better mean value has the worse mean rank")
def test_c8_ranking_misleading():
    # A wins factual 0 by a wide margin and loses the other nine narrowly
    values = {"A": [0.2] + [1.1] * 9, "B": [5.0] + [1.0] * 9, "C": [2.0] * 10}
    rows = [{"dataset": "d", "dataset_type": "numerical", "factual": i, "generator": gen,
             "metrics": {"coverage": 1, "realistic": 1, "l2": v[i]}}
            for gen, v in values.items() for i in range(10)]
    table = grouping_tables(rows, modes=("valid",), metrics=["l2"])[("valid", "all", "l2")]
    ia, ib = table.algorithms.index("A"), table.algorithms.index("B")
    print(f"  mean l2 A={table.mean_values[ia]:.3f} B={table.mean_values[ib]:.3f}; "
          f"mean rank A={table.mean_ranks[ia]:.2f} B={table.mean_ranks[ib]:.2f}")
    assert table.mean_values[ia] < table.mean_values[ib]
    assert table.mean_ranks[ib] < table.mean_ranks[ia]


# --- 9: recommender tree --------------------------------------------------

@criterion(9, "tree root split equals exhaustive oracle, hand Gini values, depth <= 3")
def test_c9_tree():
    for seed in range(5):
        rows = fixture20(seed)
        tree = fit_tree(rows)
        _, f, thr = split_oracle(rows)
        assert (tree.root.feature, tree.root.threshold) == (f, thr)
        for node in tree.nodes():
            assert node.gini == float(frac_gini([int(c) for c in node.counts if c]))
        assert tree.depth() <= 3
    assert gini([5, 5]) == 0.5
    assert gini([6, 3, 1]) == 1 - (36 + 9 + 1) / 100
    assert gini([7]) == 0.0
    deep = fixture20(0) * 3
    rng = np.random.default_rng(9)
    for r in deep:
        r.target = str(rng.integers(6))
    assert fit_tree(deep).depth() <= 3


# --- 10: end-to-end determinism -------------------------------------------

@criterion(10, "bundled synthetic run is reproducible and deterministic generators are stable")
def test_c10_determinism(tmp_path):
    cfg = load_config("builtin:run_synthetic")
    a = run_benchmark(cfg, tmp_path / "a")
    b = run_benchmark(cfg, tmp_path / "b")
    assert masked_lines(a.path) == masked_lines(b.path)
    _, _, records = read_records(a.path)
    det = [r for r in records if r["generator"] in ("gradient", "greedy_mean")]
    assert det and all(r["metrics"]["stability"] == 1 for r in det)


# --- 11: constraint engine ------------------------------------------------

@criterion(11, "bundled rows satisfy their constraints; relation fixtures accept and reject")
def test_c11_constraints():
    for name in BUNDLED:
        schema = load_schema(builtin_path(f"schema_{name}.toml"))
        ds = load_and_encode(schema.data_path(), schema)
        ranges = {c.name: c.allowed_range for c in schema.features
                  if c.kind == "numeric" and c.allowed_range is not None}
        cs = parse_constraints(schema.constraints, ds.encoding, ranges)
        for row in ds.X_raw:
            assert check_ruc(row, cs) == 1 and check_rmc(row, cs) == 1, name

    enc = EncodingMap(tuple(EncodedColumn(n, "numeric", (i,)) for i, n in
                            enumerate(("radius", "area", "width", "height", "ratio", "blackpix", "p_black"))))
    check_fixture(parse_relation("area = pi*radius^2", enc), [3.0, math.pi * 9, 1, 1, 1, 1, 1], 1)
    check_fixture(parse_relation("ratio = width/height", enc), [1, 1, 468.0, 60.0, 7.8, 1, 1], 4)
    check_fixture(parse_relation("p_black = blackpix/area", enc), [1, 40.0, 1, 1, 1, 13.0, 13 / 40], 6)


def check_fixture(rule, row, lhs_index):
    row = np.asarray(row, dtype=float)
    assert rule.holds(row)
    values = {name: row[j] for name, j in rule.indices}
    band = rule.tol * max(1.0, abs(rule.rhs.evaluate(values)))
    for sign in (1, -1):
        inside = row.copy()
        inside[lhs_index] += sign * 0.99 * band
        assert rule.holds(inside)
        outside = row.copy()
        outside[lhs_index] += sign * 1.01 * band
        assert not rule.holds(outside)
