"""Counterfactual generator interface, plug-in registry and the native generators.

Three family representatives are built in:

* ``gradient`` - gradient descent on cross-entropy towards the opposite class
  with an elastic-net proximity penalty (convex-optimization family).
* ``growing_spheres`` - samples growing hyperspherical layers around the
  factual, then sparsifies the closest flip (heuristic family).
* ``greedy_mean`` - best-first search over feature subsets replaced by their
  train mean / modal category (heuristic family).

All work in the normalized model space of a prepared dataset.
"""
from __future__ import annotations

import heapq
import time
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import kernels


@dataclass(frozen=True)
class GeneratorRequest:
    model: object
    x: np.ndarray
    y: int  # class the model predicts for x; the generator targets 1 - y
    encoding: object
    means: np.ndarray
    modes: np.ndarray
    mads: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    clamp_range: bool = True
    project_ohe: bool = True
    frozen: Optional[np.ndarray] = None
    weights: Optional[np.ndarray] = None
    budget: Optional[int] = None
    seed: int = 0
    factual_id: Optional[int] = None

    def __post_init__(self):
        m = len(self.x)
        if self.budget is not None and self.budget <= 0:
            raise ValueError("budget must be > 0")
        for name in ("frozen", "weights"):
            v = getattr(self, name)
            if v is not None and len(v) != m:
                raise ValueError(f"{name} length {len(v)} != encoded width {m}")

    @property
    def target(self) -> int:
        return 1 - self.y

    @property
    def frozen_mask(self) -> np.ndarray:
        return np.zeros(len(self.x), dtype=bool) if self.frozen is None else np.asarray(self.frozen, bool)


@dataclass
class CFRecord:
    generator: str
    factual_id: Optional[int]
    counterfactual: Optional[np.ndarray]
    valid: bool
    seconds: float
    iterations: int
    seed: int
    diagnostic: str = ""
    info: dict = field(default_factory=dict)


def build_request(ds, model, factual, budget=None, seed=0, clamp_range=True,
                  project_ohe=True, frozen=None, weights=None, factual_id=None) -> GeneratorRequest:
    """Request for one factual of a prepared (split + normalized) dataset."""
    st = ds.stats
    return GeneratorRequest(
        model=model, x=np.asarray(factual.x, dtype=float), y=int(factual.pred_class),
        encoding=ds.encoding, means=st.u, modes=st.mode, mads=st.mad_denominator,
        lower=st.lower, upper=st.upper, clamp_range=clamp_range, project_ohe=project_ohe,
        frozen=frozen, weights=weights, budget=budget, seed=seed,
        factual_id=factual.row if factual_id is None else factual_id,
    )


def project_ohe(vector, encoding) -> np.ndarray:
    """Snap OHE groups to their argmax dummy and binary columns to {0, 1}.

    Ties in a group go to the lowest index; a binary value of exactly 0.5
    rounds to 0.
    """
    v = np.array(vector, dtype=float)
    single = v.ndim == 1
    V = np.atleast_2d(v)
    for g in encoding.ohe_groups:
        cols = list(g)
        hot = np.argmax(V[:, cols], axis=1)
        V[:, cols] = 0.0
        V[np.arange(V.shape[0]), np.asarray(cols)[hot]] = 1.0
    for j in encoding.binary_indices:
        V[:, j] = (V[:, j] > 0.5).astype(float)
    return V[0] if single else V


def apply_hooks(c, req: GeneratorRequest, project: bool = True) -> np.ndarray:
    """Frozen mask -> range clamp -> OHE projection, per the request's switches."""
    c = np.array(c, dtype=float)
    mask = req.frozen_mask
    if mask.any():
        c[..., mask] = req.x[mask]
    if req.clamp_range:
        c = np.clip(c, req.lower, req.upper)
    if project and req.project_ohe:
        c = project_ohe(c, req.encoding)
    return c


def _flipped(model, c, y) -> bool:
    return model.predict(c) != y


class Generator:
    """Base class: subclasses implement ``search`` and get timing/validity for free."""

    name = "base"
    family = "?"
    default_budget = 100
    deterministic = False

    def search(self, req: GeneratorRequest):
        """Return ``(counterfactual or None, iterations used, diagnostic, info)``."""
        raise NotImplementedError

    def budget(self, req: GeneratorRequest) -> int:
        return req.budget if req.budget is not None else self.default_budget

    def generate(self, req: GeneratorRequest) -> CFRecord:
        t0 = time.perf_counter()
        with np.errstate(over="ignore", invalid="ignore"):
            c, used, diag, info = self.search(req)
        if c is not None and not np.all(np.isfinite(c)):
            c, diag = None, "non-finite counterfactual"
        valid = c is not None and _flipped(req.model, c, req.y)
        elapsed = time.perf_counter() - t0
        return CFRecord(self.name, req.factual_id, c, bool(valid), elapsed, used,
                        req.seed, diag, info)


class GradientGenerator(Generator):
    """Gradient descent on CE(model(c), target) + l2*||c-x||^2 with a proximal L1 step.

    The L1 term is applied as soft-thresholding of ``c - x`` after each step,
    so a huge ``l1`` pins ``c`` to ``x``. With OHE projection on, the
    relaxed iterate keeps moving and its projection is what gets tested.
    """

    name = "gradient"
    family = "CO"
    default_budget = 1000
    deterministic = True

    def __init__(self, step_size: float = 0.05, l1: float = 0.0, l2: float = 0.0):
        self.step_size = float(step_size)
        self.l1 = float(l1)
        self.l2 = float(l2)

    def search(self, req):
        model, x, eta = req.model, req.x, self.step_size
        w = np.ones_like(x) if req.weights is None else np.asarray(req.weights, dtype=float)
        W1, b1 = np.ascontiguousarray(model.W1), np.ascontiguousarray(model.b1)
        W2, b2 = np.ascontiguousarray(model.W2), np.ascontiguousarray(model.b2)
        state = x.copy()
        n = self.budget(req)
        for it in range(1, n + 1):
            _, g = kernels.mlp_input_gradient(W1, b1, W2, b2, state, req.target)
            g = np.asarray(g)
            if self.l2:
                g = g + 2.0 * self.l2 * w * (state - x)
            state = state - eta * g
            if self.l1:
                d = state - x
                state = x + np.sign(d) * np.maximum(np.abs(d) - eta * self.l1 * w, 0.0)
            state = apply_hooks(state, req, project=False)
            if not np.all(np.isfinite(state)):
                return None, it, "non-finite iterate", {}
            cand = project_ohe(state, req.encoding) if req.project_ohe else state
            if _flipped(model, cand, req.y):
                return cand, it, "", {}
        return None, n, "budget exhausted", {}


def _annulus(rng, center, free, inner, outer, n):
    d = int(free.sum())
    pts = np.repeat(center[None, :], n, axis=0)
    if d == 0:
        return pts
    direction = rng.standard_normal((n, d))
    direction /= np.linalg.norm(direction, axis=1, keepdims=True)
    # radius uniform in volume between inner and outer: r^d ~ U(inner^d, outer^d)
    ratio_d = (inner / outer) ** d if inner > 0 else 0.0
    u = rng.uniform(size=n)
    r = outer * (u * (1.0 - ratio_d) + ratio_d) ** (1.0 / d)
    pts[:, free] += direction * r[:, None]
    return pts


class GrowingSpheresGenerator(Generator):
    """Sample a ball of ``initial_radius`` then annuli of width ``growth``."""

    name = "growing_spheres"
    family = "HE"
    default_budget = 40  # layers
    deterministic = False

    def __init__(self, initial_radius: float = 0.1, growth: float = 0.1,
                 samples_per_layer: int = 200):
        if initial_radius <= 0 or growth <= 0 or samples_per_layer < 1:
            raise ValueError("radius, growth and samples_per_layer must be positive")
        self.initial_radius = float(initial_radius)
        self.growth = float(growth)
        self.samples_per_layer = int(samples_per_layer)

    def search(self, req):
        rng = np.random.default_rng(req.seed)
        model, x = req.model, req.x
        free = ~req.frozen_mask
        inner, outer = 0.0, self.initial_radius
        n_layers = self.budget(req)
        for layer in range(1, n_layers + 1):
            pts = apply_hooks(_annulus(rng, x, free, inner, outer, self.samples_per_layer), req)
            hit = np.flatnonzero(model.predict(pts) != req.y)
            if hit.size:
                dist = np.linalg.norm(pts[hit] - x, axis=1)
                for k in np.argsort(dist, kind="stable"):
                    c = pts[hit[k]]
                    if _flipped(model, c, req.y):
                        c = self.sparsify(c, req)
                        return c, layer, "", {"radius": outer}
            inner, outer = outer, outer + self.growth
        return None, n_layers, "budget exhausted", {"radius": inner}

    @staticmethod
    def sparsify(c, req):
        """Revert edit units to the factual, smallest change first, while still flipped."""
        x = req.x
        if req.project_ohe:
            units = req.encoding.units()
        else:
            units = [(j,) for j in range(len(x))]
        change = [np.max(np.abs(c[list(u)] - x[list(u)])) for u in units]
        c = c.copy()
        for k in np.argsort(change, kind="stable"):
            u = list(units[k])
            if change[k] == 0.0:
                continue
            trial = c.copy()
            trial[u] = x[u]
            if _flipped(req.model, trial, req.y):
                c = trial
        return c


class GreedyMeanGenerator(Generator):
    """Best-first search over subsets of features replaced by train means.

    Numeric features take their train mean; binary columns and OHE groups
    take their modal value and are replaced as a unit. The subset whose
    replacement gives the highest target-class score is expanded next.
    """

    name = "greedy_mean"
    family = "HE"
    deterministic = True

    def budget(self, req):
        if req.budget is not None:
            return req.budget
        return 2 * len(req.encoding.units())

    def search(self, req):
        model, x = req.model, req.x
        frozen = req.frozen_mask
        units = [tuple(u) for u in req.encoding.units() if not frozen[list(u)].any()]
        repl = req.modes.copy()
        num = req.encoding.numeric_indices
        repl[num] = req.means[num]

        def apply(subset):
            c = x.copy()
            for ui in subset:
                u = list(units[ui])
                c[u] = repl[u]
            return apply_hooks(c, req)

        n_exp = self.budget(req)
        target = req.target
        heap = [(-float(model.predict_proba(x)[target]), ())]
        seen = {()}
        expansions = 0
        while heap and expansions < n_exp:
            _, subset = heapq.heappop(heap)
            expansions += 1
            children = []
            for ui in range(len(units)):
                if ui in subset:
                    continue
                child = tuple(sorted(subset + (ui,)))
                if child not in seen:
                    seen.add(child)
                    children.append(child)
            if not children:
                continue
            cands = np.array([apply(ch) for ch in children])
            probs = model.predict_proba(cands)
            scores = probs[:, target]
            flips = np.flatnonzero((probs[:, 1] > probs[:, 0]).astype(int) != req.y)
            for k in sorted(flips, key=lambda k: (-scores[k], k)):
                if _flipped(model, cands[k], req.y):
                    return cands[k], expansions, "", {"subset": [list(units[u]) for u in children[k]]}
            for ch, s in zip(children, scores):
                heapq.heappush(heap, (-float(s), ch))
        return None, expansions, "budget exhausted" if heap else "search space exhausted", {}


_REGISTRY: dict[str, Callable[..., Generator]] = {}


def register_generator(name: str, factory: Callable[..., Generator]) -> None:
    """Make ``factory(**params)`` selectable as ``name`` in configs and the CLI."""
    if name in _REGISTRY:
        raise ValueError(f"generator {name!r} already registered")
    _REGISTRY[name] = factory


def unregister_generator(name: str) -> None:
    _REGISTRY.pop(name, None)


def available_generators() -> list[str]:
    return sorted(_REGISTRY)


def make_generator(name: str, **params) -> Generator:
    try:
        factory = _REGISTRY[name]
    except KeyError:
        raise KeyError(f"unknown generator {name!r}; available: {available_generators()}") from None
    return factory(**params)


for _cls in (GradientGenerator, GrowingSpheresGenerator, GreedyMeanGenerator):
    register_generator(_cls.name, _cls)
