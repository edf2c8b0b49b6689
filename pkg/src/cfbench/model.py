"""One-hidden-layer ReLU/softmax classifier trained with RMSprop."""
from __future__ import annotations

import base64
import json
import logging
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.stats import rankdata

from . import kernels

logger = logging.getLogger(__name__)

MODEL_FORMAT = "cfbench-model"
MODEL_VERSION = 1
LEARNING_RATES = (0.01, 0.001, 0.0001)
EPOCHS = (50, 100, 500)
NEURON_FRACTIONS = (Fraction(1, 5), Fraction(2, 5), Fraction(3, 5), Fraction(4, 5), Fraction(1))
RMS_DECAY = 0.9
RMS_EPS = 1e-7


class TrainingDivergedError(RuntimeError):
    pass


class ModelFormatError(ValueError):
    """Corrupt or unreadable model file."""


class ModelVersionError(ModelFormatError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    n_hidden: int
    learning_rate: float
    epochs: int
    batch_size: int = 32


@dataclass
class NeuralModel:
    W1: np.ndarray  # (input_width, n_hidden)
    b1: np.ndarray
    W2: np.ndarray  # (n_hidden, 2)
    b2: np.ndarray
    config: TrainConfig
    eval: dict = field(default_factory=dict)
    loss_history: list = field(default_factory=list)

    @property
    def input_width(self) -> int:
        return self.W1.shape[0]

    @property
    def n_hidden(self) -> int:
        return self.W1.shape[1]

    def _check(self, X):
        X = np.asarray(X, dtype=float)
        if X.shape[-1] != self.input_width:
            raise ValueError(f"input width {X.shape[-1]} != model width {self.input_width}")
        return X

    def predict_proba(self, X) -> np.ndarray:
        """Softmax class scores; a 1-D input returns a length-2 vector."""
        X = self._check(X)
        single = X.ndim == 1
        X2 = np.atleast_2d(X)
        hidden = np.maximum(X2 @ self.W1 + self.b1, 0.0)
        z = hidden @ self.W2 + self.b2
        z = z - z.max(axis=1, keepdims=True)
        e = np.exp(z)
        p = e / e.sum(axis=1, keepdims=True)
        return p[0] if single else p

    def predict(self, X):
        """Predicted class; an exact score tie goes to class 0."""
        p = self.predict_proba(X)
        if p.ndim == 1:
            return int(p[1] > p[0])
        return (p[:, 1] > p[:, 0]).astype(np.int64)

    def input_gradient(self, x, target_class: int) -> np.ndarray:
        """d/dx of the cross-entropy towards ``target_class``."""
        x = np.ascontiguousarray(self._check(x), dtype=float)
        if x.ndim != 1:
            raise ValueError("input_gradient takes a single vector")
        _, g = kernels.mlp_input_gradient(self.W1, self.b1, self.W2, self.b2, x, int(target_class))
        return np.asarray(g)

    def weights_equal(self, other: "NeuralModel") -> bool:
        return all(np.array_equal(a, b) for a, b in
                   zip((self.W1, self.b1, self.W2, self.b2), (other.W1, other.b1, other.W2, other.b2)))


def neuron_grid(input_width: int) -> list[int]:
    """Hidden sizes {1/5..5/5} of 2*width+1, rounded half up, deduplicated."""
    if input_width < 1:
        raise ValueError("input_width must be >= 1")
    top = 2 * input_width + 1
    sizes = {max(1, int(f * top + Fraction(1, 2))) for f in NEURON_FRACTIONS}
    return sorted(sizes)


def init_model(input_width: int, config: TrainConfig, seed: int) -> NeuralModel:
    """Glorot-uniform weights, zero biases."""
    rng = np.random.default_rng(seed)
    h = config.n_hidden
    lim1 = np.sqrt(6.0 / (input_width + h))
    lim2 = np.sqrt(6.0 / (h + 2))
    return NeuralModel(
        W1=rng.uniform(-lim1, lim1, size=(input_width, h)),
        b1=np.zeros(h),
        W2=rng.uniform(-lim2, lim2, size=(h, 2)),
        b2=np.zeros(2),
        config=config,
    )


def cross_entropy(model: NeuralModel, X, y) -> float:
    p = model.predict_proba(X)
    return float(-np.mean(np.log(np.clip(p[np.arange(len(y)), y], 1e-12, 1.0))))


def fit(X, y, config: TrainConfig, seed: int) -> NeuralModel:
    """Mini-batch RMSprop on categorical cross-entropy."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=np.int64)
    if X.shape[0] == 0:
        raise ValueError("empty training set")
    model = init_model(X.shape[1], config, seed)
    rng = np.random.default_rng([seed, 1])
    params = [model.W1, model.b1, model.W2, model.b2]
    cache = [np.zeros_like(p) for p in params]
    n = X.shape[0]
    bs = min(config.batch_size, n)
    onehot = np.eye(2)[y]
    history = [cross_entropy(model, X, y)]
    for _ in range(config.epochs):
        order = rng.permutation(n)
        for start in range(0, n, bs):
            idx = order[start:start + bs]
            xb, tb = X[idx], onehot[idx]
            pre = xb @ model.W1 + model.b1
            hidden = np.maximum(pre, 0.0)
            z = hidden @ model.W2 + model.b2
            z = z - z.max(axis=1, keepdims=True)
            e = np.exp(z)
            p = e / e.sum(axis=1, keepdims=True)
            dz = (p - tb) / len(idx)
            dh = (dz @ model.W2.T) * (pre > 0.0)
            grads = [xb.T @ dh, dh.sum(axis=0), hidden.T @ dz, dz.sum(axis=0)]
            for prm, g, c in zip(params, grads, cache):
                c *= RMS_DECAY
                c += (1.0 - RMS_DECAY) * g * g
                prm -= config.learning_rate * g / (np.sqrt(c) + RMS_EPS)
        loss = cross_entropy(model, X, y)
        if not np.isfinite(loss) or not all(np.all(np.isfinite(p)) for p in params):
            raise TrainingDivergedError(f"non-finite loss with lr={config.learning_rate}")
        history.append(loss)
    model.loss_history = history
    return model


def train(ds, config: TrainConfig, seed: int) -> NeuralModel:
    """Fit on the train split of a prepared dataset and attach eval scores."""
    tr = ds.split.train
    model = fit(ds.X[tr], ds.y[tr], config, seed)
    model.eval = evaluate(model, ds)
    return model


def evaluate(model: NeuralModel, ds) -> dict:
    out = {}
    for part in ("train", "valid", "test"):
        idx = getattr(ds.split, part)
        p = model.predict_proba(ds.X[idx])[:, 1]
        yy = ds.y[idx]
        try:
            out[f"auc_{part}"] = auc(p, yy)
        except ValueError:
            out[f"auc_{part}"] = float("nan")
        out[f"acc_{part}"] = float(np.mean((p > 0.5).astype(int) == yy))
    return out


def auc(scores, labels) -> float:
    """ROC AUC via the Mann-Whitney rank statistic with midranks."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels)
    pos = labels == 1
    n_pos = int(pos.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC needs both classes present")
    r = rankdata(scores, method="average")
    return float((r[pos].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


@dataclass
class GridSearchResult:
    candidates: list  # TrainConfig per candidate
    valid_auc: list  # float or None (failed)
    selected: TrainConfig
    model: NeuralModel


def candidate_grid(input_width: int, neurons=None, learning_rates=LEARNING_RATES,
                   epochs=EPOCHS, batch_size: int = 32) -> list[TrainConfig]:
    neurons = neurons if neurons is not None else neuron_grid(input_width)
    return [TrainConfig(h, lr, ep, batch_size) for h in neurons for lr in learning_rates for ep in epochs]


def select_best(candidates, scores) -> int:
    """Index of max score; ties -> fewest neurons, smallest lr, fewest epochs."""
    best = None
    for i, (cfg, s) in enumerate(zip(candidates, scores)):
        if s is None or not np.isfinite(s):
            continue
        key = (-s, cfg.n_hidden, cfg.learning_rate, cfg.epochs)
        if best is None or key < best[0]:
            best = (key, i)
    if best is None:
        raise RuntimeError("no grid-search candidate trained successfully")
    return best[1]


def grid_search(ds, seed: int, candidates=None, jobs: int = 1) -> GridSearchResult:
    """Train every candidate (seed + index) and keep the best validation AUC."""
    if candidates is None:
        candidates = candidate_grid(ds.width)
    va = ds.split.valid

    def run(i):
        cfg = candidates[i]
        try:
            m = fit(ds.X[ds.split.train], ds.y[ds.split.train], cfg, seed + i)
        except TrainingDivergedError as exc:
            warnings.warn(f"grid candidate {cfg} skipped: {exc}")
            return None, None
        return m, auc(m.predict_proba(ds.X[va])[:, 1], ds.y[va])

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(run, range(len(candidates))))
    else:
        results = [run(i) for i in range(len(candidates))]
    scores = [r[1] for r in results]
    best = select_best(candidates, scores)
    model = results[best][0]
    model.eval = evaluate(model, ds)
    return GridSearchResult(list(candidates), scores, candidates[best], model)


def _enc(a: np.ndarray) -> str:
    return base64.b64encode(np.ascontiguousarray(a, dtype="<f8").tobytes()).decode("ascii")


def _dec(s: str, shape) -> np.ndarray:
    raw = base64.b64decode(s.encode("ascii"), validate=True)
    return np.frombuffer(raw, dtype="<f8").reshape(shape).astype(float)


def model_to_dict(model: NeuralModel) -> dict:
    return {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "shapes": {"input": model.input_width, "hidden": model.n_hidden},
        "weights": {k: _enc(getattr(model, k)) for k in ("W1", "b1", "W2", "b2")},
        "config": {"n_hidden": model.config.n_hidden, "learning_rate": model.config.learning_rate,
                   "epochs": model.config.epochs, "batch_size": model.config.batch_size},
        "eval": model.eval,
    }


def save_model(model: NeuralModel, path) -> None:
    Path(path).write_text(json.dumps(model_to_dict(model), indent=1, sort_keys=True))


def load_model(path) -> NeuralModel:
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, UnicodeDecodeError, ValueError) as exc:
        raise ModelFormatError(f"{path}: corrupt model file ({exc})") from exc
    if not isinstance(doc, dict) or doc.get("format") != MODEL_FORMAT:
        raise ModelFormatError(f"{path}: not a model file")
    if doc.get("version") != MODEL_VERSION:
        raise ModelVersionError(f"{path}: model format version {doc.get('version')} "
                                f"(this build reads {MODEL_VERSION})")
    try:
        m, h = doc["shapes"]["input"], doc["shapes"]["hidden"]
        w = doc["weights"]
        return NeuralModel(
            W1=_dec(w["W1"], (m, h)), b1=_dec(w["b1"], (h,)),
            W2=_dec(w["W2"], (h, 2)), b2=_dec(w["b2"], (2,)),
            config=TrainConfig(**doc["config"]), eval=doc.get("eval", {}),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelFormatError(f"{path}: corrupt model file ({exc})") from exc
