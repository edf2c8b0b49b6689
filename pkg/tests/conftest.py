import csv
import sys

import numpy as np
import pytest

from cfbench.model import NeuralModel, TrainConfig
from cfbench.schema import load_and_encode, normalize, schema_from_dict, with_split


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)
    return path


def hand_model(W1, b1, W2, b2):
    W1 = np.asarray(W1, dtype=float)
    return NeuralModel(W1, np.asarray(b1, dtype=float), np.asarray(W2, dtype=float),
                       np.asarray(b2, dtype=float), TrainConfig(W1.shape[1], 0.01, 0))


def linear_model(w, bias=0.0):
    """Two-unit ReLU net whose class-1 logit minus class-0 logit is w.x + bias."""
    w = np.asarray(w, dtype=float)
    W1 = np.stack([w, -w], axis=1)
    W2 = np.array([[-0.5, 0.5], [0.5, -0.5]])
    return hand_model(W1, [bias, -bias], W2, [0.0, 0.0])


MIXED_DOC = {
    "name": "mini",
    "target": "label",
    "column": [
        {"name": "num", "kind": "numeric", "range": [0, 10]},
        {"name": "colour", "kind": "categorical", "categories": ["r", "g", "b"]},
        {"name": "flag", "kind": "binary", "categories": ["n", "y"]},
        {"name": "label", "kind": "categorical", "categories": ["A", "B"]},
    ],
    "constraint": [{"ohe": ["colour"]}, {"feature": "flag", "binary": True}],
}


@pytest.fixture
def mixed_csv(tmp_path):
    rng = np.random.default_rng(3)
    rows = []
    for i in range(40):
        num = round(float(rng.uniform(0, 10)), 3)
        rows.append([num, "rgb"[i % 3], "ny"[i % 2], "A" if num > 4 else "B"])
    return write_csv(tmp_path / "mini.csv", ["num", "colour", "flag", "label"], rows)


@pytest.fixture
def mixed_schema():
    return schema_from_dict(MIXED_DOC)


@pytest.fixture
def mixed_ds(mixed_csv, mixed_schema):
    return normalize(with_split(load_and_encode(mixed_csv, mixed_schema), 0))


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(mod.RESULTS):
        title, status = mod.RESULTS[n]
        terminalreporter.write_line(f"criterion {n:>2} {status}  {title}")
