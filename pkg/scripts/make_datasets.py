"""Regenerate the CSV files bundled in src/cfbench/data (deterministic)."""
import csv
import math
from pathlib import Path

import numpy as np

OUT = Path(__file__).resolve().parents[1] / "src" / "cfbench" / "data"


def write(name, header, rows):
    with open(OUT / f"{name}.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])


def iris():
    from sklearn.datasets import load_iris
    d = load_iris()
    names = ["Iris-setosa", "Iris-versicolor", "Iris-virginica"]
    rows = [list(map(float, x)) + [names[t]] for x, t in zip(d.data, d.target)]
    write("iris", ["sepal_length", "sepal_width", "petal_length", "petal_width", "class"], rows)


def linear2d(rng, n=600):
    rows = []
    while len(rows) < n:
        s = rng.choice([-1.0, 1.0])
        x1 = s * rng.uniform(0.5, 2.0)
        x2 = -s * rng.uniform(0.5, 2.0)
        if abs(x1 + x2) < 0.1:
            continue
        rows.append([round(x1, 4), round(x2, 4), "pos" if x1 + x2 > 0 else "neg"])
    write("linear2d", ["x1", "x2", "label"], rows)


def catsynth(rng, n=600):
    weights = {"colour": {"red": 1.0, "green": -0.5, "blue": -1.0},
               "shape": {"round": 0.8, "square": -0.2, "oval": -0.9},
               "size": {"small": -0.7, "medium": 0.1, "large": 0.9}}
    rows = []
    for _ in range(n):
        vals = [rng.choice(list(w)) for w in weights.values()]
        score = sum(weights[k][v] for k, v in zip(weights, vals)) + rng.normal(0, 0.3)
        rows.append(vals + ["yes" if score > 0 else "no"])
    write("catsynth", list(weights) + ["label"], rows)


def mixedsynth(rng, n=600):
    rows = []
    sectors = {"public": -0.5, "private": 0.4, "self": 0.1}
    for _ in range(n):
        age = int(rng.integers(18, 81))
        income = round(float(rng.uniform(10.0, 120.0)), 2)
        sector = rng.choice(list(sectors))
        owner = rng.choice(["no", "yes"])
        score = 0.03 * (age - 45) + 0.025 * (income - 60) + sectors[sector] + (0.6 if owner == "yes" else -0.4)
        rows.append([age, income, sector, owner, "approved" if score + rng.normal(0, 0.3) > 0 else "denied"])
    write("mixedsynth", ["age", "income", "sector", "owner", "label"], rows)


def circles(rng, n=300):
    rows = []
    for _ in range(n):
        r = float(rng.uniform(5.0, 25.0))
        texture = float(rng.uniform(10.0, 30.0))
        area = math.pi * r ** 2
        rows.append([r, area, texture, "M" if r + 0.3 * texture + rng.normal(0, 2) > 21 else "B"])
    write("circles", ["radius", "area", "texture", "diagnosis"], rows)


def adverts(rng, n=300):
    rows = []
    for _ in range(n):
        h = int(rng.integers(10, 400))
        w = int(rng.integers(10, 600))
        local = rng.choice(["0", "1"])
        ratio = w / h
        rows.append([float(h), float(w), ratio, local, "ad" if ratio > 2.5 or (local == "1" and w > 400) else "nonad"])
    write("adverts", ["height", "width", "ratio", "local", "label"], rows)


def pageblocks(rng, n=400):
    rows = []
    for _ in range(n):
        h = int(rng.integers(1, 40))
        length = int(rng.integers(1, 300))
        area = h * length
        blackpix = int(rng.integers(1, area + 1))
        blackand = int(rng.integers(blackpix, area + 1))
        wb_trans = int(rng.integers(1, blackpix + 1))
        label = "text" if (length / h > 5 and blackpix / area < 0.6) else "other"
        rows.append([float(h), float(length), float(area), length / h, blackpix / area,
                     blackand / area, blackpix / wb_trans, float(blackpix), float(blackand),
                     float(wb_trans), label])
    write("pageblocks", ["height", "length", "area", "eccen", "p_black", "p_and", "mean_tr",
                         "blackpix", "blackand", "wb_trans", "class"], rows)


if __name__ == "__main__":
    rng = np.random.default_rng(20230101)
    iris()
    linear2d(rng)
    catsynth(rng)
    mixedsynth(rng)
    circles(rng)
    adverts(rng)
    pageblocks(rng)
