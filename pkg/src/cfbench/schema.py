"""Dataset schemas, CSV ingestion, target binarization, splits and normalization."""
from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import logging
import os
import shutil
import urllib.error
import urllib.request
import warnings
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

logger = logging.getLogger(__name__)

KINDS = ("numeric", "categorical", "binary")
MISSING_TOKENS = ("", "?", "NA", "NaN", "nan", "null")
SPLIT_FRACTIONS = (Fraction(3, 5), Fraction(1, 5), Fraction(1, 5))


class SchemaError(ValueError):
    """Malformed schema document."""


class DataError(ValueError):
    """CSV contents that do not conform to the schema."""


class FetchError(RuntimeError):
    """Download failed (network or I/O)."""


class ChecksumMismatchError(FetchError):
    """Downloaded bytes do not match the expected digest."""


@dataclass(frozen=True)
class ColumnSpec:
    name: str
    kind: str
    allowed_range: Optional[tuple[float, float]] = None
    categories: Optional[tuple[str, ...]] = None


@dataclass(frozen=True)
class FeatureSchema:
    name: str
    columns: tuple[ColumnSpec, ...]
    target: str
    constraints: tuple[dict, ...] = ()
    data: Optional[str] = None
    url: Optional[str] = None
    sha256: Optional[str] = None
    base_dir: Optional[str] = None
    positive_class_rule: str = "majority-vs-rest"

    def __post_init__(self):
        names = [c.name for c in self.columns]
        if len(set(names)) != len(names):
            raise SchemaError(f"{self.name}: duplicate column names")
        if self.target not in names:
            raise SchemaError(f"{self.name}: target {self.target!r} is not a column")
        for c in self.columns:
            if c.kind not in KINDS:
                raise SchemaError(f"column {c.name!r}: unknown kind {c.kind!r}")
            if c.categories is not None:
                if c.kind == "binary" and len(c.categories) != 2:
                    raise SchemaError(f"binary column {c.name!r} needs exactly 2 categories")
                if c.kind == "categorical" and c.name != self.target and len(c.categories) < 2:
                    raise SchemaError(f"categorical column {c.name!r} needs >= 2 categories")
            if c.allowed_range is not None and c.allowed_range[0] > c.allowed_range[1]:
                raise SchemaError(f"column {c.name!r}: range lo > hi")

    @property
    def features(self) -> tuple[ColumnSpec, ...]:
        return tuple(c for c in self.columns if c.name != self.target)

    @property
    def n_numeric(self) -> int:
        return sum(c.kind == "numeric" for c in self.features)

    @property
    def n_categorical(self) -> int:
        """Categorical plus binary columns."""
        return sum(c.kind != "numeric" for c in self.features)

    @property
    def dataset_type(self) -> str:
        if self.n_categorical == 0:
            return "numerical"
        if self.n_numeric == 0:
            return "categorical"
        return "mixed"

    def data_path(self) -> Optional[Path]:
        if self.data is None:
            return None
        p = Path(self.data)
        if not p.is_absolute() and self.base_dir:
            p = Path(self.base_dir) / p
        return p


def load_schema(path) -> FeatureSchema:
    """Read a TOML or JSON schema document."""
    path = Path(path)
    try:
        if path.suffix == ".json":
            doc = json.loads(path.read_text(encoding="utf-8"))
        else:
            with open(path, "rb") as fh:
                doc = tomllib.load(fh)
    except (OSError, ValueError) as exc:
        raise SchemaError(f"cannot read schema {path}: {exc}") from exc
    return schema_from_dict(doc, name=path.stem, base_dir=str(path.parent))


def schema_from_dict(doc: dict, name: str = "dataset", base_dir: Optional[str] = None) -> FeatureSchema:
    if "target" not in doc:
        raise SchemaError("schema has no target")
    cols = []
    for entry in doc.get("column", []):
        if "name" not in entry or "kind" not in entry:
            raise SchemaError(f"column entry needs name and kind: {entry}")
        rng = entry.get("range")
        if rng is not None:
            if len(rng) != 2:
                raise SchemaError(f"column {entry['name']!r}: range must be [lo, hi]")
            rng = (float(rng[0]), float(rng[1]))
        cats = entry.get("categories")
        if cats is not None:
            cats = tuple(str(c) for c in cats)
        cols.append(ColumnSpec(entry["name"], entry["kind"], rng, cats))
    if not cols:
        raise SchemaError("schema has no columns")
    return FeatureSchema(
        name=doc.get("name", name),
        columns=tuple(cols),
        target=doc["target"],
        constraints=tuple(doc.get("constraint", [])),
        data=doc.get("data"),
        url=doc.get("url"),
        sha256=doc.get("sha256"),
        base_dir=base_dir,
    )


@dataclass(frozen=True)
class EncodedColumn:
    name: str
    kind: str
    indices: tuple[int, ...]
    categories: Optional[tuple[str, ...]] = None


@dataclass(frozen=True)
class EncodingMap:
    columns: tuple[EncodedColumn, ...]

    @property
    def width(self) -> int:
        return sum(len(c.indices) for c in self.columns)

    def __getitem__(self, name) -> EncodedColumn:
        for c in self.columns:
            if c.name == name:
                return c
        raise KeyError(name)

    @property
    def numeric_indices(self) -> list[int]:
        return [c.indices[0] for c in self.columns if c.kind == "numeric"]

    @property
    def binary_indices(self) -> list[int]:
        return [c.indices[0] for c in self.columns if c.kind == "binary"]

    @property
    def ohe_groups(self) -> list[tuple[int, ...]]:
        return [c.indices for c in self.columns if c.kind == "categorical"]

    def numeric_mask(self) -> np.ndarray:
        mask = np.zeros(self.width, dtype=bool)
        mask[self.numeric_indices] = True
        return mask

    def units(self) -> list[tuple[int, ...]]:
        """Atomic edit units: one per raw feature (OHE groups stay together)."""
        return [c.indices for c in self.columns]

    def decode(self, row) -> dict:
        """Raw value per column; ``None`` for a group that is not one-hot."""
        out = {}
        for c in self.columns:
            if c.kind == "numeric":
                out[c.name] = float(row[c.indices[0]])
            elif c.kind == "binary":
                v = row[c.indices[0]]
                out[c.name] = c.categories[int(v)] if v in (0.0, 1.0) else None
            else:
                vals = np.asarray(row)[list(c.indices)]
                ok = np.all((vals == 0.0) | (vals == 1.0)) and vals.sum() == 1.0
                out[c.name] = c.categories[int(np.argmax(vals))] if ok else None
        return out


@dataclass(frozen=True)
class Split:
    train: np.ndarray
    valid: np.ndarray
    test: np.ndarray


@dataclass(frozen=True)
class Normalizer:
    """Per-encoded-column affine map ``(a - center) / scale``."""

    center: np.ndarray
    scale: np.ndarray
    mode: str = "variance"

    def transform(self, X):
        return (np.asarray(X, dtype=float) - self.center) / self.scale

    def inverse(self, X):
        return np.asarray(X, dtype=float) * self.scale + self.center


@dataclass(frozen=True)
class FeatureStats:
    """Train-split statistics.

    ``mean``/``var`` are in raw units (they drive normalization); ``u``,
    ``mad`` and ``cov_inv`` are in the normalized model space where the
    distance metrics are evaluated.
    """

    mean: np.ndarray
    var: np.ndarray
    u: np.ndarray
    mad: np.ndarray
    mad_denominator: np.ndarray
    cov_inv: np.ndarray
    mode: np.ndarray  # modal value per encoded column (train), used for dummies
    lower: np.ndarray  # realistic bounds, model space
    upper: np.ndarray
    raw_lower: np.ndarray
    raw_upper: np.ndarray


@dataclass(frozen=True)
class PreparedDataset:
    name: str
    schema: FeatureSchema
    X_raw: np.ndarray
    y: np.ndarray
    labels: tuple[str, ...]
    encoding: EncodingMap
    split: Optional[Split] = None
    normalizer: Optional[Normalizer] = None
    stats: Optional[FeatureStats] = None
    X: Optional[np.ndarray] = field(default=None)

    @property
    def width(self) -> int:
        return self.encoding.width

    @property
    def n_rows(self) -> int:
        return self.X_raw.shape[0]

    def to_raw(self, X):
        """Model-space rows back to raw (still encoded) units."""
        return X if self.normalizer is None else self.normalizer.inverse(X)

    def to_model(self, X_raw):
        return X_raw if self.normalizer is None else self.normalizer.transform(X_raw)


@dataclass(frozen=True)
class FactualCase:
    dataset: str
    row: int
    x: np.ndarray
    y: int
    pred_class: int
    pred_score: float
    misclassified: bool


def _parse_binary(tok: str, col: ColumnSpec) -> float:
    if col.categories is not None:
        if tok in col.categories:
            return float(col.categories.index(tok))
    try:
        v = float(tok)
    except ValueError:
        v = None
    if v in (0.0, 1.0):
        if col.categories is None:
            return v
        # numeric spelling of a numeric category list, e.g. "1.0" for "1"
        for i, cat in enumerate(col.categories):
            try:
                if float(cat) == v:
                    return float(i)
            except ValueError:
                pass
    raise DataError(f"column {col.name!r}: {tok!r} is not a valid binary value")


def load_and_encode(csv_path, schema: FeatureSchema) -> PreparedDataset:
    """Read CSV rows, one-hot encode categoricals and binarize the target.

    Numeric columns are copied as floats, binary columns mapped to {0, 1} and
    categorical columns expanded to one dummy per category. Categories not
    listed in the schema are inferred (sorted) from the data.
    """
    with open(csv_path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{csv_path}: empty file") from None
        rows = [[t.strip() for t in r] for r in reader if any(t.strip() for t in r)]
    pos = {}
    for c in schema.columns:
        if c.name not in header:
            raise DataError(f"{csv_path}: missing column {c.name!r}")
        pos[c.name] = header.index(c.name)
    if not rows:
        raise DataError(f"{csv_path}: no data rows")
    for lineno, r in enumerate(rows, start=2):
        if len(r) != len(header):
            raise DataError(f"{csv_path}:{lineno}: expected {len(header)} fields, got {len(r)}")
        for c in schema.columns:
            if r[pos[c.name]] in MISSING_TOKENS:
                raise DataError(f"{csv_path}:{lineno}: missing value in {c.name!r}")

    enc_cols = []
    blocks = []
    offset = 0
    for c in schema.features:
        raw = [r[pos[c.name]] for r in rows]
        if c.kind == "numeric":
            try:
                vals = np.array([float(t) for t in raw])
            except ValueError as exc:
                raise DataError(f"column {c.name!r}: {exc}") from None
            if not np.all(np.isfinite(vals)):
                raise DataError(f"column {c.name!r}: non-finite value")
            blocks.append(vals[:, None])
            enc_cols.append(EncodedColumn(c.name, "numeric", (offset,)))
            offset += 1
        elif c.kind == "binary":
            vals = np.array([_parse_binary(t, c) for t in raw])
            cats = c.categories or ("0", "1")
            blocks.append(vals[:, None])
            enc_cols.append(EncodedColumn(c.name, "binary", (offset,), cats))
            offset += 1
        else:
            cats = c.categories or tuple(sorted(set(raw)))
            if len(cats) < 2:
                raise DataError(f"categorical column {c.name!r} has fewer than 2 categories")
            lookup = {v: i for i, v in enumerate(cats)}
            block = np.zeros((len(rows), len(cats)))
            for i, t in enumerate(raw):
                if t not in lookup:
                    raise DataError(f"column {c.name!r}: unknown category {t!r}")
                block[i, lookup[t]] = 1.0
            blocks.append(block)
            enc_cols.append(EncodedColumn(c.name, "categorical",
                                          tuple(range(offset, offset + len(cats))), cats))
            offset += len(cats)

    labels = tuple(r[pos[schema.target]] for r in rows)
    X_raw = np.hstack(blocks) if blocks else np.zeros((len(rows), 0))
    return PreparedDataset(
        name=schema.name,
        schema=schema,
        X_raw=X_raw,
        y=binarize_target(labels),
        labels=labels,
        encoding=EncodingMap(tuple(enc_cols)),
    )


def binarize_target(labels: Sequence, n_classes: Optional[int] = None) -> np.ndarray:
    """Majority class -> 1, every other class -> 0.

    A tie in class counts goes to the lexicographically smallest label.
    """
    if len(labels) == 0:
        raise ValueError("empty label list")
    if n_classes is not None and n_classes < 2:
        raise ValueError("n_classes must be >= 2")
    counts = {}
    for lab in labels:
        counts[lab] = counts.get(lab, 0) + 1
    majority = min(counts, key=lambda lab: (-counts[lab], str(lab)))
    return np.array([1 if lab == majority else 0 for lab in labels], dtype=np.int64)


def _allocate(n: int) -> list[int]:
    """Largest-remainder allocation of n rows to train/valid/test."""
    quotas = [f * n for f in SPLIT_FRACTIONS]
    sizes = [int(q) for q in quotas]
    rest = n - sum(sizes)
    order = sorted(range(3), key=lambda i: (-(quotas[i] - sizes[i]), i))
    for i in order[:rest]:
        sizes[i] += 1
    if n >= 3:
        # every split gets at least one member of the stratum
        for i in range(3):
            if sizes[i] == 0:
                donor = max(range(3), key=lambda j: (sizes[j], -j))
                sizes[donor] -= 1
                sizes[i] += 1
    return sizes


def split_dataset(ds: PreparedDataset, seed: int) -> Split:
    """Stratified 60/20/20 split, deterministic for a given seed."""
    n = ds.n_rows
    if n < 5:
        raise DataError(f"{ds.name}: need at least 5 rows to split, got {n}")
    rng = np.random.default_rng(seed)
    parts = ([], [], [])
    for cls in np.unique(ds.y):
        idx = np.flatnonzero(ds.y == cls)
        if len(idx) < 3:
            raise DataError(f"{ds.name}: class {cls} has {len(idx)} rows; every split needs one")
        idx = rng.permutation(idx)
        a, b, _ = _allocate(len(idx))
        parts[0].append(idx[:a])
        parts[1].append(idx[a:a + b])
        parts[2].append(idx[a + b:])
    train, valid, test = (np.sort(np.concatenate(p)) for p in parts)
    return Split(train, valid, test)


def with_split(ds: PreparedDataset, seed: int) -> PreparedDataset:
    return dataclasses.replace(ds, split=split_dataset(ds, seed))


def _mad(X: np.ndarray) -> np.ndarray:
    med = np.median(X, axis=0)
    return np.median(np.abs(X - med), axis=0)


def _inverse_covariance(X: np.ndarray) -> np.ndarray:
    m = X.shape[1]
    cov = np.atleast_2d(np.cov(X, rowvar=False)) if X.shape[0] > 1 else np.zeros((m, m))
    if np.linalg.matrix_rank(cov) < m:
        lam = 1e-6 * np.trace(cov) / m
        if lam <= 0:
            lam = 1e-6
        cov = cov + lam * np.eye(m)
    return np.linalg.inv(cov)


def normalize(ds: PreparedDataset, mode: str = "variance") -> PreparedDataset:
    """Normalize numeric columns with train-split statistics.

    ``mode="variance"`` maps ``a -> (a - mean) / var``; ``mode="std"`` uses the
    conventional z-score. Dummy and binary columns are left as they are, as
    are zero-variance numeric columns (with a warning).
    """
    if ds.split is None:
        raise ValueError("dataset must be split before normalization")
    if mode not in ("variance", "std"):
        raise ValueError(f"unknown normalization mode {mode!r}")
    train = ds.X_raw[ds.split.train]
    mean = train.mean(axis=0)
    var = train.var(axis=0)
    center = np.zeros(ds.width)
    scale = np.ones(ds.width)
    for col in ds.encoding.columns:
        if col.kind != "numeric":
            continue
        j = col.indices[0]
        if var[j] <= 0:
            warnings.warn(f"{ds.name}: column {col.name!r} has zero variance; left unnormalized")
            continue
        center[j] = mean[j]
        scale[j] = var[j] if mode == "variance" else np.sqrt(var[j])
    norm = Normalizer(center, scale, mode)
    X = norm.transform(ds.X_raw)
    Xt = X[ds.split.train]

    mad = _mad(Xt)
    mad_den = mad.copy()
    for j in ds.encoding.numeric_indices:
        if mad[j] == 0:
            warnings.warn(f"{ds.name}: encoded column {j} has MAD 0; using 1.0 in MAD distance")
    mad_den[mad_den == 0] = 1.0

    raw_lo = train.min(axis=0)
    raw_hi = train.max(axis=0)
    for c in ds.schema.features:
        if c.kind == "numeric" and c.allowed_range is not None:
            j = ds.encoding[c.name].indices[0]
            raw_lo[j], raw_hi[j] = c.allowed_range
    for j in ds.encoding.binary_indices + [i for g in ds.encoding.ohe_groups for i in g]:
        raw_lo[j], raw_hi[j] = 0.0, 1.0
    lower = norm.transform(raw_lo)
    upper = norm.transform(raw_hi)

    modal = np.zeros(ds.width)
    for j in ds.encoding.binary_indices:
        modal[j] = float(np.mean(Xt[:, j]) > 0.5)
    for g in ds.encoding.ohe_groups:
        # modal category of the group; ties go to the first category
        modal[g[int(np.argmax(Xt[:, list(g)].sum(axis=0)))]] = 1.0
    stats = FeatureStats(
        mean=mean, var=var, u=Xt.mean(axis=0), mad=mad, mad_denominator=mad_den,
        cov_inv=_inverse_covariance(Xt), mode=modal,
        lower=lower, upper=upper, raw_lower=raw_lo, raw_upper=raw_hi,
    )
    return dataclasses.replace(ds, normalizer=norm, stats=stats, X=X)


def prepare(schema: FeatureSchema, csv_path=None, seed: int = 0,
            normalization: str = "variance") -> PreparedDataset:
    """load_and_encode -> split -> normalize in one call."""
    path = csv_path if csv_path is not None else schema.data_path()
    if path is None:
        raise SchemaError(f"{schema.name}: no data path")
    ds = load_and_encode(path, schema)
    ds = with_split(ds, seed)
    return normalize(ds, normalization)


def select_factuals(ds: PreparedDataset, model, per_class_count: int = 100,
                    seed: int = 0) -> list[FactualCase]:
    """Sample up to ``per_class_count`` test rows per binary class."""
    if ds.split is None or ds.X is None:
        raise ValueError("dataset must be split and normalized")
    rng = np.random.default_rng(seed)
    test = ds.split.test
    out = []
    for cls in (0, 1):
        rows = test[ds.y[test] == cls]
        if rows.size == 0:
            raise DataError(f"{ds.name}: test split has no rows of class {cls}")
        take = min(per_class_count, rows.size)
        picked = np.sort(rng.choice(rows, size=take, replace=False))
        probs = model.predict_proba(ds.X[picked])
        for r, p in zip(picked, probs):
            pred = 1 if p[1] > p[0] else 0
            out.append(FactualCase(ds.name, int(r), ds.X[r].copy(), cls, pred,
                                   float(p[pred]), pred != cls))
    return out


def default_data_dir() -> Path:
    env = os.environ.get("CFBENCH_DATA_DIR")
    if env:
        return Path(env)
    return Path.home() / ".cache" / "cfbench"


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def fetch_dataset(source_url: str, expected_checksum: str, data_dir=None,
                  filename: Optional[str] = None, timeout: float = 30.0) -> Path:
    """Download ``source_url`` into the cache and verify its sha256 digest.

    An already-cached file with the right digest is returned without a
    download.
    """
    data_dir = Path(data_dir) if data_dir is not None else default_data_dir()
    data_dir.mkdir(parents=True, exist_ok=True)
    name = filename or Path(urllib.request.url2pathname(source_url.split("?")[0])).name or "data"
    target = data_dir / name
    expected = expected_checksum.lower()
    if target.exists() and sha256_file(target) == expected:
        return target
    tmp = target.with_suffix(target.suffix + ".part")
    try:
        with urllib.request.urlopen(source_url, timeout=timeout) as resp, open(tmp, "wb") as out:
            shutil.copyfileobj(resp, out)
    except (urllib.error.URLError, OSError, ValueError) as exc:
        tmp.unlink(missing_ok=True)
        raise FetchError(f"cannot fetch {source_url}: {exc}") from exc
    got = sha256_file(tmp)
    if got != expected:
        tmp.unlink(missing_ok=True)
        raise ChecksumMismatchError(f"{source_url}: expected sha256 {expected}, got {got}")
    tmp.replace(target)
    logger.info("fetched %s -> %s", source_url, target)
    return target
