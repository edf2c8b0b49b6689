"""Run configuration, the end-to-end benchmark pipeline, persistence and reports."""
from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__, kernels
from .constraints import audit_rows, dataset_constraints
from .generators import available_generators, build_request, make_generator
from .metrics import DIRECTIONS, score_record
from .model import EPOCHS, LEARNING_RATES, candidate_grid, grid_search, save_model
from .ranking import VALIDITY_MODES, format_tables, grouping_tables, tables_to_csv_rows
from .recommender import FEATURES, DecisionTree, build_rows, fit_tree
from .schema import (SchemaError, fetch_dataset, load_and_encode, load_schema, normalize,
                     select_factuals, sha256_file, with_split)

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

logger = logging.getLogger(__name__)

SEED_KEYS = ("split", "model", "factuals", "generator")
RECORDS_FILE = "records.jsonl"
MASKED_KEYS = frozenset({"ct", "seconds", "elapsed"})


class ConfigError(ValueError):
    def __init__(self, errors):
        self.errors = list(errors) if not isinstance(errors, str) else [errors]
        super().__init__("; ".join(self.errors))


class BenchmarkError(RuntimeError):
    def __init__(self, stage: str, dataset: str, message: str, partial: bool):
        self.stage, self.dataset, self.partial = stage, dataset, partial
        super().__init__(f"[{stage}] {dataset}: {message}")


MODEL_KEYS = ("neurons", "learning_rates", "epochs", "batch_size")


def builtin_path(name: str) -> Path:
    """Path of a file shipped in ``cfbench/data``."""
    return Path(str(resources.files("cfbench") / "data" / name))


def resolve(path, base: Optional[Path] = None) -> Path:
    s = str(path)
    if s.startswith("builtin:"):
        name = s[len("builtin:"):]
        return builtin_path(name if "." in name else name + ".toml")
    p = Path(s)
    if not p.is_absolute() and base is not None:
        p = base / p
    return p


@dataclass
class DatasetSpec:
    schema_path: Path
    data: Optional[Path] = None
    url: Optional[str] = None
    sha256: Optional[str] = None
    model_grid: dict = field(default_factory=dict)


@dataclass
class GeneratorSpec:
    label: str
    name: str
    params: dict = field(default_factory=dict)
    clamp_range: bool = True
    project_ohe: bool = True
    budget: Optional[int] = None
    frozen: tuple = ()


@dataclass
class RunConfig:
    name: str
    datasets: list
    generators: list
    seeds: dict
    factuals_per_class: int = 100
    validity_modes: tuple = VALIDITY_MODES
    normalization: str = "variance"
    model_grid: dict = field(default_factory=dict)
    jobs: int = 1
    output: Optional[str] = None
    source: dict = field(default_factory=dict, repr=False)

    @property
    def config_hash(self) -> str:
        blob = json.dumps(self.source, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


def _read_doc(path: Path) -> dict:
    if path.suffix == ".json":
        return json.loads(path.read_text(encoding="utf-8"))
    with open(path, "rb") as fh:
        return tomllib.load(fh)


def validate_config(path) -> list[str]:
    """Every problem found in a run config; an empty list means it is valid."""
    try:
        load_config(path)
    except ConfigError as exc:
        return exc.errors
    return []


def load_config(path) -> RunConfig:
    path = resolve(path)
    if not path.exists():
        raise ConfigError(f"config file {path} does not exist")
    try:
        doc = _read_doc(path)
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot parse {path}: {exc}")
    base = path.parent
    errors = []

    seeds = doc.get("seeds")
    if not isinstance(seeds, dict):
        errors.append("missing [seeds] table (seeds are mandatory)")
        seeds = {}
    for k in SEED_KEYS:
        if k not in seeds:
            errors.append(f"missing seed {k!r}")
        elif not isinstance(seeds[k], int) or isinstance(seeds[k], bool):
            errors.append(f"seed {k!r} must be an integer")

    datasets = []
    if not doc.get("dataset"):
        errors.append("no [[dataset]] entries")
    for i, entry in enumerate(doc.get("dataset", [])):
        if "schema" not in entry:
            errors.append(f"dataset #{i}: missing schema")
            continue
        sp = resolve(entry["schema"], base)
        if not sp.exists():
            errors.append(f"dataset #{i}: schema file {sp} not found")
            continue
        try:
            schema = load_schema(sp)
        except SchemaError as exc:
            errors.append(f"dataset #{i}: {exc}")
            continue
        data = resolve(entry["data"], base) if "data" in entry else schema.data_path()
        url = entry.get("url", schema.url)
        sha = entry.get("sha256", schema.sha256)
        if url and not sha:
            errors.append(f"dataset #{i}: url given without sha256")
        if (data is None or not data.exists()) and not url:
            errors.append(f"dataset #{i}: data file {data} not found and no url to fetch")
        dgrid = dict(entry.get("model", {}))
        for key in dgrid:
            if key not in MODEL_KEYS:
                errors.append(f"dataset #{i}: unknown [model] key {key!r}")
        datasets.append(DatasetSpec(sp, data, url, sha, dgrid))

    generators = []
    labels = set()
    if not doc.get("generator"):
        errors.append("no [[generator]] entries")
    for i, entry in enumerate(doc.get("generator", [])):
        name = entry.get("name")
        if name is None:
            errors.append(f"generator #{i}: missing name")
            continue
        label = entry.get("id", name)
        if label in labels:
            errors.append(f"duplicate generator name {label!r}")
        labels.add(label)
        if name not in available_generators():
            errors.append(f"generator {name!r} is not registered (available: {available_generators()})")
            continue
        params = dict(entry.get("params", {}))
        try:
            make_generator(name, **params)
        except (TypeError, ValueError) as exc:
            errors.append(f"generator {label!r}: bad params: {exc}")
        budget = entry.get("budget")
        if budget is not None and (not isinstance(budget, int) or budget <= 0):
            errors.append(f"generator {label!r}: budget must be a positive integer")
        generators.append(GeneratorSpec(label, name, params, bool(entry.get("clamp_range", True)),
                                        bool(entry.get("project_ohe", True)), budget,
                                        tuple(entry.get("frozen", ()))))

    n_fact = doc.get("factuals_per_class", 100)
    if not isinstance(n_fact, int) or n_fact <= 0:
        errors.append("factuals_per_class must be a positive integer")
    modes = tuple(doc.get("validity_modes", VALIDITY_MODES))
    for m in modes:
        if m not in VALIDITY_MODES:
            errors.append(f"unknown validity mode {m!r}")
    norm = doc.get("normalization", "variance")
    if norm not in ("variance", "std"):
        errors.append(f"unknown normalization {norm!r}")
    grid = dict(doc.get("model", {}))
    for key in grid:
        if key not in MODEL_KEYS:
            errors.append(f"unknown [model] key {key!r}")
    if errors:
        raise ConfigError(errors)
    return RunConfig(
        name=doc.get("name", path.stem), datasets=datasets, generators=generators,
        seeds=dict(seeds), factuals_per_class=n_fact, validity_modes=modes,
        normalization=norm, model_grid=grid, jobs=int(doc.get("jobs", 1)),
        output=doc.get("output"), source=doc,
    )


def _hash_json(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True).encode()).hexdigest()


def _vec(v):
    return None if v is None else [float(a) for a in v]


@dataclass
class RunRecord:
    path: Path
    header: dict
    records: list
    status: str


def run_benchmark(cfg: RunConfig, out_dir, jobs: Optional[int] = None, seed_offset: int = 0,
                  data_dir=None) -> RunRecord:
    """fetch -> encode -> split -> normalize -> grid search -> factuals -> generate -> score.

    Every generator sees the same model, split and factual set. Each factual
    is explained twice per generator (seeds s and s+1) for the stability
    metric. Records are streamed to ``<out_dir>/records.jsonl``.
    """
    out_dir = Path(out_dir)
    (out_dir / "models").mkdir(parents=True, exist_ok=True)
    jobs = jobs or cfg.jobs or 1
    seeds = {k: v + seed_offset for k, v in cfg.seeds.items()}
    gens = [(g, make_generator(g.name, **g.params)) for g in cfg.generators]
    rec_path = out_dir / RECORDS_FILE
    t_start = time.perf_counter()
    header = {
        "type": "header", "version": __version__, "config_hash": cfg.config_hash,
        "config_name": cfg.name, "seed_offset": seed_offset, "seeds": seeds,
        "generators": [{"id": g.label, "name": g.name, "params": g.params,
                        "family": getattr(gen, "family", "?"), "clamp_range": g.clamp_range,
                        "project_ohe": g.project_ohe, "budget": g.budget} for g, gen in gens],
        "kernel_backend": kernels.BACKEND,
    }
    records = []
    summaries = []
    status = "complete"
    with open(rec_path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        try:
            for spec in cfg.datasets:
                summary, recs = _run_dataset(spec, cfg, gens, seeds, out_dir, jobs, data_dir)
                summaries.append(summary)
                fh.write(json.dumps(summary, sort_keys=True) + "\n")
                for r in recs:
                    fh.write(json.dumps(r, sort_keys=True) + "\n")
                fh.flush()
                records.extend(recs)
        except BenchmarkError as exc:
            status = "partial" if records else "failed"
            fh.write(json.dumps({"type": "error", "stage": exc.stage, "dataset": exc.dataset,
                                 "message": str(exc)}, sort_keys=True) + "\n")
            fh.write(json.dumps({"type": "footer", "status": status,
                                 "elapsed": time.perf_counter() - t_start}) + "\n")
            exc.partial = bool(records)
            raise
        fh.write(json.dumps({"type": "footer", "status": status, "n_records": len(records),
                             "elapsed": time.perf_counter() - t_start}, sort_keys=True) + "\n")
    header["datasets"] = summaries
    return RunRecord(rec_path, header, records, status)


def _stage(stage, name, fn, *args, **kw):
    try:
        return fn(*args, **kw)
    except BenchmarkError:
        raise
    except Exception as exc:  # tag any failure with its pipeline stage
        raise BenchmarkError(stage, name, f"{type(exc).__name__}: {exc}", partial=False) from exc


def _run_dataset(spec: DatasetSpec, cfg: RunConfig, gens, seeds, out_dir: Path, jobs: int, data_dir):
    schema = _stage("schema", str(spec.schema_path), load_schema, spec.schema_path)
    name = schema.name
    data = spec.data
    if data is None or not data.exists():
        data = _stage("fetch", name, fetch_dataset, spec.url, spec.sha256, data_dir)
    ds = _stage("encode", name, load_and_encode, data, schema)
    ds = _stage("split", name, with_split, ds, seeds["split"])
    ds = _stage("normalize", name, normalize, ds, cfg.normalization)
    cs = _stage("constraints", name, dataset_constraints, ds)
    bad_rows = audit_rows(ds.X_raw, cs, name)

    grid = {**cfg.model_grid, **spec.model_grid}
    cands = candidate_grid(ds.width, grid.get("neurons"), tuple(grid.get("learning_rates", LEARNING_RATES)),
                           tuple(grid.get("epochs", EPOCHS)), int(grid.get("batch_size", 32)))
    gs = _stage("train", name, grid_search, ds, seeds["model"], cands, jobs)
    model = gs.model
    model_path = out_dir / "models" / f"{name}.json"
    save_model(model, model_path)
    factuals = _stage("factuals", name, select_factuals, ds, model,
                      cfg.factuals_per_class, seeds["factuals"])

    class_share = {c: float(np.mean(ds.y == c)) for c in (0, 1)}
    n_train = int(ds.split.train.size)
    contexts = [{
        "neurons": model.n_hidden, "auc_test": model.eval["auc_test"], "rows_train": n_train,
        "columns_numerical": schema.n_numeric, "columns_categorical": schema.n_categorical,
        "misclassified": int(f.misclassified), "factual_prediction": f.pred_score,
        "factual_share": class_share[f.y],
    } for f in factuals]
    summary = {
        "type": "dataset", "dataset": name, "dataset_type": schema.dataset_type,
        "n_rows": ds.n_rows, "width": ds.width, "n_numeric": schema.n_numeric,
        "n_categorical": schema.n_categorical, "split_sizes": [int(ds.split.train.size),
                                                               int(ds.split.valid.size),
                                                               int(ds.split.test.size)],
        "model": {"n_hidden": gs.selected.n_hidden, "learning_rate": gs.selected.learning_rate,
                  "epochs": gs.selected.epochs, "eval": model.eval,
                  "n_candidates": len(cands)},
        "model_sha256": sha256_file(model_path),
        "factual_sha256": _hash_json([[f.row, _vec(f.x)] for f in factuals]),
        "n_factuals": len(factuals), "data_quality_violations": len(bad_rows),
    }
    s = seeds["generator"]

    def explain(i):
        f = factuals[i]
        out = []
        for g, gen in gens:
            frozen = None
            if g.frozen:
                frozen = np.zeros(ds.width, dtype=bool)
                for col in g.frozen:
                    frozen[list(ds.encoding[col].indices)] = True
            runs = [gen.generate(build_request(ds, model, f, g.budget, seed, g.clamp_range,
                                               g.project_ohe, frozen, factual_id=i))
                    for seed in (s, s + 1)]
            for run, (r, other) in enumerate(((runs[0], runs[1]), (runs[1], runs[0]))):
                mv = score_record(r, other, model, ds, cs, x=f.x)
                if bool(mv.coverage) != r.valid:
                    raise BenchmarkError("score", name, f"generator {g.label} validity flag disagrees "
                                         f"with re-validation on factual {i}", partial=False)
                out.append({
                    "type": "record", "dataset": name, "dataset_type": schema.dataset_type,
                    "generator": g.label, "family": getattr(gen, "family", "?"),
                    "factual": i, "row": f.row, "y": f.y, "pred_class": f.pred_class,
                    "run": run, "seed": r.seed, "valid": r.valid,
                    "counterfactual": _vec(r.counterfactual), "iterations": int(r.iterations),
                    "diagnostic": r.diagnostic, "ct": r.seconds, "metrics": mv.to_dict(),
                    "context": contexts[i],
                })
        return out

    def guarded(i):
        return _stage("generate", name, explain, i)

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            chunks = list(pool.map(guarded, range(len(factuals))))
    else:
        chunks = [guarded(i) for i in range(len(factuals))]
    recs = [r for chunk in chunks for r in chunk]
    # order: generator, factual, run - independent of completion order
    order = {g.label: j for j, (g, _) in enumerate(gens)}
    recs.sort(key=lambda r: (order[r["generator"]], r["factual"], r["run"]))
    return summary, recs


def read_records(path) -> tuple[dict, list, list]:
    """(header, dataset summaries, record lines) from a JSON-lines run file."""
    path = Path(path)
    if path.is_dir():
        path = path / RECORDS_FILE
    header, summaries, records = {}, [], []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            obj = json.loads(line)
            kind = obj.get("type")
            if kind == "header":
                header = obj
            elif kind == "dataset":
                summaries.append(obj)
            elif kind == "record":
                records.append(obj)
    return header, summaries, records


def mask_timing(obj):
    """Copy of a record structure with wall-clock fields removed."""
    if isinstance(obj, dict):
        return {k: mask_timing(v) for k, v in obj.items() if k not in MASKED_KEYS}
    if isinstance(obj, list):
        return [mask_timing(v) for v in obj]
    return obj


def masked_lines(path) -> list[str]:
    with open(path, encoding="utf-8") as fh:
        return [json.dumps(mask_timing(json.loads(ln)), sort_keys=True) for ln in fh if ln.strip()]


def first_runs(records) -> list:
    return [r for r in records if r["run"] == 0]


def rank_run(out_dir, modes=VALIDITY_MODES, per_dataset: bool = False) -> dict:
    """Rank tables from a run directory; writes ranks.csv and ranks.md next to the records."""
    out_dir = Path(out_dir)
    _, _, records = read_records(out_dir)
    tables = grouping_tables(first_runs(records), modes=modes, per_dataset=per_dataset)
    _write_csv(out_dir / "ranks.csv", tables_to_csv_rows(tables))
    (out_dir / "ranks.md").write_text(
        "# Mean ranks (* = statistically best set, Friedman + Nemenyi, alpha 0.05)\n\n"
        + format_tables(tables) + "\n")
    return tables


def fit_trees(records, modes=VALIDITY_MODES, family: bool = False, max_depth: int = 3) -> dict:
    """Decision tree per (mode, metric) where at least one row is available."""
    trees = {}
    for mode in modes:
        for metric in DIRECTIONS:
            rows = build_rows(first_runs(records), metric, mode, family=family)
            if rows:
                trees[(mode, metric)] = fit_tree(rows, max_depth)
    return trees


def save_trees(trees: dict, path) -> None:
    doc = {f"{mode}/{metric}": t.to_dict() for (mode, metric), t in trees.items()}
    Path(path).write_text(json.dumps(doc, indent=1, sort_keys=True))


def load_trees(path) -> dict:
    doc = json.loads(Path(path).read_text())
    return {tuple(k.split("/", 1)): DecisionTree.from_dict(v) for k, v in doc.items()}


def _write_csv(path, rows, fieldnames=None):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        if not rows:
            return
        w = csv.DictWriter(fh, fieldnames=fieldnames or list(rows[0]))
        w.writeheader()
        w.writerows(rows)


def report(out_dir) -> dict:
    """Summary tables (coverage, realistic coverage, stability, time vs columns) as CSV + markdown."""
    out_dir = Path(out_dir)
    _, summaries, records = read_records(out_dir)
    width = {s["dataset"]: s["width"] for s in summaries}
    gens = sorted({r["generator"] for r in records})
    types = sorted({r["dataset_type"] for r in records})

    cov_rows, stab_rows, time_rows = [], [], []
    for g in gens:
        for t in types + ["all"]:
            sel = [r for r in records if r["generator"] == g and (t == "all" or r["dataset_type"] == t)]
            if not sel:
                continue
            cov = float(np.mean([r["metrics"]["coverage"] for r in sel]))
            real = float(np.mean([r["metrics"]["realistic"] for r in sel]))
            cov_rows.append({"generator": g, "dataset_type": t, "n": len(sel),
                             "coverage": cov, "realistic_coverage": real})
        per_type = {}
        for t in types:
            st = [r["metrics"]["stability"] for r in records
                  if r["generator"] == g and r["dataset_type"] == t and r["run"] == 0
                  and r["metrics"]["stability"] is not None]
            if st:
                per_type[t] = float(np.mean(st))
        all_st = [r["metrics"]["stability"] for r in records if r["generator"] == g
                  and r["run"] == 0 and r["metrics"]["stability"] is not None]
        stab_rows.append({"generator": g,
                          "mean_stability": float(np.mean(all_st)) if all_st else "",
                          "min_across_types": min(per_type.values()) if per_type else "",
                          "max_across_types": max(per_type.values()) if per_type else ""})
        for (t, w) in sorted({(r["dataset_type"], width.get(r["dataset"])) for r in records}):
            ct = [r["ct"] for r in records if r["generator"] == g and r["dataset_type"] == t
                  and width.get(r["dataset"]) == w]
            if ct:
                time_rows.append({"generator": g, "dataset_type": t, "columns": w,
                                  "mean_ct": float(np.mean(ct)), "std_ct": float(np.std(ct))})
    _write_csv(out_dir / "coverage.csv", cov_rows)
    _write_csv(out_dir / "stability.csv", stab_rows)
    _write_csv(out_dir / "time.csv", time_rows)
    tables = rank_run(out_dir)

    md = io.StringIO()
    md.write("# Benchmark report\n\n## Coverage and realistic coverage\n\n")
    md.write("| generator | type | n | coverage | realistic |\n|---|---|---|---|---|\n")
    for r in cov_rows:
        md.write(f"| {r['generator']} | {r['dataset_type']} | {r['n']} | {r['coverage']:.3f} | "
                 f"{r['realistic_coverage']:.3f} |\n")
    md.write("\n## Stability\n\n| generator | mean | min over types | max over types |\n|---|---|---|---|\n")
    for r in stab_rows:
        md.write(f"| {r['generator']} | {r['mean_stability']} | {r['min_across_types']} | "
                 f"{r['max_across_types']} |\n")
    md.write("\n## Generation time by column count\n\n| generator | type | columns | mean s | std s |\n"
             "|---|---|---|---|---|\n")
    for r in time_rows:
        md.write(f"| {r['generator']} | {r['dataset_type']} | {r['columns']} | {r['mean_ct']:.4g} | "
                 f"{r['std_ct']:.4g} |\n")
    md.write("\n## Rankings\n\n" + format_tables(tables))
    md.write("\nTimes depend on the hardware; compare them ordinally only.\n")
    (out_dir / "report.md").write_text(md.getvalue())
    return {"coverage": cov_rows, "stability": stab_rows, "time": time_rows, "ranks": tables}


def fetch_manifest(path, data_dir=None) -> list[Path]:
    """Fetch every ``[[dataset]]`` (name, url, sha256) of a manifest or run config."""
    path = resolve(path)
    doc = _read_doc(path)
    out = []
    for entry in doc.get("dataset", []):
        url, sha = entry.get("url"), entry.get("sha256")
        if not url and "schema" in entry:
            schema = load_schema(resolve(entry["schema"], path.parent))
            url, sha = schema.url, schema.sha256
        if not url:
            continue
        if not sha:
            raise ConfigError(f"{entry.get('name', url)}: sha256 missing")
        name = entry.get("filename") or (entry["name"] + ".csv" if "name" in entry else None)
        out.append(fetch_dataset(url, sha, data_dir, filename=name))
    return out
