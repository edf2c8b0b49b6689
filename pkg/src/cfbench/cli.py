"""Command-line entry point: fetch, validate, run, rank, recommend, report."""
from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from . import __version__, kernels
from .pipeline import (BenchmarkError, ConfigError, fetch_manifest, fit_trees, load_config,
                       load_trees, rank_run, read_records, report, run_benchmark, save_trees,
                       validate_config)
from .recommender import FEATURES, recommend

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME, EXIT_PARTIAL = 0, 1, 2, 3
TREES_FILE = "trees.json"


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", help="run config (TOML/JSON path or builtin:<name>)")
    p.add_argument("--data-dir", default=os.environ.get("CFBENCH_DATA_DIR"),
                   help="download cache (env CFBENCH_DATA_DIR)")
    p.add_argument("--out", help="run output directory")
    p.add_argument("--jobs", type=int, default=int(os.environ.get("CFBENCH_JOBS", "0")) or None,
                   help="parallel workers (env CFBENCH_JOBS)")
    p.add_argument("--seed-offset", type=int, default=0, help="added to every configured seed")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = argparse.ArgumentParser(prog="cfbench", description=__doc__)
    parser.add_argument("--version", action="version",
                        version=f"cfbench {__version__} (kernels: {kernels.BACKEND})")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fetch", parents=[common], help="download datasets listed in a config/manifest")
    p.add_argument("--manifest", help="manifest with [[dataset]] name/url/sha256 (defaults to --config)")
    sub.add_parser("validate", parents=[common], help="check a run config")
    sub.add_parser("run", parents=[common], help="run the benchmark")
    p = sub.add_parser("rank", parents=[common], help="rank tables from a run")
    p.add_argument("--per-dataset", action="store_true", help="also rank each dataset separately")
    p = sub.add_parser("recommend", parents=[common], help="score generators for a setting")
    p.add_argument("--metric", default=None, help="metric (default: all)")
    p.add_argument("--mode", default="valid", choices=("valid", "realistic"))
    p.add_argument("--family", action="store_true", help="recommend search families (CO/HE/SS)")
    for f in FEATURES:
        p.add_argument("--" + f.replace("_", "-"), dest=f, type=float, required=True)
    sub.add_parser("report", parents=[common], help="coverage/stability/time tables and rankings")
    return parser


def _out_dir(args, cfg=None) -> Path:
    if args.out:
        return Path(args.out)
    if cfg is not None and cfg.output:
        return Path(cfg.output)
    raise ConfigError("no output directory (--out)")


def cmd_fetch(args) -> int:
    src = args.manifest or args.config
    if not src:
        raise ConfigError("fetch needs --manifest or --config")
    for p in fetch_manifest(src, args.data_dir):
        print(p)
    return EXIT_OK


def cmd_validate(args) -> int:
    if not args.config:
        raise ConfigError("--config is required")
    errors = validate_config(args.config)
    if errors:
        for e in errors:
            print(f"error: {e}", file=sys.stderr)
        return EXIT_INVALID
    print("ok")
    return EXIT_OK


def cmd_run(args) -> int:
    if not args.config:
        raise ConfigError("--config is required")
    cfg = load_config(args.config)
    out = _out_dir(args, cfg)
    rec = run_benchmark(cfg, out, jobs=args.jobs, seed_offset=args.seed_offset, data_dir=args.data_dir)
    print(f"{len(rec.records)} records -> {rec.path}")
    return EXIT_OK


def cmd_rank(args) -> int:
    out = _out_dir(args)
    rank_run(out, per_dataset=args.per_dataset)
    _, _, records = read_records(out)
    trees = fit_trees(records)
    save_trees(trees, out / TREES_FILE)
    print((out / "ranks.md").read_text())
    return EXIT_OK


def cmd_recommend(args) -> int:
    out = _out_dir(args)
    tree_file = out / (TREES_FILE if not args.family else "trees_family.json")
    if tree_file.exists():
        trees = load_trees(tree_file)
    else:
        _, _, records = read_records(out)
        trees = fit_trees(records, family=args.family)
        save_trees(trees, tree_file)
    trees = {metric: t for (mode, metric), t in trees.items()
             if mode == args.mode and (args.metric is None or metric == args.metric)}
    if not trees:
        print("no decision trees for this selection", file=sys.stderr)
        return EXIT_RUNTIME
    query = {f: getattr(args, f) for f in FEATURES}
    for metric, scores in sorted(recommend(trees, query).items()):
        print(f"{metric}:")
        for alg, s in scores:
            print(f"  {alg:<20} {s:.3f}")
    return EXIT_OK


def cmd_report(args) -> int:
    out = _out_dir(args)
    report(out)
    print((out / "report.md").read_text())
    return EXIT_OK


COMMANDS = {"fetch": cmd_fetch, "validate": cmd_validate, "run": cmd_run, "rank": cmd_rank,
            "recommend": cmd_recommend, "report": cmd_report}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        for e in exc.errors:
            print(f"error: {e}", file=sys.stderr)
        return EXIT_INVALID
    except BenchmarkError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARTIAL if exc.partial else EXIT_RUNTIME
    except (OSError, RuntimeError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
