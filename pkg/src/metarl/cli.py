"""Command-line entry point.

    python -m metarl run <config.yaml>
    python -m metarl report <records-glob> --baseline <method> [--out DIR]
    python -m metarl surface <algorithm.json> --out <csv>
"""

from __future__ import annotations

import argparse
import glob
import json
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .config import ConfigError, load_config
from .evalreport import (
    METHODS,
    CostLog,
    ReportError,
    aggregate,
    cost_accounting,
    drift_surface,
    normalize_returns,
    read_records,
    write_report,
    write_surface_csv,
)
from .learnedalgos import DriftFunction, load_algorithm

R_GRID = np.linspace(0.5, 2.0, 151)
A_GRID = np.linspace(-3.0, 3.0, 61)


def _err(msg: str) -> int:
    print(f"error: {msg}", file=sys.stderr)
    return 2


def cmd_run(args) -> int:
    from .pipeline import StageError, run_stage

    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        return _err(str(exc))
    try:
        out = run_stage(cfg)
    except StageError as exc:
        return _err(str(exc))
    print(out)
    return 0


def _surface_for(path: Path, out_csv: Path) -> bool:
    algo = load_algorithm(path)
    if not isinstance(algo, DriftFunction):
        return False
    write_surface_csv(out_csv, drift_surface(algo, R_GRID, A_GRID))
    return True


def cmd_report(args) -> int:
    paths = sorted(glob.glob(args.records, recursive=True))
    if not paths:
        return _err(f"no record files match {args.records!r}")
    records, logs, drift_files = [], [], []
    try:
        for p in paths:
            p = Path(p)
            records.extend(read_records(p, p.parent / "timings.csv"))
            manifest = p.parent / "manifest.json"
            if manifest.exists():
                m = json.loads(manifest.read_text())
                logs.append(CostLog(m.get("method"), m.get("meta_env_steps"),
                                    m.get("train_wall_time"), m.get("test_wall_time")))
            algo = p.parent / "algorithm.json"
            if algo.exists():
                drift_files.append(algo)
        normalized, excluded = normalize_returns(records, args.baseline)
        costs = cost_accounting(logs)
        rows = aggregate(normalized, n_boot=args.n_boot, rng=args.seed, costs=costs)
    except (ReportError, ValueError, KeyError) as exc:
        return _err(str(exc))
    out = Path(args.out)
    write_report(out, rows, excluded)
    for f in drift_files:
        _surface_for(f, out / f"surface_{f.parent.name}.csv")
    for e in excluded:
        print(f"warning: environment {e} excluded (baseline mean return is not positive)", file=sys.stderr)
    for r in rows:
        print(f"{r.method:22s} {r.dist_tag:8s} IQM {r.iqm:.4f}  CI [{r.ci_lo:.4f}, {r.ci_hi:.4f}]  n={r.n_runs}")
    return 0


def cmd_surface(args) -> int:
    path = Path(args.artifact)
    if not path.is_file():
        return _err(f"artifact not found: {path}")
    try:
        ok = _surface_for(path, Path(args.out))
    except (ValueError, KeyError) as exc:
        return _err(f"{path}: {exc}")
    if not ok:
        return _err(f"{path} holds an update rule, not a drift function")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="metarl", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="execute one configured pipeline stage")
    run.add_argument("config")
    run.set_defaults(func=cmd_run)
    rep = sub.add_parser("report", help="aggregate run records into IQM tables")
    rep.add_argument("records", help="glob of records.csv files")
    rep.add_argument("--baseline", required=True, choices=METHODS)
    rep.add_argument("--out", default="report")
    rep.add_argument("--n-boot", type=int, default=2000)
    rep.add_argument("--seed", type=int, default=0)
    rep.set_defaults(func=cmd_report)
    srf = sub.add_parser("surface", help="export a drift function's values and r-derivative")
    srf.add_argument("artifact")
    srf.add_argument("--out", required=True)
    srf.set_defaults(func=cmd_surface)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    if args.verbose:
        logging.basicConfig(level=logging.INFO, format="%(asctime)s %(name)s: %(message)s")
    return args.func(args)
