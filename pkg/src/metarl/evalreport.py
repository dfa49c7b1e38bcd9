"""Evaluation statistics: baseline normalisation, IQM, stratified bootstrap CIs,
cost accounting and drift-surface export."""

from __future__ import annotations

import csv
import json
from collections import defaultdict
from dataclasses import asdict, dataclass, replace
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .learnedalgos import DriftFunction, drift_eval
from .numcore import RngLike, as_generator

METHODS = (
    "blackbox_es",
    "distill_same",
    "distill_smaller",
    "distill_symbolic",
    "llm_proposal",
    "handcrafted_baseline",
)
DIST_TAGS = ("in_dist", "out_dist")
RECORD_FIELDS = ("method", "env_id", "dist_tag", "seed", "final_return", "env_steps")


class ReportError(ValueError):
    pass


@dataclass(frozen=True)
class RunRecord:
    method: str
    env_id: str
    dist_tag: str
    seed: int
    final_return: float
    env_steps: int
    wall_time: float = 0.0

    def __post_init__(self):
        if self.method not in METHODS:
            raise ReportError(f"unknown method {self.method!r}")
        if self.dist_tag not in DIST_TAGS:
            raise ReportError(f"unknown distribution tag {self.dist_tag!r}")


def write_records(path, records: Sequence[RunRecord], timings_path=None) -> None:
    """Records CSV without wall time (so reruns are byte-identical); timings go to a side file."""
    with Path(path).open("w", newline="") as f:
        w = csv.writer(f)
        w.writerow(RECORD_FIELDS)
        for r in records:
            w.writerow([r.method, r.env_id, r.dist_tag, r.seed, repr(float(r.final_return)), r.env_steps])
    if timings_path is not None:
        with Path(timings_path).open("w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["method", "env_id", "dist_tag", "seed", "wall_time"])
            for r in records:
                w.writerow([r.method, r.env_id, r.dist_tag, r.seed, repr(float(r.wall_time))])


def read_records(path, timings_path=None) -> list[RunRecord]:
    times = {}
    if timings_path is not None and Path(timings_path).exists():
        with Path(timings_path).open(newline="") as f:
            for row in csv.DictReader(f):
                key = (row["method"], row["env_id"], row["dist_tag"], int(row["seed"]))
                times[key] = float(row["wall_time"])
    out = []
    with Path(path).open(newline="") as f:
        reader = csv.DictReader(f)
        missing = set(RECORD_FIELDS) - set(reader.fieldnames or ())
        if missing:
            raise ReportError(f"{path}: missing columns {sorted(missing)}")
        for row in reader:
            key = (row["method"], row["env_id"], row["dist_tag"], int(row["seed"]))
            out.append(RunRecord(row["method"], row["env_id"], row["dist_tag"], int(row["seed"]),
                                 float(row["final_return"]), int(row["env_steps"]), times.get(key, 0.0)))
    return out


# --- statistics ---------------------------------------------------------------------------


def _iqm_weights(n: int) -> np.ndarray:
    """Weight of each order statistic in the 25%-trimmed mean (fractional at the boundaries)."""
    lo, hi = 0.25 * n, 0.75 * n
    idx = np.arange(n)
    overlap = np.clip(np.minimum(idx + 1, hi) - np.maximum(idx, lo), 0.0, 1.0)
    return overlap / (hi - lo)


def iqm(values) -> float:
    """Mean of the middle half; order statistics straddling the 25% cut points count fractionally."""
    x = np.sort(np.asarray(values, dtype=np.float64).ravel())
    if x.size == 0:
        raise ReportError("IQM of an empty sample")
    return float(_iqm_weights(x.size) @ x)


def stratified_bootstrap_ci(
    groups: Mapping[str, Sequence[float]],
    n_boot: int = 2000,
    confidence: float = 0.95,
    rng: RngLike = 0,
) -> tuple[float, float]:
    """Percentile CI of the pooled IQM, resampling seeds within each stratum."""
    if not groups:
        raise ReportError("no strata")
    g = as_generator(rng)
    parts = []
    for name in sorted(groups):
        vals = np.asarray(groups[name], dtype=np.float64)
        if vals.size < 2:
            raise ReportError(f"stratum {name!r} has fewer than 2 seeds")
        idx = g.integers(0, vals.size, size=(n_boot, vals.size))
        parts.append(vals[idx])
    pooled = np.sort(np.concatenate(parts, axis=1), axis=1)
    stats = pooled @ _iqm_weights(pooled.shape[1])
    alpha = (1.0 - confidence) / 2.0
    lo, hi = np.quantile(stats, [alpha, 1.0 - alpha])
    return float(lo), float(hi)


def normalize_returns(records: Sequence[RunRecord], baseline_method: str) -> tuple[list[RunRecord], list[str]]:
    """Divide each return by the baseline's mean return in the same environment.

    Environments whose baseline mean is not positive are dropped and listed.
    """
    base: dict[str, list[float]] = defaultdict(list)
    for r in records:
        if r.method == baseline_method:
            base[r.env_id].append(r.final_return)
    envs = sorted({r.env_id for r in records})
    missing = [e for e in envs if e not in base]
    if missing:
        raise ReportError(f"no {baseline_method} records for environments: {', '.join(missing)}")
    means = {e: float(np.mean(v)) for e, v in base.items()}
    excluded = sorted(e for e, m in means.items() if not m > 0)
    out = [replace(r, final_return=r.final_return / means[r.env_id])
           for r in records if r.env_id not in excluded]
    return out, excluded


@dataclass
class AggregateRow:
    method: str
    dist_tag: str
    iqm: float
    ci_lo: float
    ci_hi: float
    n_runs: int
    samples: int
    train_s: float
    test_s: float


def aggregate(
    normalized: Sequence[RunRecord],
    n_boot: int = 2000,
    confidence: float = 0.95,
    rng: RngLike = 0,
    costs: Optional[Mapping[str, "CostSummary"]] = None,
) -> list[AggregateRow]:
    """One row per (method, distribution tag); strata are environments."""
    cells: dict[tuple[str, str], dict[str, list[float]]] = defaultdict(lambda: defaultdict(list))
    for r in normalized:
        cells[(r.method, r.dist_tag)][r.env_id].append(r.final_return)
    rows = []
    base = as_generator(rng)
    seeds = {key: int(base.integers(2**62)) for key in sorted(cells)}
    for key in sorted(cells):
        groups = cells[key]
        pooled = [v for vals in groups.values() for v in vals]
        point = iqm(pooled)
        lo, hi = stratified_bootstrap_ci(groups, n_boot, confidence, seeds[key])
        cost = (costs or {}).get(key[0])
        rows.append(AggregateRow(
            key[0], key[1], point, min(lo, point), max(hi, point), len(pooled),
            cost.samples if cost else 0, cost.train_s if cost else 0.0, cost.test_s if cost else 0.0,
        ))
    return rows


# --- costs --------------------------------------------------------------------------------


@dataclass(frozen=True)
class CostLog:
    """Environment steps and wall time spent by one pipeline stage."""

    method: str
    meta_env_steps: Optional[int]
    train_wall_time: Optional[float]
    test_wall_time: Optional[float] = 0.0


@dataclass
class CostSummary:
    samples: int = 0
    train_s: float = 0.0
    test_s: float = 0.0


def cost_accounting(logs: Iterable[CostLog]) -> dict[str, CostSummary]:
    out: dict[str, CostSummary] = {}
    for log in logs:
        for name in ("meta_env_steps", "train_wall_time", "test_wall_time"):
            if getattr(log, name) is None:
                raise ReportError(f"{log.method}: missing counter {name}")
        s = out.setdefault(log.method, CostSummary())
        s.samples += int(log.meta_env_steps)
        s.train_s += float(log.train_wall_time)
        s.test_s += float(log.test_wall_time)
    return out


# --- drift surfaces ---------------------------------------------------------------------------


def drift_surface(d: DriftFunction, r_grid, A_grid, h: float = 1e-5) -> np.ndarray:
    """Rows ``(r, A, D, dD/dr)`` over the grid, derivative by central differences."""
    r_grid = np.asarray(r_grid, dtype=np.float64)
    A_grid = np.asarray(A_grid, dtype=np.float64)
    if not (np.all(np.isfinite(r_grid)) and np.all(np.isfinite(A_grid))):
        raise ReportError("grids must be finite")
    if np.any(r_grid <= h):
        raise ReportError("ratio grid must be positive")
    R, A = np.meshgrid(r_grid, A_grid, indexing="ij")
    r, a = R.ravel(), A.ravel()
    D = drift_eval(d, r, a)
    dD = (drift_eval(d, r + h, a) - drift_eval(d, r - h, a)) / (2 * h)
    return np.stack([r, a, D, dD], axis=1)


def write_surface_csv(path, table: np.ndarray) -> None:
    with Path(path).open("w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["r", "A", "drift", "d_drift_dr"])
        for row in table:
            w.writerow([repr(float(x)) for x in row])


def write_report(out_dir, rows: Sequence[AggregateRow], excluded: Sequence[str]) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with (out / "aggregate.csv").open("w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["method", "dist_tag", "iqm", "ci_lo", "ci_hi", "n_runs", "samples", "train_s", "test_s"])
        for r in rows:
            w.writerow([r.method, r.dist_tag, repr(r.iqm), repr(r.ci_lo), repr(r.ci_hi), r.n_runs,
                        r.samples, repr(r.train_s), repr(r.test_s)])
    summary = {"rows": [asdict(r) for r in rows], "excluded_envs": list(excluded)}
    (out / "report.json").write_text(json.dumps(summary, indent=2))
