"""Datasets, AUROC and the standard-vs-multiparty benchmark sweep."""
from __future__ import annotations

import csv
import json
import logging
import math
import os
from dataclasses import dataclass
from itertools import product

import numpy as np

from . import isoforest
from .detrng import RngStream, derive_seed, permutation
from .protocol import OutlierPolicy, RoundConfig, run_full_round

log = logging.getLogger(__name__)

DEFAULT_T_VALUES = (2.0, 10.0, 100.0, 1000.0)
DEFAULT_RUNS = 20
DEFAULT_CLIENTS = 3
BENCH_KEYSIZE = 1024
RESULT_HEADER = ("dataset", "algo", "mode", "T", "seed", "auroc")


class ParseError(ValueError):
    pass


class UndefinedMetric(ValueError):
    pass


@dataclass
class LabeledDataset:
    features: np.ndarray
    labels: np.ndarray
    name: str = "dataset"

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2 or len(self.labels) != len(self.features):
            raise ValueError("features must be N x D with one label per row")
        if not np.isin(self.labels, (0, 1)).all():
            raise ValueError("labels must be 0 or 1")

    def __len__(self):
        return len(self.labels)

    @property
    def dims(self) -> int:
        return self.features.shape[1]

    @property
    def n_outliers(self) -> int:
        return int(self.labels.sum())


def _parse_label(token: str, lineno: int) -> int:
    try:
        value = float(token)
    except ValueError:
        raise ParseError(f"line {lineno}: label {token!r} is not numeric") from None
    if value not in (0.0, 1.0):
        raise ParseError(f"line {lineno}: label {token!r} is not binary")
    return int(value)


def load_csv(path, name: str | None = None) -> LabeledDataset:
    """Read feature columns followed by one 0/1 label column.

    A first row containing any non-numeric field is treated as a header.
    """
    rows, labels = [], []
    width = None
    with open(path, newline="", encoding="utf-8") as fh:
        for lineno, record in enumerate(csv.reader(fh), 1):
            if not record or all(not tok.strip() for tok in record):
                continue
            if lineno == 1 and not _all_numeric(record):
                continue
            if width is None:
                width = len(record)
                if width < 2:
                    raise ParseError(f"line {lineno}: need at least one feature and a label")
            elif len(record) != width:
                raise ParseError(f"line {lineno}: expected {width} fields, got {len(record)}")
            try:
                rows.append([float(tok) for tok in record[:-1]])
            except ValueError:
                raise ParseError(f"line {lineno}: non-numeric feature value") from None
            labels.append(_parse_label(record[-1].strip(), lineno))
    if not rows:
        raise ParseError(f"{path}: no data rows")
    if name is None:
        name = os.path.splitext(os.path.basename(str(path)))[0]
    return LabeledDataset(np.array(rows), np.array(labels), name)


def _all_numeric(record) -> bool:
    try:
        for tok in record:
            float(tok)
    except ValueError:
        return False
    return True


def save_csv(ds: LabeledDataset, path, header: bool = True) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if header:
            w.writerow([f"x{j}" for j in range(ds.dims)] + ["label"])
        for x, y in zip(ds.features, ds.labels):
            w.writerow([repr(float(v)) for v in x] + [int(y)])


def synth(n_inliers: int, n_outliers: int, d: int, seed: int) -> LabeledDataset:
    """Standard-normal inliers, then outliers on the shell 6 <= |x| <= 10."""
    if n_inliers < 1 or n_outliers < 0 or d < 1:
        raise ValueError("need n_inliers >= 1, n_outliers >= 0 and d >= 1")
    stream = RngStream(seed)
    inliers = np.array(stream.gaussians(n_inliers * d)).reshape(n_inliers, d)
    outliers = np.empty((n_outliers, d))
    for k in range(n_outliers):
        direction = np.array(stream.gaussians(d))
        while not np.any(direction):
            direction = np.array(stream.gaussians(d))
        radius = 6.0 + 4.0 * stream.uniform01()
        outliers[k] = radius * direction / np.linalg.norm(direction)
    labels = np.r_[np.zeros(n_inliers, dtype=np.int64), np.ones(n_outliers, dtype=np.int64)]
    return LabeledDataset(np.vstack([inliers, outliers]), labels, f"synth-{seed}")


def auroc(scores, labels) -> float:
    """Mann-Whitney AUROC; ties between a positive and a negative count 1/2.

    Computed from midranks, which is exactly the pairwise average.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape:
        raise ValueError("scores and labels must have the same length")
    pos = labels == 1
    n_pos, n_neg = int(pos.sum()), int((~pos).sum())
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetric("AUROC needs at least one positive and one negative label")
    order = np.argsort(scores, kind="mergesort")
    ranks = np.empty(len(scores))
    sorted_scores = scores[order]
    i = 0
    while i < len(scores):
        j = i
        while j + 1 < len(scores) and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def partition_uniform(ds: LabeledDataset, m: int, seed: int) -> list[LabeledDataset]:
    """Shuffle rows by ``seed`` and deal them round-robin to ``m`` parts."""
    if m < 1:
        raise ValueError("need at least one part")
    order = np.array(permutation(len(ds), seed))
    return [LabeledDataset(ds.features[order[k::m]], ds.labels[order[k::m]], f"{ds.name}-part{k}")
            for k in range(m)]


# -- benchmark --------------------------------------------------------------

@dataclass(frozen=True)
class BenchResult:
    dataset: str
    algo: str
    mode: str
    t_param: float | None
    run_seed: int
    auroc: float

    def row(self):
        t = "" if self.t_param is None else f"{self.t_param:g}"
        return [self.dataset, self.algo, self.mode, t, self.run_seed, repr(self.auroc)]


@dataclass
class BenchConfig:
    datasets: list
    algos: tuple = ("if", "eif")
    modes: tuple = ("standard", "multiparty")
    t_values: tuple = DEFAULT_T_VALUES
    runs: int = DEFAULT_RUNS
    m: int = DEFAULT_CLIENTS
    t: int = isoforest.DEFAULT_TREES
    psi: int = isoforest.DEFAULT_PSI
    keysize: int = BENCH_KEYSIZE
    policy: OutlierPolicy = OutlierPolicy(contamination=0.1)
    seed: int = 0
    workers: int = 1

    def __post_init__(self):
        if self.runs < 1:
            raise ValueError("runs must be >= 1")
        if set(self.algos) - set(isoforest.ALGOS):
            raise ValueError(f"unknown algorithm in {self.algos}")
        if set(self.modes) - {"standard", "multiparty"}:
            raise ValueError(f"unknown mode in {self.modes}")
        if "multiparty" in self.modes and self.m < 2:
            raise ValueError("multiparty mode needs at least 2 clients (m >= 2)")


def run_seed(base_seed: int, run: int) -> int:
    return derive_seed(base_seed, "run", run)


def standard_scores(ds: LabeledDataset, algo: str, seed: int, t=isoforest.DEFAULT_TREES,
                    psi=isoforest.DEFAULT_PSI) -> np.ndarray:
    forest = isoforest.fit(ds.features, algo=algo, t=t, psi=psi, seed=seed)
    return isoforest.score_all(forest, ds.features)


def multiparty_scores(ds: LabeledDataset, algo: str, seed: int, t_param: float, m: int = DEFAULT_CLIENTS,
                      t=isoforest.DEFAULT_TREES, psi=isoforest.DEFAULT_PSI, keysize=BENCH_KEYSIZE,
                      policy: OutlierPolicy | None = None):
    """Run one protocol round; return (scores, labels) aligned to the pooled rows."""
    parts = partition_uniform(ds, m, derive_seed(seed, "partition"))
    result = run_full_round(RoundConfig(
        data=[p.features for p in parts], labels=[p.labels for p in parts],
        algo=algo, t=t, psi=psi, t_param=t_param, keysize=keysize,
        policy=policy or OutlierPolicy(contamination=0.1), seed=seed))
    labels = np.full(len(result.scores), -1, dtype=np.int64)
    for client, part in zip(result.clients, parts):
        labels[np.asarray(client.z_set, dtype=np.int64)] = part.labels
    assert (labels >= 0).all(), "index sets do not cover the pooled rows"
    return result.scores, labels


def _cells(config: BenchConfig):
    for ds, algo, mode in product(config.datasets, config.algos, config.modes):
        t_values = [None] if mode == "standard" else list(config.t_values)
        for t_param, run in product(t_values, range(config.runs)):
            yield ds, algo, mode, t_param, run_seed(config.seed, run)


def run_cell(ds: LabeledDataset, algo: str, mode: str, t_param, seed: int, config: BenchConfig) -> BenchResult:
    if mode == "standard":
        scores, labels = standard_scores(ds, algo, seed, config.t, config.psi), ds.labels
    else:
        scores, labels = multiparty_scores(ds, algo, seed, t_param, config.m, config.t, config.psi,
                                           config.keysize, config.policy)
    return BenchResult(ds.name, algo, mode, t_param, seed, auroc(scores, labels))


def _run_cell_safe(args):
    ds, algo, mode, t_param, seed, config = args
    try:
        return run_cell(ds, algo, mode, t_param, seed, config), None
    except Exception as exc:  # one bad cell must not sink the sweep
        return None, f"{ds.name}/{algo}/{mode}/T={t_param}/seed={seed}: {exc}"


def bench(config: BenchConfig):
    """Evaluate every (dataset, algo, mode, T, run) cell.

    Returns ``(results, errors)``, both in cell-enumeration order.
    """
    jobs = [(*cell, config) for cell in _cells(config)]
    if config.workers > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(config.workers) as pool:
            outcomes = list(pool.map(_run_cell_safe, jobs))
    else:
        outcomes = [_run_cell_safe(job) for job in jobs]
    results = [r for r, _ in outcomes if r is not None]
    errors = [e for _, e in outcomes if e is not None]
    for e in errors:
        log.error("bench cell failed: %s", e)
    return results, errors


def write_results_csv(results, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RESULT_HEADER)
        for r in results:
            w.writerow(r.row())


def summarize(results) -> list[dict]:
    """Boxplot statistics per (dataset, algo, mode, T) group."""
    groups: dict = {}
    for r in results:
        groups.setdefault((r.dataset, r.algo, r.mode, r.t_param), []).append(r.auroc)
    out = []
    for (dataset, algo, mode, t_param), values in groups.items():
        v = np.array(values)
        q1, median, q3 = np.quantile(v, [0.25, 0.5, 0.75])
        out.append({
            "dataset": dataset, "algo": algo, "mode": mode, "T": t_param,
            "runs": len(v), "mean": float(v.mean()),
            "std": float(v.std(ddof=1)) if len(v) > 1 else 0.0,
            "min": float(v.min()), "q1": float(q1), "median": float(median),
            "q3": float(q3), "max": float(v.max()),
        })
    return out


def write_summary_json(results, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(summarize(results), fh, indent=2)
        fh.write("\n")


def mean_auroc(results, **match) -> float:
    values = [r.auroc for r in results if all(getattr(r, k) == v for k, v in match.items())]
    if not values:
        return math.nan
    return float(np.mean(values))
