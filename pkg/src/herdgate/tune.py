"""Random hyperparameter search with repeated random hold-out validation.

Each configuration is trained on ``n_splits`` independent 80/20 (by default)
train/test partitions and scored on the held-out part. The best configuration
by mean metric is retrained on the training side of the canonical split
(split 0).
"""
from __future__ import annotations

import dataclasses
import json
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
from joblib import Parallel, delayed

from . import seeds
from .evalx.reports import write_csv
from .evalx.roc import auc_score
from .hgbt import Hyperparameters, train

METRICS = ("accuracy", "auc")
_TIE_TOL = 1e-12


class SearchError(RuntimeError):
    pass


@dataclass(frozen=True)
class SearchSpec:
    n_configs: int = 100
    learning_rate_range: tuple = (0.01, 1.0)
    max_leaf_nodes_range: tuple = (2, 2000)
    n_splits: int = 10
    test_fraction: float = 0.2
    seed: int = 0
    metric: str = "accuracy"
    threshold: float = 0.5
    disjoint_folds: bool = False
    n_iterations: int = 100
    l2_regularization: float = 0.0
    min_samples_leaf: int = 20
    max_bins: int = 255

    def __post_init__(self):
        object.__setattr__(self, "learning_rate_range", tuple(float(v) for v in self.learning_rate_range))
        object.__setattr__(self, "max_leaf_nodes_range", tuple(int(v) for v in self.max_leaf_nodes_range))
        if self.n_configs < 1 or self.n_splits < 1:
            raise ValueError("n_configs and n_splits must be >= 1")
        if not 0 < self.test_fraction < 1:
            raise ValueError("test_fraction must lie in (0, 1)")
        if self.metric not in METRICS:
            raise ValueError(f"metric must be one of {METRICS}")
        lo, hi = self.learning_rate_range
        if not 0.01 <= lo <= hi <= 1.0:
            raise ValueError("learning_rate_range must satisfy 0.01 <= lo <= hi <= 1")
        lo, hi = self.max_leaf_nodes_range
        if not 2 <= lo <= hi <= 2000:
            raise ValueError("max_leaf_nodes_range must satisfy 2 <= lo <= hi <= 2000")
        if self.disjoint_folds and self.n_splits < 2:
            raise ValueError("disjoint folds need n_splits >= 2")

    @classmethod
    def from_dict(cls, d: dict) -> "SearchSpec":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown SearchSpec fields: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_json(cls, path) -> "SearchSpec":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["learning_rate_range"] = list(self.learning_rate_range)
        d["max_leaf_nodes_range"] = list(self.max_leaf_nodes_range)
        return d

    def hyperparameters(self, learning_rate: float, max_leaf_nodes: int) -> Hyperparameters:
        return Hyperparameters(
            learning_rate=learning_rate,
            max_leaf_nodes=max_leaf_nodes,
            n_iterations=self.n_iterations,
            l2_regularization=self.l2_regularization,
            min_samples_leaf=self.min_samples_leaf,
            max_bins=self.max_bins,
        )


def split_holdout(n: int, test_fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Random train/test index split with ``round(test_fraction * n)`` test rows."""
    if n < 2:
        raise ValueError("need at least 2 rows to split")
    n_test = int(round(test_fraction * n))
    if n_test < 1 or n_test >= n:
        raise ValueError(f"test_fraction={test_fraction} leaves an empty side for n={n}")
    perm = np.random.default_rng(seed).permutation(n)
    return np.sort(perm[n_test:]), np.sort(perm[:n_test])


def make_splits(n: int, spec: SearchSpec) -> list:
    if spec.disjoint_folds:
        if spec.n_splits > n:
            raise ValueError("more folds than rows")
        perm = seeds.rng(spec.seed, "tune", "folds").permutation(n)
        folds = np.array_split(perm, spec.n_splits)
        out = []
        for k in range(spec.n_splits):
            test = np.sort(folds[k])
            train_idx = np.sort(np.concatenate([folds[i] for i in range(spec.n_splits) if i != k]))
            out.append((train_idx, test))
        return out
    return [split_holdout(n, spec.test_fraction, seeds.derive(spec.seed, "tune", "split", s)) for s in range(spec.n_splits)]


def canonical_split(n: int, spec: SearchSpec) -> tuple[np.ndarray, np.ndarray]:
    return split_holdout(n, spec.test_fraction, seeds.derive(spec.seed, "tune", "split", 0))


def sample_configs(spec: SearchSpec) -> list:
    """(learning_rate, max_leaf_nodes) pairs: log-uniform and uniform integer."""
    rng = seeds.rng(spec.seed, "tune", "configs")
    lo, hi = np.log(spec.learning_rate_range[0]), np.log(spec.learning_rate_range[1])
    out = []
    for _ in range(spec.n_configs):
        lr = float(np.exp(rng.uniform(lo, hi))) if hi > lo else spec.learning_rate_range[0]
        lr = min(max(lr, spec.learning_rate_range[0]), spec.learning_rate_range[1])
        leaves = int(rng.integers(spec.max_leaf_nodes_range[0], spec.max_leaf_nodes_range[1] + 1))
        out.append((lr, leaves))
    return out


def evaluate(model, X, y, metric: str, threshold: float = 0.5) -> float:
    p = model.predict_proba(X)
    if metric == "auc":
        return auc_score(p, y)
    return float(np.mean((p >= threshold) == (np.asarray(y) == 1)))


def _run_job(X, y, tr, te, hp, spec, categorical, c, s):
    assert np.intersect1d(tr, te).size == 0, "train/test leakage"
    t0 = time.perf_counter()
    try:
        model = train(X[tr], y[tr], hp, seed=spec.seed, categorical=categorical)
    except Exception as exc:  # noqa: BLE001 - re-raised with the failing config named
        raise SearchError(
            f"config {c} (learning_rate={hp.learning_rate!r}, max_leaf_nodes={hp.max_leaf_nodes}) "
            f"split {s} failed: {exc}"
        ) from exc
    return c, s, evaluate(model, X[te], y[te], spec.metric, spec.threshold), time.perf_counter() - t0


@dataclass
class SearchResult:
    spec: SearchSpec
    configs: list  # (learning_rate, max_leaf_nodes)
    metrics: np.ndarray  # shape (n_configs, n_splits)
    best_index: int
    model: object
    train_index: np.ndarray
    test_index: np.ndarray
    canonical_test_metric: float
    wall_time: Optional[np.ndarray] = None  # seconds per (config, split); not part of any report file

    @property
    def mean(self) -> np.ndarray:
        return self.metrics.mean(axis=1)

    @property
    def std(self) -> np.ndarray:
        ddof = 1 if self.metrics.shape[1] > 1 else 0
        return self.metrics.std(axis=1, ddof=ddof)

    @property
    def best_config(self) -> tuple:
        return self.configs[self.best_index]

    @property
    def best_hyperparameters(self) -> Hyperparameters:
        return self.spec.hyperparameters(*self.best_config)


def select_best(configs, means) -> int:
    """Highest mean; ties go to fewer leaves, then the lower learning rate."""
    means = np.asarray(means, dtype=np.float64)
    top = means.max()
    tied = [i for i in range(len(configs)) if means[i] >= top - _TIE_TOL * max(1.0, abs(top))]
    return min(tied, key=lambda i: (configs[i][1], configs[i][0], i))


def random_search(X, y, spec: SearchSpec, categorical=None, feature_names=None, n_jobs: int = 1) -> SearchResult:
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    configs = sample_configs(spec)
    splits = make_splits(len(y), spec)
    jobs = [
        (c, s, tr, te, spec.hyperparameters(*configs[c]))
        for c in range(len(configs))
        for s, (tr, te) in enumerate(splits)
    ]
    results = Parallel(n_jobs=n_jobs)(
        delayed(_run_job)(X, y, tr, te, hp, spec, categorical, c, s) for c, s, tr, te, hp in jobs
    )
    metrics = np.full((len(configs), len(splits)), np.nan)
    wall = np.zeros_like(metrics)
    for c, s, v, t in results:
        metrics[c, s] = v
        wall[c, s] = t
    best = select_best(configs, metrics.mean(axis=1))
    tr, te = canonical_split(len(y), spec)
    model = train(X[tr], y[tr], spec.hyperparameters(*configs[best]), seed=spec.seed,
                  categorical=categorical, feature_names=feature_names)
    return SearchResult(
        spec=spec,
        configs=configs,
        metrics=metrics,
        best_index=best,
        model=model,
        train_index=tr,
        test_index=te,
        canonical_test_metric=evaluate(model, X[te], y[te], spec.metric, spec.threshold),
        wall_time=wall,
    )


def write_search_log(result: SearchResult, path) -> None:
    """One row per (config, split). Timing lives in the run manifest so this
    file is identical across reruns."""
    rows = []
    for c, (lr, leaves) in enumerate(result.configs):
        for s in range(result.metrics.shape[1]):
            rows.append((c, s, lr, leaves, result.spec.metric, result.metrics[c, s]))
    write_csv(path, ["config", "split", "learning_rate", "max_leaf_nodes", "metric", "value"], rows)


def write_config_summary(result: SearchResult, path) -> None:
    rows = [
        (c, lr, leaves, result.mean[c], result.std[c], int(c == result.best_index))
        for c, (lr, leaves) in enumerate(result.configs)
    ]
    write_csv(path, ["config", "learning_rate", "max_leaf_nodes", "mean", "std", "best"], rows)


def summary(result: SearchResult) -> dict:
    lr, leaves = result.best_config
    return {
        "metric": result.spec.metric,
        "best_config": result.best_index,
        "best_learning_rate": lr,
        "best_max_leaf_nodes": leaves,
        "best_mean": float(result.mean[result.best_index]),
        "best_std": float(result.std[result.best_index]),
        "canonical_test_metric": result.canonical_test_metric,
        "n_train": int(len(result.train_index)),
        "n_test": int(len(result.test_index)),
        "n_trainings": int(result.metrics.size),
    }
