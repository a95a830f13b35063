"""Boosted ensemble: training on binary log-loss, prediction and model files."""
from __future__ import annotations

import copy
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.special import expit

from .binning import BinMapper, FeatureBins, fit_bins
from .grower import HistogramBuilder, Tree, TreeGrower

MODEL_SCHEMA = "herdgate.hgbt/1"
_HESSIAN_FLOOR = 1e-16


class ModelFormatError(ValueError):
    pass


@dataclass(frozen=True)
class Hyperparameters:
    learning_rate: float = 0.1
    max_leaf_nodes: int = 31
    n_iterations: int = 100
    l2_regularization: float = 0.0
    min_samples_leaf: int = 20
    max_bins: int = 255

    def __post_init__(self):
        if not 0.01 <= self.learning_rate <= 1.0:
            raise ValueError(f"learning_rate {self.learning_rate} outside [0.01, 1.0]")
        if not 2 <= self.max_leaf_nodes <= 2000:
            raise ValueError(f"max_leaf_nodes {self.max_leaf_nodes} outside [2, 2000]")
        if self.n_iterations < 0:
            raise ValueError("n_iterations must be >= 0")
        if self.l2_regularization < 0:
            raise ValueError("l2_regularization must be >= 0")
        if self.min_samples_leaf < 1:
            raise ValueError("min_samples_leaf must be >= 1")
        if not 2 <= self.max_bins <= 255:
            raise ValueError("max_bins must lie in [2, 255]")


@dataclass
class Ensemble:
    mapper: BinMapper
    base_score: float
    learning_rate: float
    trees: list
    hyperparameters: Hyperparameters
    feature_names: list
    seed: int = 0
    train_loss: list = field(default_factory=list)

    @property
    def n_iterations(self) -> int:
        return len(self.trees)

    def raw_score(self, X) -> np.ndarray:
        binned = self.mapper.transform(X)
        total = np.zeros(binned.shape[0])
        for tree in self.trees:
            leaves = tree.leaf_index(binned, self.mapper.missing_bin)
            total += np.asarray(tree.value)[leaves]
        return self.base_score + self.learning_rate * total

    def predict_proba(self, X) -> np.ndarray:
        """Probability of a confirmed breakdown for each row of ``X``."""
        return expit(self.raw_score(X))

    def predict(self, X, threshold: float = 0.5) -> np.ndarray:
        return (self.predict_proba(X) >= threshold).astype(np.int8)

    def apply(self, X) -> np.ndarray:
        """Leaf index reached in every tree, shape (n_rows, n_trees)."""
        binned = self.mapper.transform(X)
        if not self.trees:
            return np.zeros((binned.shape[0], 0), dtype=np.int64)
        return np.column_stack([t.leaf_index(binned, self.mapper.missing_bin) for t in self.trees])


def log_loss(y: np.ndarray, raw: np.ndarray) -> float:
    # log(1 + e^raw) - y*raw, computed stably
    return float(np.mean(np.logaddexp(0.0, raw) - y * raw))


def train(
    X,
    y,
    hp: Hyperparameters = Hyperparameters(),
    seed: int = 0,
    categorical=None,
    feature_names: Optional[list] = None,
) -> Ensemble:
    """Fit a boosted ensemble of trees to binary labels ``y``.

    Training is deterministic: no row or feature subsampling is performed, so
    ``seed`` is only recorded in the model metadata.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] != y.shape[0]:
        raise ValueError("X must be 2-D with one row per label")
    if X.shape[0] < 2:
        raise ValueError("need at least 2 rows")
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("labels must be binary 0/1")
    prevalence = y.mean()
    if prevalence in (0.0, 1.0):
        raise ValueError("degenerate labels: only one class present")

    mapper = fit_bins(X, categorical=categorical, max_bins=hp.max_bins)
    binned = mapper.transform(X)
    n_value_bins = np.array([fb.n_value_bins for fb in mapper.features], dtype=np.int64)
    is_cat = np.array([fb.categorical for fb in mapper.features], dtype=bool)
    builder = HistogramBuilder(binned, mapper.max_bins + 1)

    base = float(np.log(prevalence / (1 - prevalence)))
    raw = np.full(len(y), base)
    losses = [log_loss(y, raw)]
    trees = []
    for _ in range(hp.n_iterations):
        p = expit(raw)
        g = p - y
        h = np.maximum(p * (1 - p), _HESSIAN_FLOOR)
        grower = TreeGrower(
            binned, builder, n_value_bins, is_cat, hp.max_leaf_nodes, hp.min_samples_leaf, hp.l2_regularization
        )
        tree = grower.grow(g, h)
        for leaf, rows in grower.leaf_rows.items():
            raw[rows] += hp.learning_rate * tree.value[leaf]
        trees.append(tree)
        losses.append(log_loss(y, raw))

    names = list(feature_names) if feature_names is not None else [f"x{j}" for j in range(X.shape[1])]
    return Ensemble(
        mapper=mapper,
        base_score=base,
        learning_rate=hp.learning_rate,
        trees=trees,
        hyperparameters=hp,
        feature_names=names,
        seed=seed,
        train_loss=losses,
    )


# ---------------------------------------------------------------- model files


def _mapper_to_dict(mapper: BinMapper) -> dict:
    feats = []
    for fb in mapper.features:
        if fb.categorical:
            cats = sorted(fb.categories.items())
            feats.append(
                {
                    "categorical": True,
                    "categories": [c for c, _ in cats],
                    "bins": [b for _, b in cats],
                    "overflow_bin": fb.overflow_bin,
                    "n_value_bins": fb.n_value_bins,
                }
            )
        else:
            feats.append({"categorical": False, "edges": [float(e) for e in fb.edges], "n_value_bins": fb.n_value_bins})
    return {"max_bins": mapper.max_bins, "features": feats, "warnings": list(mapper.warnings)}


def _mapper_from_dict(d: dict) -> BinMapper:
    feats = []
    for f in d["features"]:
        if f["categorical"]:
            feats.append(
                FeatureBins(
                    categorical=True,
                    categories={float(c): int(b) for c, b in zip(f["categories"], f["bins"])},
                    overflow_bin=int(f["overflow_bin"]),
                    n_value_bins=int(f["n_value_bins"]),
                )
            )
        else:
            feats.append(
                FeatureBins(
                    categorical=False, edges=np.array(f["edges"], dtype=np.float64), n_value_bins=int(f["n_value_bins"])
                )
            )
    return BinMapper(max_bins=int(d["max_bins"]), features=feats, warnings=list(d.get("warnings", [])))


_TREE_FIELDS = ("feature", "threshold_bin", "missing_left", "categorical", "left_bins", "left", "right", "value", "gain", "count")


def model_to_dict(model: Ensemble) -> dict:
    return {
        "schema": MODEL_SCHEMA,
        "base_score": model.base_score,
        "learning_rate": model.learning_rate,
        "hyperparameters": asdict(model.hyperparameters),
        "feature_names": list(model.feature_names),
        "seed": model.seed,
        "n_iterations": model.n_iterations,
        "train_loss": list(model.train_loss),
        "bin_mapper": _mapper_to_dict(model.mapper),
        "trees": [copy.deepcopy({k: getattr(t, k) for k in _TREE_FIELDS}) for t in model.trees],
    }


def model_from_dict(d: dict) -> Ensemble:
    if d.get("schema") != MODEL_SCHEMA:
        raise ModelFormatError(f"model schema {d.get('schema')!r} is not {MODEL_SCHEMA!r}")
    try:
        trees = []
        for td in d["trees"]:
            tree = Tree(**{k: list(td[k]) for k in _TREE_FIELDS})
            n = tree.n_nodes
            if any(len(getattr(tree, k)) != n for k in _TREE_FIELDS):
                raise ModelFormatError("tree arrays have inconsistent lengths")
            trees.append(tree)
        if len(trees) != d["n_iterations"]:
            raise ModelFormatError("tree count does not match n_iterations")
        return Ensemble(
            mapper=_mapper_from_dict(d["bin_mapper"]),
            base_score=float(d["base_score"]),
            learning_rate=float(d["learning_rate"]),
            trees=trees,
            hyperparameters=Hyperparameters(**d["hyperparameters"]),
            feature_names=list(d["feature_names"]),
            seed=int(d["seed"]),
            train_loss=[float(v) for v in d["train_loss"]],
        )
    except (KeyError, TypeError) as exc:
        raise ModelFormatError(f"malformed model file: {exc}") from None


def dumps_model(model: Ensemble) -> str:
    return json.dumps(model_to_dict(model), sort_keys=True, separators=(",", ":")) + "\n"


def save_model(model: Ensemble, path) -> None:
    Path(path).write_text(dumps_model(model), encoding="utf-8")


def load_model(path) -> Ensemble:
    text = Path(path).read_text(encoding="utf-8")
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"{path}: not a valid model file ({exc})") from None
    if not isinstance(data, dict):
        raise ModelFormatError(f"{path}: not a valid model file")
    return model_from_dict(data)
