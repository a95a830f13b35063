"""Permutation importance with a uniform-noise control feature."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from joblib import Parallel, delayed
from scipy import stats

from .. import seeds
from ..records.features import CONTROL

MIN_REPEATS = 2


@dataclass(frozen=True)
class FeatureImportance:
    name: str
    mean: float
    ci_low: float
    ci_high: float
    drops: tuple


@dataclass
class ImportanceReport:
    features: list
    baseline_accuracy: float
    n_repeats: int
    retrained: bool
    control: str = CONTROL
    meta: dict = field(default_factory=dict)

    def get(self, name: str) -> FeatureImportance:
        for f in self.features:
            if f.name == name:
                return f
        raise KeyError(name)

    def ranked(self) -> list:
        return sorted(self.features, key=lambda f: (-f.mean, f.name))


def mean_ci(values, level: float = 0.95) -> tuple[float, float, float]:
    """Mean and Student-t confidence interval."""
    v = np.asarray(values, dtype=np.float64)
    m = float(v.mean())
    sd = float(v.std(ddof=1))
    if sd == 0.0:
        return m, m, m
    half = float(stats.t.ppf(0.5 + level / 2, len(v) - 1)) * sd / np.sqrt(len(v))
    return m, m - half, m + half


def _accuracy(model, X, y, threshold) -> float:
    return float(np.mean((model.predict_proba(X) >= threshold) == y))


def _drops_for_feature(j, model, X, y, base, n_repeats, seed, threshold, retrain):
    out = []
    for r in range(n_repeats):
        rng = seeds.rng(seed, "importance", j, r)
        Xp = X.copy()
        Xp[:, j] = X[rng.permutation(len(X)), j]
        if retrain is None:
            out.append(base - _accuracy(model, Xp, y, threshold))
        else:
            X_tr, y_tr, fit = retrain
            Xt = X_tr.copy()
            Xt[:, j] = X_tr[rng.permutation(len(X_tr)), j]
            out.append(base - _accuracy(fit(Xt, y_tr), Xp, y, threshold))
    return out


def permutation_importance(
    model,
    X,
    y,
    n_repeats: int = 10,
    seed: int = 0,
    threshold: float = 0.5,
    feature_names: Optional[Sequence[str]] = None,
    retrain_data=None,
    n_jobs: int = 1,
) -> ImportanceReport:
    """Accuracy drop when each column of held-out ``X`` is permuted.

    By default the fitted ``model`` is re-scored without retraining. Passing
    ``retrain_data=(X_train, y_train, fit)`` switches to the retraining mode:
    for each repeat the column is permuted in the training data too and
    ``fit(X_train_permuted, y_train)`` supplies the model that is scored.
    """
    if n_repeats < MIN_REPEATS:
        raise ValueError(f"n_repeats must be >= {MIN_REPEATS}")
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y).astype(bool)
    names = list(feature_names) if feature_names is not None else list(getattr(model, "feature_names", []))
    if len(names) != X.shape[1]:
        raise ValueError("feature_names must name every column")
    if CONTROL not in names:
        raise ValueError(f"the {CONTROL} noise column must be present in the evaluation matrix")
    if retrain_data is not None:
        X_tr, y_tr, fit = retrain_data
        retrain_data = (np.asarray(X_tr, dtype=np.float64), np.asarray(y_tr, dtype=np.float64), fit)
    base = _accuracy(model, X, y, threshold)
    drops = Parallel(n_jobs=n_jobs, prefer="threads")(
        delayed(_drops_for_feature)(j, model, X, y, base, n_repeats, seed, threshold, retrain_data)
        for j in range(X.shape[1])
    )
    feats = []
    for name, d in zip(names, drops):
        m, lo, hi = mean_ci(d)
        feats.append(FeatureImportance(name, m, lo, hi, tuple(float(v) for v in d)))
    return ImportanceReport(
        features=feats, baseline_accuracy=base, n_repeats=n_repeats, retrained=retrain_data is not None
    )
