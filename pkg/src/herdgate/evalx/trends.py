"""Misclassification rates by calendar year."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..records.features import CONTROL, feature_matrix, label_array


@dataclass(frozen=True)
class YearRate:
    year: int
    n: int
    false_pos: int
    false_neg: int

    @property
    def rate(self) -> float:
        return (self.false_pos + self.false_neg) / self.n


def misclassification_by_year(years, labels, scores, threshold: float) -> list:
    years = np.asarray(years, dtype=np.int64)
    y = np.asarray(labels).astype(bool)
    pred = np.asarray(scores, dtype=np.float64) >= threshold
    out = []
    for yr in np.unique(years):
        m = years == yr
        out.append(
            YearRate(
                year=int(yr),
                n=int(m.sum()),
                false_pos=int(np.sum(pred[m] & ~y[m])),
                false_neg=int(np.sum(~pred[m] & y[m])),
            )
        )
    return out


def yearly_misclassification(records, model, threshold: float) -> list:
    """(FP + FN) / N per calendar year of ``test_date`` for ``model`` at ``threshold``."""
    X, names = feature_matrix(records, include_control=CONTROL in model.feature_names)
    if list(names) != list(model.feature_names):
        raise ValueError("records do not produce the model's feature columns")
    return misclassification_by_year(
        [r.test_date.year for r in records], label_array(records), model.predict_proba(X), threshold
    )
