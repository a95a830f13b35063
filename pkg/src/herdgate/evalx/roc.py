"""ROC analysis, operating-point selection and confusion matrices.

Classification convention throughout: a score ``s`` is called positive at
threshold ``t`` iff ``s >= t``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class RocAnalysis:
    """Operating points at every distinct score plus the two infinities.

    ``thresholds`` is ascending: ``-inf, s_1 < ... < s_k, +inf``. At
    ``thresholds[i]`` there are ``tp[i]`` true and ``fp[i]`` false positives.
    """

    thresholds: np.ndarray
    tp: np.ndarray
    fp: np.ndarray
    n_pos: int
    n_neg: int
    auc: float

    @property
    def sensitivity(self) -> np.ndarray:
        return self.tp / self.n_pos

    @property
    def specificity(self) -> np.ndarray:
        return (self.n_neg - self.fp) / self.n_neg

    def __len__(self) -> int:
        return len(self.thresholds)


@dataclass(frozen=True)
class OperatingPoint:
    threshold: float
    sensitivity: float
    specificity: float


def _check_labels(labels) -> np.ndarray:
    y = np.asarray(labels)
    if y.dtype != bool:
        if not np.all((y == 0) | (y == 1)):
            raise ValueError("labels must be binary")
        y = y.astype(bool)
    return y


def roc(scores, labels) -> RocAnalysis:
    s = np.asarray(scores, dtype=np.float64)
    y = _check_labels(labels)
    if s.shape != y.shape or s.ndim != 1:
        raise ValueError("scores and labels must be 1-D of equal length")
    if not np.all(np.isfinite(s)):
        raise ValueError("scores must be finite")
    n_pos = int(y.sum())
    n_neg = int(len(y) - n_pos)
    if n_pos == 0 or n_neg == 0:
        raise ValueError("ROC needs both classes present")

    uniq, inv = np.unique(s, return_inverse=True)
    pos = np.bincount(inv, weights=y, minlength=len(uniq)).astype(np.int64)
    neg = np.bincount(inv, minlength=len(uniq)).astype(np.int64) - pos
    # counts at or above each distinct score
    pos_ge = np.cumsum(pos[::-1])[::-1]
    neg_ge = np.cumsum(neg[::-1])[::-1]
    tp = np.concatenate(([n_pos], pos_ge, [0]))
    fp = np.concatenate(([n_neg], neg_ge, [0]))
    thresholds = np.concatenate(([-np.inf], uniq, [np.inf]))

    # trapezoids in integer units: each negative group pairs with the
    # positives strictly above it (full credit) and in its own group (half)
    pos_above = pos_ge - pos
    area2 = int(np.sum(neg * (2 * pos_above + pos)))
    auc = area2 / (2.0 * n_pos * n_neg)
    return RocAnalysis(thresholds=thresholds, tp=tp, fp=fp, n_pos=n_pos, n_neg=n_neg, auc=auc)


def auc_score(scores, labels) -> float:
    return roc(scores, labels).auc


def threshold_for_specificity(analysis: RocAnalysis, target: float) -> OperatingPoint:
    """Lowest threshold whose specificity reaches ``target``.

    Sensitivity falls as the threshold rises, so this is the feasible point
    with maximal sensitivity (and the lowest threshold among equal ones).
    """
    if not 0.0 <= target <= 1.0:
        raise ValueError(f"target specificity {target} is unattainable")
    spec = analysis.specificity
    ok = np.flatnonzero(spec >= target)
    i = int(ok[0])
    return OperatingPoint(float(analysis.thresholds[i]), float(analysis.sensitivity[i]), float(spec[i]))


def threshold_for_sensitivity(analysis: RocAnalysis, target: float) -> OperatingPoint:
    """Highest threshold whose sensitivity reaches ``target``.

    This maximises specificity subject to the target; among thresholds with
    equal specificity the highest one is returned.
    """
    if not 0.0 <= target <= 1.0:
        raise ValueError(f"target sensitivity {target} is unattainable")
    sens = analysis.sensitivity
    ok = np.flatnonzero(sens >= target)
    i = int(ok[-1])
    return OperatingPoint(float(analysis.thresholds[i]), float(sens[i]), float(analysis.specificity[i]))


@dataclass(frozen=True)
class ConfusionMatrix:
    true_pos: int
    false_pos: int
    true_neg: int
    false_neg: int

    @property
    def n(self) -> int:
        return self.true_pos + self.false_pos + self.true_neg + self.false_neg

    @property
    def sensitivity(self) -> float:
        d = self.true_pos + self.false_neg
        return self.true_pos / d if d else float("nan")

    @property
    def specificity(self) -> float:
        d = self.true_neg + self.false_pos
        return self.true_neg / d if d else float("nan")

    @property
    def accuracy(self) -> float:
        return (self.true_pos + self.true_neg) / self.n if self.n else float("nan")

    def proportions(self) -> dict:
        n = self.n
        return {
            "true_pos": self.true_pos / n,
            "false_pos": self.false_pos / n,
            "true_neg": self.true_neg / n,
            "false_neg": self.false_neg / n,
        }


def confusion(scores, labels, threshold: float) -> ConfusionMatrix:
    s = np.asarray(scores, dtype=np.float64)
    y = _check_labels(labels)
    pred = s >= threshold
    return ConfusionMatrix(
        true_pos=int(np.sum(pred & y)),
        false_pos=int(np.sum(pred & ~y)),
        true_neg=int(np.sum(~pred & ~y)),
        false_neg=int(np.sum(~pred & y)),
    )


def accuracy(scores, labels, threshold: float = 0.5) -> float:
    y = _check_labels(labels)
    return float(np.mean((np.asarray(scores) >= threshold) == y))
