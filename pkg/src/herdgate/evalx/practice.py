"""Veterinary-practice variability: per-practice accuracy, binomial range test
and the correlation of accuracy with mean tested herd size."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy import stats

P_CUTOFF = 0.05


@dataclass(frozen=True)
class PracticeRow:
    practice: str
    n_tests: int
    mean_herd_size: float
    sicct_correct: int
    sicct_accuracy: float
    sicct_p: float
    model_correct: Optional[int] = None
    model_accuracy: Optional[float] = None
    model_p: Optional[float] = None

    @property
    def delta(self) -> Optional[float]:
        if self.model_accuracy is None:
            return None
        return self.model_accuracy - self.sicct_accuracy


@dataclass
class PracticeReport:
    rows: list
    sicct_global_accuracy: float
    sicct_fraction_outside: float
    sicct_r: float
    sicct_r_p: float
    model_global_accuracy: Optional[float] = None
    model_fraction_outside: Optional[float] = None
    model_r: Optional[float] = None
    model_r_p: Optional[float] = None


def _binom_p(k: int, n: int, p: float) -> float:
    return float(stats.binomtest(int(k), int(n), p, alternative="two-sided").pvalue)


def _pearson(x, y) -> tuple[float, float]:
    if len(x) < 3 or np.ptp(x) == 0 or np.ptp(y) == 0:
        return float("nan"), float("nan")
    res = stats.pearsonr(x, y)
    return float(res.statistic), float(res.pvalue)


def practice_analysis_arrays(
    practice: Sequence[str],
    herd_size,
    sicct_correct,
    model_correct=None,
) -> PracticeReport:
    """Practice analysis on per-test arrays; tests without a practice are skipped
    (pass ``None`` in ``practice``)."""
    practice = np.asarray(practice, dtype=object)
    keep = np.array([p is not None for p in practice], dtype=bool)
    if not keep.any():
        raise ValueError("no test carries a veterinary practice")
    ids = practice[keep].astype(str)
    size = np.asarray(herd_size, dtype=np.float64)[keep]
    sc = np.asarray(sicct_correct, dtype=bool)[keep]
    mc = None if model_correct is None else np.asarray(model_correct, dtype=bool)[keep]

    names, inv = np.unique(ids, return_inverse=True)
    n = np.bincount(inv)
    mean_size = np.bincount(inv, weights=size) / n
    k_s = np.bincount(inv, weights=sc).astype(np.int64)
    p_s = float(sc.mean())
    k_m = None if mc is None else np.bincount(inv, weights=mc).astype(np.int64)
    p_m = None if mc is None else float(mc.mean())

    rows = []
    for i, name in enumerate(names):
        row = dict(
            practice=str(name),
            n_tests=int(n[i]),
            mean_herd_size=float(mean_size[i]),
            sicct_correct=int(k_s[i]),
            sicct_accuracy=float(k_s[i] / n[i]),
            sicct_p=_binom_p(k_s[i], n[i], p_s),
        )
        if mc is not None:
            row.update(
                model_correct=int(k_m[i]),
                model_accuracy=float(k_m[i] / n[i]),
                model_p=_binom_p(k_m[i], n[i], p_m),
            )
        rows.append(PracticeRow(**row))

    acc_s = k_s / n
    r_s, rp_s = _pearson(acc_s, mean_size)
    report = PracticeReport(
        rows=rows,
        sicct_global_accuracy=p_s,
        sicct_fraction_outside=float(np.mean([r.sicct_p < P_CUTOFF for r in rows])),
        sicct_r=r_s,
        sicct_r_p=rp_s,
    )
    if mc is not None:
        r_m, rp_m = _pearson(k_m / n, mean_size)
        report.model_global_accuracy = p_m
        report.model_fraction_outside = float(np.mean([r.model_p < P_CUTOFF for r in rows]))
        report.model_r = r_m
        report.model_r_p = rp_m
    return report


def practice_analysis(records, predictions=None) -> PracticeReport:
    """Per-practice accuracy of the SICCT result and, optionally, of binary
    model ``predictions`` (one per record) against the confirmed-breakdown label."""
    label = np.array([r.label_confirmed_breakdown for r in records], dtype=bool)
    sicct = np.array([r.sicct_herd_result == "not_clear" for r in records], dtype=bool)
    model_correct = None
    if predictions is not None:
        pred = np.asarray(predictions).astype(bool)
        if pred.shape != label.shape:
            raise ValueError("one prediction per record required")
        model_correct = pred == label
    return practice_analysis_arrays(
        [r.vet_practice for r in records],
        [r.n_animals_tested for r in records],
        sicct == label,
        model_correct,
    )
