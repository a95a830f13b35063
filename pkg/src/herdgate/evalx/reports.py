"""CSV and JSON report writers. Floats are written with ``repr`` so reruns
produce identical bytes."""
from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np


def _cell(v):
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, np.integer):
        return str(int(v))
    return str(v)


def write_csv(path, header, rows) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_cell(v) for v in row])


def jsonable(obj):
    """Recursively convert numpy scalars/arrays; non-finite floats become strings."""
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        f = float(obj)
        return f if math.isfinite(f) else repr(f)
    return obj


def dumps_json(obj) -> str:
    return json.dumps(jsonable(obj), sort_keys=True, indent=2) + "\n"


def write_json(path, obj) -> None:
    Path(path).write_text(dumps_json(obj), encoding="utf-8")


def write_roc(analysis, path) -> None:
    rows = zip(analysis.thresholds, analysis.sensitivity, analysis.specificity, analysis.tp, analysis.fp)
    write_csv(path, ["threshold", "sensitivity", "specificity", "true_pos", "false_pos"], rows)


def write_roc_curve(analysis, path) -> None:
    """Plot-ready two-column curve, false-positive rate against true-positive rate."""
    write_csv(path, ["fpr", "tpr"], zip(1.0 - analysis.specificity, analysis.sensitivity))


def write_importance(report, path) -> None:
    rows = [(f.name, f.mean, f.ci_low, f.ci_high) for f in report.ranked()]
    write_csv(path, ["feature", "mean_accuracy_drop", "ci_low", "ci_high"], rows)


def write_importance_bars(report, path) -> None:
    write_csv(path, ["feature", "importance"], [(f.name, f.mean) for f in report.ranked()])


def write_practices(report, path) -> None:
    header = [
        "practice", "n_tests", "mean_herd_size", "sicct_accuracy", "sicct_p",
        "model_accuracy", "model_p", "delta",
    ]
    rows = [
        (r.practice, r.n_tests, r.mean_herd_size, r.sicct_accuracy, r.sicct_p, r.model_accuracy, r.model_p, r.delta)
        for r in report.rows
    ]
    write_csv(path, header, rows)


def write_yearly(rates, path) -> None:
    write_csv(path, ["year", "n", "false_pos", "false_neg", "rate"],
              [(r.year, r.n, r.false_pos, r.false_neg, r.rate) for r in rates])


def confusion_dict(cm) -> dict:
    return {
        "true_pos": cm.true_pos,
        "false_pos": cm.false_pos,
        "true_neg": cm.true_neg,
        "false_neg": cm.false_neg,
        "sensitivity": cm.sensitivity,
        "specificity": cm.specificity,
        "accuracy": cm.accuracy,
    }
