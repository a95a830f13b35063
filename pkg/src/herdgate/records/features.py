"""Conversion of test records into a numeric feature matrix.

Numeric fields become float columns with NaN for missing. Categorical fields
are encoded by a stable 32-bit hash of the category string, so the encoding is
a pure function of the value and needs no fitted vocabulary; the tree binner
maps unseen codes to its overflow bin.

A ``CONTROL`` column of uniform noise is appended by default. Its value is a
hash of ``test_id``: independent of every risk factor yet reproducible.
"""
from __future__ import annotations

import datetime as dt
import hashlib
from functools import lru_cache
from typing import Sequence

import numpy as np

from .schema import MOVE_KINDS, MOVE_WINDOWS, TestRecord

CONTROL = "CONTROL"
_EPOCH = dt.date(1970, 1, 1)

CATEGORICAL_FEATURES = (
    "prev_result_1",
    "prev_result_2",
    "test_type",
    "herd_type",
    "vet_practice",
    "tuberculin_batch_bovine",
    "tuberculin_batch_avian",
)
NUMERIC_FEATURES = (
    "sicct_herd_result",
    "test_date",
    "month",
    "severe_interpretation",
    "n_animals_tested",
    "easting",
    "northing",
    "days_since_last_test",
    "days_since_last_breakdown",
    "n_prior_ifn_gamma_tests",
    *(f"{k}_{w}" for k in MOVE_KINDS for w in MOVE_WINDOWS),
    "apha_risk_score",
    "badger_abundance",
)
FEATURE_NAMES = NUMERIC_FEATURES + CATEGORICAL_FEATURES


@lru_cache(maxsize=65536)
def category_code(value: str) -> float:
    digest = hashlib.blake2b(value.encode("utf-8"), digest_size=4).digest()
    return float(int.from_bytes(digest, "little"))


def control_value(test_id: str) -> float:
    digest = hashlib.blake2b(test_id.encode("utf-8"), digest_size=8, person=b"control").digest()
    return int.from_bytes(digest, "little") / 2.0**64


def _numeric(rec: TestRecord, name: str) -> float:
    value = getattr(rec, name)
    if value is None:
        return np.nan
    if name == "sicct_herd_result":
        return 1.0 if value == "not_clear" else 0.0
    if name == "test_date":
        return float((value - _EPOCH).days)
    return float(value)


def feature_names(include_control: bool = True) -> list[str]:
    return list(FEATURE_NAMES) + ([CONTROL] if include_control else [])


def categorical_mask(names: Sequence[str]) -> np.ndarray:
    return np.array([n in CATEGORICAL_FEATURES for n in names], dtype=bool)


def feature_matrix(records: Sequence[TestRecord], include_control: bool = True) -> tuple[np.ndarray, list[str]]:
    names = feature_names(include_control)
    X = np.empty((len(records), len(names)), dtype=np.float64)
    n_num = len(NUMERIC_FEATURES)
    for i, rec in enumerate(records):
        row = X[i]
        for j, name in enumerate(NUMERIC_FEATURES):
            row[j] = _numeric(rec, name)
        for j, name in enumerate(CATEGORICAL_FEATURES, start=n_num):
            value = getattr(rec, name)
            row[j] = np.nan if value is None else category_code(value)
        if include_control:
            row[-1] = control_value(rec.test_id)
    return X, names


def label_array(records: Sequence[TestRecord]) -> np.ndarray:
    return np.fromiter((r.label_confirmed_breakdown for r in records), dtype=np.int8, count=len(records))


def sicct_positive(records: Sequence[TestRecord]) -> np.ndarray:
    return np.fromiter((r.sicct_herd_result == "not_clear" for r in records), dtype=bool, count=len(records))


def years(records: Sequence[TestRecord]) -> np.ndarray:
    return np.fromiter((r.test_date.year for r in records), dtype=np.int32, count=len(records))
