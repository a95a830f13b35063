"""Test-event and breakdown data model."""
from __future__ import annotations

import datetime as dt
from dataclasses import dataclass, fields
from typing import Optional

SCHEMA_VERSION = "herdgate.testrecord/1"

PREV_RESULTS = ("clear", "not_clear", "unknown")
HERD_RESULTS = ("clear", "not_clear")
TEST_TYPES = ("routine", "pre-movement", "short-interval", "other")
HERD_TYPES = ("dairy", "beef", "mixed", "other")
MOVE_WINDOWS = ("90d", "1y", "2y", "4y")
MOVE_KINDS = ("moves_in", "moves_out", "risky_moves_in", "risky_moves_out")


class RecordError(ValueError):
    """A record or file violates the dataset schema."""


@dataclass(frozen=True)
class TestRecord:
    """One SICCT herd-test event. ``None`` marks a missing optional field."""

    __test__ = False  # keep pytest from collecting this class

    test_id: str
    herd_id: str
    test_date: dt.date
    month: int
    severe_interpretation: bool
    n_animals_tested: int
    easting: Optional[float]
    northing: Optional[float]
    prev_result_1: str
    prev_result_2: str
    days_since_last_test: Optional[int]
    days_since_last_breakdown: Optional[int]
    n_prior_ifn_gamma_tests: int
    test_type: str
    herd_type: str
    moves_in_90d: int
    moves_in_1y: int
    moves_in_2y: int
    moves_in_4y: int
    moves_out_90d: int
    moves_out_1y: int
    moves_out_2y: int
    moves_out_4y: int
    risky_moves_in_90d: int
    risky_moves_in_1y: int
    risky_moves_in_2y: int
    risky_moves_in_4y: int
    risky_moves_out_90d: int
    risky_moves_out_1y: int
    risky_moves_out_2y: int
    risky_moves_out_4y: int
    apha_risk_score: Optional[int]
    badger_abundance: Optional[float]
    vet_practice: Optional[str]
    tuberculin_batch_bovine: Optional[str]
    tuberculin_batch_avian: Optional[str]
    sicct_herd_result: str
    label_confirmed_breakdown: bool

    def __post_init__(self):
        check_record(self)

    @property
    def year(self) -> int:
        return self.test_date.year


@dataclass(frozen=True)
class BreakdownEvent:
    herd_id: str
    start_date: dt.date
    confirmed: bool
    confirmation_date: Optional[dt.date] = None

    def __post_init__(self):
        if self.confirmed != (self.confirmation_date is not None):
            raise RecordError("confirmation_date must be present iff confirmed")
        if self.confirmation_date is not None and self.confirmation_date < self.start_date:
            raise RecordError("confirmation_date precedes start_date")


# Column kinds drive CSV parsing/formatting.
# kind: str | date | int | float | bool | enum:<choices>
_KINDS = {
    "test_id": "str",
    "herd_id": "str",
    "test_date": "date",
    "month": "int",
    "severe_interpretation": "bool",
    "n_animals_tested": "int",
    "easting": "float",
    "northing": "float",
    "prev_result_1": PREV_RESULTS,
    "prev_result_2": PREV_RESULTS,
    "days_since_last_test": "int",
    "days_since_last_breakdown": "int",
    "n_prior_ifn_gamma_tests": "int",
    "test_type": TEST_TYPES,
    "herd_type": HERD_TYPES,
    "apha_risk_score": "int",
    "badger_abundance": "float",
    "vet_practice": "str",
    "tuberculin_batch_bovine": "str",
    "tuberculin_batch_avian": "str",
    "sicct_herd_result": HERD_RESULTS,
    "label_confirmed_breakdown": "bool",
}
for _k in MOVE_KINDS:
    for _w in MOVE_WINDOWS:
        _KINDS[f"{_k}_{_w}"] = "int"

FIELD_NAMES = tuple(f.name for f in fields(TestRecord))
OPTIONAL_FIELDS = (
    "easting",
    "northing",
    "days_since_last_test",
    "days_since_last_breakdown",
    "apha_risk_score",
    "badger_abundance",
    "vet_practice",
    "tuberculin_batch_bovine",
    "tuberculin_batch_avian",
)
COUNT_FIELDS = tuple(
    name
    for name in FIELD_NAMES
    if _KINDS[name] == "int" and name not in ("month", "apha_risk_score")
)


def field_kind(name: str):
    return _KINDS[name]


def check_record(rec: TestRecord) -> None:
    for name in FIELD_NAMES:
        value = getattr(rec, name)
        if value is None:
            if name not in OPTIONAL_FIELDS:
                raise RecordError(f"{name}: required field is missing")
            continue
        kind = _KINDS[name]
        if isinstance(kind, tuple) and value not in kind:
            raise RecordError(f"{name}: {value!r} not in {kind}")
    if not 1 <= rec.month <= 12:
        raise RecordError(f"month: {rec.month} outside 1..12")
    for name in COUNT_FIELDS:
        value = getattr(rec, name)
        if value is not None and value < 0:
            raise RecordError(f"{name}: negative count {value}")
    for kind in MOVE_KINDS:
        counts = [getattr(rec, f"{kind}_{w}") for w in MOVE_WINDOWS]
        if any(a > b for a, b in zip(counts, counts[1:])):
            raise RecordError(f"{kind}: window counts not nested {counts}")
