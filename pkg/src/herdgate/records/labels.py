from __future__ import annotations

import bisect
import datetime as dt
from collections import defaultdict
from dataclasses import replace
from typing import Iterable

from .schema import BreakdownEvent, TestRecord

LABEL_WINDOW_DAYS = 90


def label_confirmed_breakdowns(
    records: Iterable[TestRecord],
    breakdowns: Iterable[BreakdownEvent],
    window_days: int = LABEL_WINDOW_DAYS,
) -> list[TestRecord]:
    """Set the gold-standard label on every record.

    A test is labelled positive iff a confirmed breakdown of the same herd
    starts on a day in the closed interval ``[test_date, test_date + window]``.
    Unconfirmed breakdowns never label a test.
    """
    starts: dict[str, list[dt.date]] = defaultdict(list)
    for ev in breakdowns:
        if ev.confirmed:
            starts[ev.herd_id].append(ev.start_date)
    for dates in starts.values():
        dates.sort()

    window = dt.timedelta(days=window_days)
    out = []
    for rec in records:
        dates = starts.get(rec.herd_id, ())
        i = bisect.bisect_left(dates, rec.test_date)
        label = i < len(dates) and dates[i] <= rec.test_date + window
        out.append(rec if rec.label_confirmed_breakdown == label else replace(rec, label_confirmed_breakdown=label))
    return out
