"""CSV reading and writing for test records and breakdown events.

Dataset files are UTF-8 CSV with a header naming every :class:`TestRecord`
field in declaration order. An optional first line ``# herdgate.testrecord/1``
pins the schema version; files carrying a different version are rejected.
Empty cells mean missing, booleans are ``0``/``1`` and dates ISO-8601.
"""
from __future__ import annotations

import csv
import datetime as dt
import io
from pathlib import Path
from typing import Iterable

from .schema import (
    FIELD_NAMES,
    OPTIONAL_FIELDS,
    SCHEMA_VERSION,
    BreakdownEvent,
    RecordError,
    TestRecord,
    field_kind,
)

BREAKDOWN_COLUMNS = ("herd_id", "start_date", "confirmed", "confirmation_date")


def _parse_cell(name: str, text: str):
    if text == "":
        if name in OPTIONAL_FIELDS:
            return None
        raise ValueError("empty cell in required field")
    kind = field_kind(name)
    if kind == "str":
        return text
    if kind == "date":
        return dt.date.fromisoformat(text)
    if kind == "int":
        return int(text)
    if kind == "float":
        value = float(text)
        if value != value or value in (float("inf"), float("-inf")):
            raise ValueError("non-finite value")
        return value
    if kind == "bool":
        if text not in ("0", "1"):
            raise ValueError(f"boolean must be 0/1, got {text!r}")
        return text == "1"
    if text not in kind:
        raise ValueError(f"{text!r} not one of {kind}")
    return text


def _format_cell(name: str, value) -> str:
    if value is None:
        return ""
    kind = field_kind(name)
    if kind == "bool":
        return "1" if value else "0"
    if kind == "date":
        return value.isoformat()
    if kind == "float":
        return repr(float(value))
    return str(value)


def _read_header(lines: list[str], path) -> tuple[list[str], int]:
    start = 0
    if lines and lines[0].startswith("#"):
        version = lines[0][1:].strip()
        if version != SCHEMA_VERSION:
            raise RecordError(f"{path}: schema version {version!r}, expected {SCHEMA_VERSION!r}")
        start = 1
    if start >= len(lines):
        raise RecordError(f"{path}: missing header row")
    return lines, start


def parse_dataset(text: str, source: str = "<string>") -> list[TestRecord]:
    lines = text.splitlines()
    lines, start = _read_header(lines, source)
    reader = csv.reader(lines[start:])
    header = next(reader)
    if tuple(header) != FIELD_NAMES:
        missing = sorted(set(FIELD_NAMES) - set(header))
        extra = sorted(set(header) - set(FIELD_NAMES))
        raise RecordError(
            f"{source}: header does not match schema {SCHEMA_VERSION} "
            f"(missing={missing}, unexpected={extra})"
        )
    records = []
    for offset, row in enumerate(reader):
        line_no = start + 2 + offset
        if len(row) != len(FIELD_NAMES):
            raise RecordError(f"{source}: row {line_no}: expected {len(FIELD_NAMES)} cells, got {len(row)}")
        values = {}
        for name, cell in zip(FIELD_NAMES, row):
            try:
                values[name] = _parse_cell(name, cell)
            except ValueError as exc:
                raise RecordError(f"{source}: row {line_no}, field {name}: {exc}") from None
        try:
            records.append(TestRecord(**values))
        except RecordError as exc:
            raise RecordError(f"{source}: row {line_no}: {exc}") from None
    return records


def load_dataset(path) -> list[TestRecord]:
    path = Path(path)
    return parse_dataset(path.read_text(encoding="utf-8"), str(path))


def format_dataset(records: Iterable[TestRecord]) -> str:
    buf = io.StringIO()
    buf.write(f"# {SCHEMA_VERSION}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(FIELD_NAMES)
    for rec in records:
        writer.writerow([_format_cell(n, getattr(rec, n)) for n in FIELD_NAMES])
    return buf.getvalue()


def save_dataset(records: Iterable[TestRecord], path) -> None:
    Path(path).write_text(format_dataset(records), encoding="utf-8")


def load_breakdowns(path) -> list[BreakdownEvent]:
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header) != BREAKDOWN_COLUMNS:
            raise RecordError(f"{path}: expected header {','.join(BREAKDOWN_COLUMNS)}")
        events = []
        for line_no, row in enumerate(reader, start=2):
            try:
                herd, start, confirmed, confirmation = row
                if confirmed not in ("0", "1"):
                    raise ValueError(f"confirmed must be 0/1, got {confirmed!r}")
                events.append(
                    BreakdownEvent(
                        herd_id=herd,
                        start_date=dt.date.fromisoformat(start),
                        confirmed=confirmed == "1",
                        confirmation_date=dt.date.fromisoformat(confirmation) if confirmation else None,
                    )
                )
            except (ValueError, RecordError) as exc:
                raise RecordError(f"{path}: row {line_no}: {exc}") from None
    return events


def save_breakdowns(events: Iterable[BreakdownEvent], path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(BREAKDOWN_COLUMNS)
        for ev in events:
            writer.writerow(
                [
                    ev.herd_id,
                    ev.start_date.isoformat(),
                    "1" if ev.confirmed else "0",
                    ev.confirmation_date.isoformat() if ev.confirmation_date else "",
                ]
            )
