"""CSV writing with a fixed column order and exact float text."""

from __future__ import annotations

import csv
import io
from dataclasses import astuple, fields


def cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return str(int(v))
    if isinstance(v, float):
        return repr(v)
    return str(v)


def rows_to_csv(rows, row_type) -> str:
    """Serialize dataclass rows; the header is the dataclass field order."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([f.name for f in fields(row_type)])
    for r in rows:
        w.writerow([cell(v) for v in astuple(r)])
    return buf.getvalue()


def columns(row_type) -> tuple[str, ...]:
    return tuple(f.name for f in fields(row_type))
