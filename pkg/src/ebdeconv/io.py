"""CSV ingest and export.

Row numbers in error messages count the header as row 1, so the first data
row is row 2.
"""

from __future__ import annotations

import csv
import hashlib
import math
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .panel import PanelDataset

__all__ = [
    "SchemaError",
    "Observations",
    "ingest_observations",
    "ingest_panel",
    "write_csv",
    "file_digest",
]

OBS_OPTIONAL = ("sd", "trials", "shape")


class SchemaError(ValueError):
    """Malformed input file; ``row`` is the 1-based line number (header = 1)."""

    def __init__(self, message: str, row: int | None = None):
        self.row = row
        super().__init__(f"row {row}: {message}" if row is not None else message)


class Observations(dict):
    """Column name -> float array; always has ``value``."""


def _read_rows(path):
    path = Path(path)
    if not path.is_file():
        raise SchemaError(f"no such file: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError("empty file", 1) from None
        header = [h.strip().lstrip("﻿") for h in header]
        rows = [(i, r) for i, r in enumerate(reader, start=2) if any(c.strip() for c in r)]
    return header, rows


def _number(cell: str, row: int, column: str) -> float:
    try:
        x = float(cell)
    except ValueError:
        raise SchemaError(f"non-numeric {column!r} cell {cell!r}", row) from None
    if not math.isfinite(x):
        raise SchemaError(f"non-finite {column!r} cell {cell!r}", row)
    return x


def ingest_observations(path) -> Observations:
    """Read a CSV with column ``value`` and optional ``sd``, ``trials``, ``shape``."""
    header, rows = _read_rows(path)
    if "value" not in header:
        raise SchemaError(f"missing column 'value' (found {header})", 1)
    unknown = set(header) - {"value", *OBS_OPTIONAL}
    if unknown:
        raise SchemaError(f"unknown columns {sorted(unknown)}", 1)
    if not rows:
        raise SchemaError("no observations")
    cols = {h: [] for h in header}
    for row, cells in rows:
        if len(cells) != len(header):
            raise SchemaError(f"expected {len(header)} cells, found {len(cells)}", row)
        for h, c in zip(header, cells):
            cols[h].append(_number(c, row, h))
    return Observations({h: np.asarray(v) for h, v in cols.items()})


def ingest_panel(path) -> PanelDataset:
    """Read ``unit_id,period,value`` rows into a panel.

    Units keep their order of first appearance; within a unit rows are
    sorted by period and periods are re-indexed 1..m.  Duplicate
    (unit_id, period) pairs are rejected.
    """
    header, rows = _read_rows(path)
    need = ["unit_id", "period", "value"]
    if sorted(header) != sorted(need):
        raise SchemaError(f"expected columns {need}, found {header}", 1)
    idx = [header.index(c) for c in need]
    units: dict = {}
    seen: dict = {}
    for row, cells in rows:
        if len(cells) != len(header):
            raise SchemaError(f"expected {len(header)} cells, found {len(cells)}", row)
        uid, per, val = (cells[i].strip() for i in idx)
        if not uid:
            raise SchemaError("empty unit_id", row)
        period = _number(per, row, "period")
        if period != int(period):
            raise SchemaError(f"period {per!r} is not an integer", row)
        key = (uid, int(period))
        if key in seen:
            raise SchemaError(f"duplicate (unit_id, period) {key}; first seen at row {seen[key]}", row)
        seen[key] = row
        units.setdefault(uid, []).append((int(period), _number(val, row, "value")))
    if not units:
        raise SchemaError("no panel rows")
    ids, series = [], []
    for uid, obs in units.items():
        obs.sort()
        if len(obs) < 2:
            raise SchemaError(f"unit {uid!r} has fewer than 2 periods", seen[(uid, obs[0][0])])
        ids.append(_maybe_int(uid))
        series.append(np.array([v for _, v in obs]))
    return PanelDataset(tuple(ids), tuple(series))


def _maybe_int(s: str):
    try:
        return int(s)
    except ValueError:
        return s


def panel_rows(panel: PanelDataset) -> Iterable[tuple]:
    for uid, s in zip(panel.ids, panel.series):
        for t, v in enumerate(s, start=1):
            yield uid, t, v


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (float, np.floating)):
        return repr(float(x)) if math.isfinite(x) else ("nan" if x != x else ("inf" if x > 0 else "-inf"))
    return str(x)


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    """Write rows with shortest round-trip float formatting (deterministic)."""
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(x) for x in r])
    return path


def file_digest(path) -> str:
    h = hashlib.sha256()
    with Path(path).open("rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()
