"""Report writers: JSON (full), CSV (flat) and plain-text cell rasters."""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .checkers import CheckReport

__all__ = ["CSV_COLUMNS", "csv_rows", "write_csv", "write_json", "write_raster", "clean_json"]

CSV_COLUMNS = ["scenario", "condition", "K", "N", "t", "Nprime", "lhs", "rhs", "margin", "pass", "label", "tol"]


def _fmt(x) -> str:
    if isinstance(x, bool):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    if math.isnan(x):
        return ""
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return repr(x)


def csv_rows(scenario: str, reports: Iterable[CheckReport]) -> list[list[str]]:
    rows = []
    for r in reports:
        for p in r.points:
            rows.append([scenario, r.condition, _fmt(r.K), _fmt(r.N), _fmt(p.t), _fmt(p.Nprime), _fmt(p.lhs), _fmt(p.rhs), _fmt(p.margin), _fmt(p.passed), p.label, _fmt(p.tol)])
    return rows


def write_csv(path, rows: Sequence[Sequence[str]]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        w.writerows(rows)


def clean_json(obj):
    """Replace non-finite floats by ``None`` and numpy scalars by Python ones."""
    if isinstance(obj, dict):
        return {str(k): clean_json(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [clean_json(v) for v in obj]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return float(obj) if math.isfinite(obj) else None
    if isinstance(obj, np.ndarray):
        return clean_json(obj.tolist())
    return obj


def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(clean_json(obj), indent=2, allow_nan=False) + "\n")


def write_raster(path, centers: np.ndarray, values) -> None:
    """One row per cell: chart coordinates of the centre, then the value.

    One-dimensional charts get a ``y`` column of zeros so every raster has
    the ``x y value`` layout.
    """
    centers = np.atleast_2d(np.asarray(centers, dtype=float))
    values = np.broadcast_to(np.asarray(values, dtype=float), (len(centers),))
    if centers.shape[1] == 1:
        centers = np.column_stack([centers[:, 0], np.zeros(len(centers))])
    with open(path, "w") as fh:
        for c, v in zip(centers, values):
            fh.write(" ".join(repr(float(x)) for x in c) + " " + repr(float(v)) + "\n")
