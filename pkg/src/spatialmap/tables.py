"""Training-table CSV files: ``x, y, [t], predictors..., response``."""

from __future__ import annotations

import csv
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .geom import PointSet, PROJECTED
from .models import Dataset

COORD_COLUMNS = ("x", "y")
TIME_COLUMN = "t"


def _float(value: str, row: int, column: str) -> float:
    try:
        v = float(value)
    except ValueError:
        raise ValueError(f"row {row}: column {column!r} is not numeric ({value!r})") from None
    return v


def read_training(path, response: str = "response", crs_kind: str = PROJECTED,
                  ignore: Sequence[str] = ()) -> Tuple[Dataset, Dict[str, List[str]]]:
    """Parse a training CSV.

    Columns named in ``ignore`` are returned verbatim (as strings) in the
    second element instead of becoming predictors; use this for grouping
    labels. Non-finite predictor or response entries are rejected with their
    data row number (1-based, header excluded).
    """
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [r for r in reader if r]
    if len(set(header)) != len(header):
        dupes = sorted({h for h in header if header.count(h) > 1})
        raise ValueError(f"duplicate column names: {dupes}")
    for needed in COORD_COLUMNS:
        if needed not in header:
            raise ValueError(f"missing coordinate column {needed!r}")
    if response not in header:
        raise ValueError(f"missing response column {response!r}")
    for name in ignore:
        if name not in header:
            raise ValueError(f"missing column {name!r}")
    skip = set(COORD_COLUMNS) | {TIME_COLUMN, response} | set(ignore)
    predictors = [h for h in header if h not in skip]
    col = {h: j for j, h in enumerate(header)}

    coords, X, y, t = [], [], [], []
    extra: Dict[str, List[str]] = {name: [] for name in ignore}
    for i, r in enumerate(rows, start=1):
        if len(r) != len(header):
            raise ValueError(f"row {i}: expected {len(header)} fields, found {len(r)}")
        coords.append([_float(r[col[c]], i, c) for c in COORD_COLUMNS])
        values = [_float(r[col[p]], i, p) for p in predictors]
        target = _float(r[col[response]], i, response)
        if not all(np.isfinite(values)) or not np.isfinite(target):
            raise ValueError(f"row {i}: non-finite predictor or response value")
        X.append(values)
        y.append(target)
        if TIME_COLUMN in col:
            t.append(int(_float(r[col[TIME_COLUMN]], i, TIME_COLUMN)))
        for name in ignore:
            extra[name].append(r[col[name]])
    points = PointSet(np.asarray(coords, dtype=np.float64).reshape(-1, 2), crs_kind,
                      np.asarray(t) if TIME_COLUMN in col else None)
    X = np.asarray(X, dtype=np.float64).reshape(len(rows), len(predictors))
    return Dataset(X, np.asarray(y), predictors, points), extra


def write_training(path, data: Dataset, response: str = "response",
                   extra: Optional[Dict[str, Sequence]] = None) -> None:
    if data.points is None:
        raise ValueError("dataset has no point locations")
    extra = extra or {}
    header = list(COORD_COLUMNS)
    if data.points.time is not None:
        header.append(TIME_COLUMN)
    header += list(extra) + list(data.names) + [response]
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for i in range(data.n):
            row = [repr(float(v)) for v in data.points.coords[i]]
            if data.points.time is not None:
                row.append(str(int(data.points.time[i])))
            row += [str(extra[k][i]) for k in extra]
            row += [repr(float(v)) for v in data.X[i]]
            row.append(repr(float(data.y[i])))
            w.writerow(row)
