"""CSV readers and writers with bit-stable float formatting."""

from __future__ import annotations

import csv
import math

import numpy as np

from .core import Dataset


def fmt(value) -> str:
    """17 significant digits for floats, so values round-trip exactly."""
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return str(bool(value)).lower()
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        v = float(value)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return format(v, ".17g")
    return str(value)


def write_rows(path: str, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])


def read_dataset_csv(path: str) -> Dataset:
    """Read a ``x_1,...,x_d,y`` CSV file."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ValueError(f"{path}: empty file") from None
        d = len(header) - 1
        expected = [f"x_{j}" for j in range(1, d + 1)] + ["y"]
        if d < 1 or header != expected:
            raise ValueError(f"{path}: header must be x_1,...,x_d,y; got {','.join(header)}")
        rows = [r for r in reader if r]
    if not rows:
        return Dataset.empty(d)
    try:
        arr = np.array(rows, dtype=float)
    except ValueError as exc:
        raise ValueError(f"{path}: non-numeric entry ({exc})") from None
    if arr.shape[1] != d + 1:
        raise ValueError(f"{path}: ragged rows")
    return Dataset(arr[:, :d], arr[:, d], d)


def write_dataset_csv(path: str, data: Dataset) -> None:
    header = [f"x_{j}" for j in range(1, data.d + 1)] + ["y"]
    write_rows(path, header, (list(x) + [y] for x, y in zip(data.X, data.y)))
