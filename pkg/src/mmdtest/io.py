"""CSV ingestion and dumping of numeric datasets."""

from __future__ import annotations

import csv
import math

import numpy as np

from .statistic import Dataset


class DataFormatError(ValueError):
    pass


def read_csv(path, header: bool = False, transpose: bool = False) -> Dataset:
    """Read a comma-delimited numeric matrix; rows are observations.

    ``transpose=True`` is for files stored as features x samples.
    """
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise DataFormatError(f"cannot read {path}: {exc.strerror or exc}") from exc
    except UnicodeDecodeError as exc:
        raise DataFormatError(f"{path} is not valid UTF-8") from exc

    start = 1 if header else 0
    values = []
    width = None
    for lineno, row in enumerate(rows[start:], start=start + 1):
        if not row or all(not cell.strip() for cell in row):
            continue
        if width is None:
            width = len(row)
        elif len(row) != width:
            raise DataFormatError(f"row {lineno}: expected {width} columns, found {len(row)}")
        parsed = []
        for col, cell in enumerate(row, start=1):
            try:
                val = float(cell)
            except ValueError:
                raise DataFormatError(f"row {lineno}, column {col}: non-numeric value {cell.strip()!r}") from None
            if not math.isfinite(val):
                raise DataFormatError(f"row {lineno}, column {col}: NaN or infinite value {cell.strip()!r}")
            parsed.append(val)
        values.append(parsed)
    if not values:
        raise DataFormatError(f"{path} contains no data rows")
    arr = np.array(values, dtype=float)
    return Dataset(arr.T if transpose else arr)


def write_csv(data, path) -> None:
    """Write rows with round-trip float formatting (repr)."""
    vals = data.values if isinstance(data, Dataset) else np.asarray(data, dtype=float)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        for row in vals:
            writer.writerow([repr(float(v)) for v in row])
