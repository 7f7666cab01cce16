"""File helpers shared by the experiment runner and the command line."""

from __future__ import annotations

import csv
import io
import json
import os
import tempfile
from pathlib import Path

import numpy as np

from .exceptions import InvalidInputError


def atomic_write_text(path, text: str) -> None:
    """Write ``text`` to ``path`` via a temporary file in the same directory and a rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def fmt(x: float) -> str:
    # shortest round-trip repr keeps files byte-stable and lossless
    return repr(float(x))


def csv_text(header: list[str], rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([fmt(v) if isinstance(v, (float, np.floating)) else v for v in row])
    return buf.getvalue()


def json_text(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def read_matrix_csv(path, *, name: str = "input") -> np.ndarray:
    """Read a headerless numeric CSV into a 2-D float array.

    Errors name the 1-based row (and column) that failed to parse.
    """
    path = Path(path)
    if not path.is_file():
        raise InvalidInputError(f"{name}: no such file {path}")
    rows: list[list[float]] = []
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or all(not c.strip() for c in row):
                continue
            vals = []
            for col, cell in enumerate(row, start=1):
                try:
                    vals.append(float(cell))
                except ValueError:
                    raise InvalidInputError(
                        f"{name}: row {lineno}, column {col}: cannot parse {cell.strip()!r} as a number"
                    ) from None
            if rows and len(vals) != len(rows[0]):
                raise InvalidInputError(
                    f"{name}: row {lineno} has {len(vals)} fields, expected {len(rows[0])}"
                )
            rows.append(vals)
    if not rows:
        raise InvalidInputError(f"{name}: {path} is empty")
    A = np.array(rows, dtype=float)
    if not np.all(np.isfinite(A)):
        raise InvalidInputError(f"{name}: non-finite values in {path}")
    return A


def read_vector_csv(path, *, name: str = "input") -> np.ndarray:
    """Read a vector stored as one column or one row."""
    A = read_matrix_csv(path, name=name)
    if A.shape[1] == 1 or A.shape[0] == 1:
        return A.ravel()
    raise InvalidInputError(f"{name}: expected a single row or column, got shape {A.shape}")
