"""Minimal CSV helpers with shortest round-trip float formatting."""

from __future__ import annotations

import csv
from typing import Iterable, Sequence

import numpy as np


def fmt(x) -> str:
    """Shortest string that parses back to the same float."""
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, str):
        return x
    return repr(float(x))


def write_columns(path, header: Sequence[str], columns: Sequence[Iterable],
                  trailer: Sequence[str] = ()) -> None:
    """Write equal-length columns under ``header``; ``trailer`` lines are appended as ``# ...`` comments."""
    cols = [list(c) for c in columns]
    if len({len(c) for c in cols}) > 1:
        raise ValueError("columns differ in length")
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for row in zip(*cols):
            fh.write(",".join(fmt(v) for v in row) + "\n")
        for line in trailer:
            fh.write(f"# {line}\n")


def read_columns(path) -> tuple[list[str], np.ndarray, list[str]]:
    """Return ``(header, data, trailer_comments)``; data is a float array (rows x cols)."""
    comments = []
    rows = []
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise ValueError(f"{path}: empty file")
        for lineno, row in enumerate(reader, start=2):
            if row and row[0].startswith("#"):
                comments.append(",".join(row)[1:].strip())
                continue
            if len(row) != len(header):
                raise ValueError(f"{path}: line {lineno} has {len(row)} fields, expected {len(header)}")
            rows.append([float(v) for v in row])
    data = np.array(rows, dtype=float).reshape(len(rows), len(header))
    return header, data, comments
