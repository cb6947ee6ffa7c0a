"""CSV matrix files and JSON manifests.

Matrix files hold one row per line, comma separated, no header. Floats are
written with 17 significant digits so a write/read cycle is lossless.
"""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np

from .errors import ArgumentError


def fmt(x: float) -> str:
    return format(float(x), ".17g")


def load_matrix_csv(path) -> np.ndarray:
    path = Path(path)
    try:
        with path.open(newline="") as fh:
            rows = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    except OSError as exc:
        raise ArgumentError(f"cannot read {path}: {exc}") from exc
    if not rows:
        raise ArgumentError(f"{path}: empty matrix file")
    width = len(rows[0])
    out = np.empty((len(rows), width))
    for i, row in enumerate(rows):
        if len(row) != width:
            raise ArgumentError(f"{path}: ragged row {i + 1} ({len(row)} fields, expected {width})")
        for j, cell in enumerate(row):
            try:
                v = float(cell)
            except ValueError:
                raise ArgumentError(f"{path}: row {i + 1} col {j + 1} is not a number: {cell!r}") from None
            if not math.isfinite(v):
                raise ArgumentError(f"{path}: row {i + 1} col {j + 1} is not finite")
            out[i, j] = v
    return out


def save_matrix_csv(path, M) -> None:
    M = np.atleast_2d(np.asarray(M, dtype=np.float64))
    lines = [",".join(fmt(v) for v in row) for row in M]
    Path(path).write_text("".join(line + "\n" for line in lines), newline="\n")


def load_labels(path) -> np.ndarray:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ArgumentError(f"cannot read {path}: {exc}") from exc
    labels = []
    for i, line in enumerate(text.splitlines()):
        s = line.strip()
        if not s:
            continue
        try:
            v = float(s)
        except ValueError:
            raise ArgumentError(f"{path}: line {i + 1} is not a label: {s!r}") from None
        if not math.isfinite(v) or v != int(v) or v < 0:
            raise ArgumentError(f"{path}: line {i + 1} is not a nonnegative integer label")
        labels.append(int(v))
    if not labels:
        raise ArgumentError(f"{path}: no labels")
    return np.asarray(labels, dtype=np.int64)


def save_labels(path, y) -> None:
    Path(path).write_text("".join(f"{int(v)}\n" for v in y), newline="\n")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return v
    return obj


def dumps_json(obj) -> str:
    return json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n"


def save_json(path, obj) -> None:
    Path(path).write_text(dumps_json(obj), newline="\n")


def write_table_csv(path, header, rows) -> None:
    """Write a headed CSV; floats get 17 significant digits."""
    def cell(v):
        if isinstance(v, (float, np.floating)):
            return fmt(v)
        return str(v)

    lines = [",".join(header)] + [",".join(cell(v) for v in row) for row in rows]
    Path(path).write_text("".join(line + "\n" for line in lines), newline="\n")
