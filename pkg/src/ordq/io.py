"""Dataset and prevalence-vector files.

Datasets are CSV with header ``f0,...,f{d-1},label``: decimal features and a
0-based integer class label, UTF-8 with LF line endings.
"""
from __future__ import annotations

import csv
import math
from pathlib import Path

import numpy as np

from .exceptions import DataError


def _float(text: str, path, line: int, column: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise DataError(f"{path}:{line}: column {column!r}: {text!r} is not a number") from None
    if not math.isfinite(value):
        raise DataError(f"{path}:{line}: column {column!r}: non-finite value {text!r}")
    return value


def read_dataset(path, require_labels: bool = True):
    """Load a dataset CSV.

    :param require_labels: if false, a file without a ``label`` column is
        accepted and ``None`` is returned for the labels
    :returns: ``(X, y)`` with ``X`` an ``N x d`` float array and ``y`` an int array
    :raises DataError: on malformed headers, cells or row lengths, with the line number
    """
    path = Path(path)
    try:
        handle = path.open(newline="", encoding="utf-8")
    except OSError as exc:
        raise DataError(f"{path}: cannot open ({exc.strerror})") from None
    with handle:
        reader = csv.reader(handle)
        header = next(reader, None)
        if header is None:
            raise DataError(f"{path}: empty file")
        has_label = bool(header) and header[-1] == "label"
        if require_labels and not has_label:
            raise DataError(f"{path}:1: last header column must be 'label'")
        names = header[:-1] if has_label else header
        expected = [f"f{j}" for j in range(len(names))]
        if not names or names != expected:
            raise DataError(f"{path}:1: feature columns must be named f0..f{{d-1}}, got {names}")
        rows, labels = [], []
        for line, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise DataError(f"{path}:{line}: expected {len(header)} fields, found {len(row)}")
            rows.append([_float(v, path, line, c) for v, c in zip(row, names)])
            if has_label:
                text = row[-1].strip()
                if not text.isdigit():
                    raise DataError(f"{path}:{line}: label {row[-1]!r} is not a non-negative integer")
                labels.append(int(text))
    if not rows:
        raise DataError(f"{path}: no data rows")
    X = np.array(rows, dtype=float)
    y = np.array(labels, dtype=int) if has_label else None
    return X, y


def format_float(x: float) -> str:
    """Shortest round-tripping text for a float, so rewritten files stay byte-identical."""
    return repr(float(x))


def write_dataset(path, X, y=None):
    """Write ``X`` (and labels, if given) in the dataset CSV format."""
    X = np.asarray(X, dtype=float)
    header = [f"f{j}" for j in range(X.shape[1])] + (["label"] if y is not None else [])
    with Path(path).open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(header)
        for i, row in enumerate(X):
            cells = [format_float(v) for v in row]
            if y is not None:
                cells.append(str(int(y[i])))
            writer.writerow(cells)


def read_prevalences(path, n_classes: int) -> np.ndarray:
    """Prevalence vectors, one per line, comma separated, optional ``p0..`` header.

    Each row is renormalised to sum to 1.
    """
    path = Path(path)
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise DataError(f"{path}: cannot open ({exc.strerror})") from None
    out = []
    for line_no, line in enumerate(lines, start=1):
        if not line.strip() or (line_no == 1 and line.strip().startswith("p")):
            continue
        cells = line.split(",")
        if len(cells) != n_classes:
            raise DataError(f"{path}:{line_no}: expected {n_classes} values, found {len(cells)}")
        p = np.array([_float(c, path, line_no, f"p{j}") for j, c in enumerate(cells)])
        if np.any(p < 0) or p.sum() <= 0:
            raise DataError(f"{path}:{line_no}: prevalences must be non-negative with a positive sum")
        out.append(p / p.sum())
    if not out:
        raise DataError(f"{path}: no prevalence vectors")
    return np.array(out)
