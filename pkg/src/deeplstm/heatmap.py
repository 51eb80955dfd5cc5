"""Nonnegative matrices exported as CSV plus an 8-bit binary graymap (PGM, ``P5``).

Pixel values are ``round(255 * v / max(v))``; an all-zero matrix maps to an
all-black image. One pixel per matrix cell, rows top to bottom.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

__all__ = ["Heatmap", "to_gray", "write_pgm", "read_pgm", "write_csv", "read_csv"]


@dataclass
class Heatmap:
    values: np.ndarray
    row_labels: Optional[Sequence[str]] = None
    col_labels: Optional[Sequence[str]] = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise ValueError("heatmap values must be a matrix")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("heatmap values must be finite")
        if np.any(self.values < 0):
            raise ValueError("heatmap values must be nonnegative")
        r, c = self.values.shape
        self.row_labels = [str(v) for v in (self.row_labels or range(r))]
        self.col_labels = [str(v) for v in (self.col_labels or range(c))]
        if len(self.row_labels) != r or len(self.col_labels) != c:
            raise ValueError("label count does not match the matrix shape")

    @property
    def rows(self) -> int:
        return self.values.shape[0]

    @property
    def cols(self) -> int:
        return self.values.shape[1]

    def save(self, stem) -> tuple[Path, Path]:
        """Write ``<stem>.csv`` and ``<stem>.pgm``; return both paths."""
        stem = Path(stem)
        csv_path, pgm_path = stem.with_suffix(".csv"), stem.with_suffix(".pgm")
        write_csv(csv_path, self.values, self.row_labels, self.col_labels)
        write_pgm(pgm_path, to_gray(self.values))
        return csv_path, pgm_path


def to_gray(values) -> np.ndarray:
    v = np.asarray(values, dtype=np.float64)
    top = v.max() if v.size else 0.0
    if top <= 0:
        return np.zeros(v.shape, dtype=np.uint8)
    return np.rint(255.0 * v / top).astype(np.uint8)


def write_pgm(path, gray: np.ndarray) -> None:
    gray = np.ascontiguousarray(gray, dtype=np.uint8)
    h, w = gray.shape
    Path(path).write_bytes(f"P5\n{w} {h}\n255\n".encode("ascii") + gray.tobytes())


def read_pgm(path) -> np.ndarray:
    blob = Path(path).read_bytes()
    fields, pos = [], 0
    while len(fields) < 4:
        while blob[pos:pos + 1].isspace():
            pos += 1
        end = pos
        while not blob[end:end + 1].isspace():
            end += 1
        fields.append(blob[pos:end])
        pos = end
    if fields[0] != b"P5" or int(fields[3]) != 255:
        raise ValueError(f"{path}: not an 8-bit binary graymap")
    w, h = int(fields[1]), int(fields[2])
    return np.frombuffer(blob, dtype=np.uint8, count=w * h, offset=pos + 1).reshape(h, w)


def write_csv(path, values, row_labels: Sequence[str], col_labels: Sequence[str]) -> None:
    """First row: ``label`` then column labels; each further row: its label then values."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["label", *col_labels])
        for label, row in zip(row_labels, np.asarray(values)):
            w.writerow([label, *(format(float(v), ".17g") for v in row)])


def read_csv(path) -> tuple[np.ndarray, list, list]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    cols = rows[0][1:]
    labels = [r[0] for r in rows[1:]]
    values = np.array([[float(v) for v in r[1:]] for r in rows[1:]], dtype=np.float64)
    return values.reshape(len(labels), len(cols)), labels, cols
