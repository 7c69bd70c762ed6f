"""Dataset ingestion (CSV, IDX, synthetic) and CSV emission."""

from __future__ import annotations

import csv
import gzip
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


class DataError(ValueError):
    pass


@dataclass
class DatasetTable:
    X: np.ndarray
    y: np.ndarray | None = None

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        if self.X.ndim != 2:
            raise DataError("feature matrix must be two-dimensional")
        if self.y is not None:
            self.y = np.asarray(self.y, dtype=np.float64).reshape(-1, 1)
            if self.y.shape[0] != self.X.shape[0]:
                raise DataError(f"{self.X.shape[0]} feature rows but {self.y.shape[0]} labels")

    @property
    def num_rows(self) -> int:
        return self.X.shape[0]

    @property
    def num_features(self) -> int:
        return self.X.shape[1]

    @property
    def label_kind(self) -> str | None:
        if self.y is None:
            return None
        integral = np.all(self.y == np.round(self.y)) and np.all(self.y >= 0)
        return "integer-class" if integral else "real"


def format_number(x: float) -> str:
    return format(float(x), ".17g")


def write_csv(path, header: list[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([format_number(v) for v in row])


def load_csv(path, label_column: int | None = -1, header: bool = True) -> DatasetTable:
    """Read a rectangular numeric CSV, splitting off one label column.

    ``label_column`` may be negative (counted from the end) or ``None`` when
    the file holds features only. Errors name the offending line.
    """
    rows = []
    width = None
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        for lineno, cells in enumerate(reader, start=1):
            if header and lineno == 1:
                continue
            if not cells or all(not c.strip() for c in cells):
                continue
            if width is None:
                width = len(cells)
            elif len(cells) != width:
                raise DataError(f"{path}: line {lineno} has {len(cells)} fields, expected {width}")
            try:
                rows.append([float(c) for c in cells])
            except ValueError as exc:
                raise DataError(f"{path}: line {lineno}: non-numeric cell ({exc})") from None
    if not rows:
        raise DataError(f"{path}: no data rows")
    table = np.array(rows, dtype=np.float64)
    if label_column is None:
        return DatasetTable(table)
    col = label_column % width if -width <= label_column < width else None
    if col is None:
        raise DataError(f"{path}: label column {label_column} outside {width} columns")
    if width < 2:
        raise DataError(f"{path}: need at least one feature column besides the label")
    X = np.delete(table, col, axis=1)
    return DatasetTable(X, table[:, col])


def _read_maybe_gzip(path) -> bytes:
    raw = Path(path).read_bytes()
    if raw[:2] == b"\x1f\x8b":
        raw = gzip.decompress(raw)
    return raw


def _idx_payload(raw: bytes, magic: int, ndim: int, path) -> tuple[tuple[int, ...], np.ndarray]:
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise DataError(f"{path}: truncated IDX header")
    (found,) = struct.unpack(">I", raw[:4])
    if found != magic:
        raise DataError(f"{path}: bad IDX magic 0x{found:08x}, expected 0x{magic:08x}")
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    expected = int(np.prod(dims))
    body = np.frombuffer(raw, dtype=np.uint8, offset=header)
    if body.size != expected:
        raise DataError(f"{path}: IDX body has {body.size} bytes, dims {dims} need {expected}")
    return dims, body


def load_idx(images_path, labels_path) -> DatasetTable:
    """Big-endian IDX images and labels (optionally gzipped); pixels scaled to [0, 1]."""
    (count, rows, cols), pixels = _idx_payload(_read_maybe_gzip(images_path), IDX_IMAGES_MAGIC, 3, images_path)
    (nlabels,), labels = _idx_payload(_read_maybe_gzip(labels_path), IDX_LABELS_MAGIC, 1, labels_path)
    if count != nlabels:
        raise DataError(f"{count} images but {nlabels} labels")
    X = pixels.reshape(count, rows * cols).astype(np.float64) / 255.0
    return DatasetTable(X, labels.astype(np.float64))


def write_idx(images: np.ndarray, labels: np.ndarray, images_path, labels_path) -> None:
    """Inverse of :func:`load_idx` for uint8 arrays of shape (count, rows, cols) and (count,)."""
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    Path(images_path).write_bytes(struct.pack(">4I", IDX_IMAGES_MAGIC, *images.shape) + images.tobytes())
    Path(labels_path).write_bytes(struct.pack(">2I", IDX_LABELS_MAGIC, labels.shape[0]) + labels.tobytes())


def synthetic_classes(
    n: int = 1000, d: int = 64, num_classes: int = 10, seed: int = 0, spread: float = 0.15
) -> DatasetTable:
    """Gaussian blobs around uniform random class centres in the unit cube.

    Labels are balanced (``i mod C``) then shuffled.
    """
    if n < num_classes or d < 1 or num_classes < 2:
        raise DataError("synthetic data needs n >= classes >= 2 and d >= 1")
    rng = np.random.default_rng(seed)
    centres = rng.uniform(size=(num_classes, d))
    y = rng.permutation(np.arange(n) % num_classes)
    X = centres[y] + spread * rng.standard_normal((n, d))
    return DatasetTable(X, y.astype(np.float64))
