"""Datasets: synthetic blobs, IDX image files, CSV, and client partitions.

Three ingestion paths share one Dataset type:

- synthetic Gaussian blobs, seeded, for fast deterministic tests;
- IDX files (big-endian, magic 0x00000803 for images and 0x00000801 for
  labels), the standard handwritten-digit distribution format;
- CSV with the label in the first column and features after it.

Partitioners split a pool across clients. The class-sharded partition
gives one client every example of one class and nothing else, which is
what makes that class's accuracy collapse to zero once the client is
unlearned: no remaining participant has ever seen it.
"""

from __future__ import annotations

import csv
import gzip
import struct
from dataclasses import dataclass

import numpy as np


class DataError(ValueError):
    pass


class EmptyDataset(DataError):
    pass


IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


@dataclass(frozen=True)
class Dataset:
    """Feature matrix (n x d float64), labels (n int64), and owner id."""

    X: np.ndarray
    y: np.ndarray
    owner: str = ""

    def __post_init__(self):
        X = np.ascontiguousarray(self.X, dtype=np.float64)
        y = np.ascontiguousarray(self.y, dtype=np.int64)
        if X.ndim != 2 or y.ndim != 1 or X.shape[0] != y.shape[0]:
            raise DataError("X must be (n, d) and y (n,) with matching n")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)

    def __len__(self) -> int:
        return self.X.shape[0]

    def require_nonempty(self) -> "Dataset":
        if len(self) == 0:
            raise EmptyDataset(f"dataset for {self.owner or 'unknown owner'} is empty")
        return self


def make_blobs(
    n_examples: int,
    n_features: int,
    n_classes: int,
    seed: int,
    spread: float = 1.0,
    center_scale: float = 4.0,
) -> Dataset:
    """Seeded Gaussian blobs, one cluster per class, labels balanced."""
    rng = np.random.default_rng(seed)
    centers = rng.normal(0.0, center_scale, (n_classes, n_features))
    y = np.arange(n_examples, dtype=np.int64) % n_classes
    X = centers[y] + rng.normal(0.0, spread, (n_examples, n_features))
    return Dataset(X=X, y=y)


def _open_maybe_gzip(path: str):
    with open(path, "rb") as f:
        head = f.read(2)
    if head == b"\x1f\x8b":
        return gzip.open(path, "rb")
    return open(path, "rb")


def load_idx_images(path: str) -> np.ndarray:
    """(n, rows*cols) float64 in [0, 1]."""
    with _open_maybe_gzip(path) as f:
        header = f.read(16)
        if len(header) != 16:
            raise DataError(f"{path}: truncated IDX header")
        magic, n, rows, cols = struct.unpack(">IIII", header)
        if magic != IDX_IMAGES_MAGIC:
            raise DataError(f"{path}: bad magic 0x{magic:08x}, expected 0x{IDX_IMAGES_MAGIC:08x}")
        raw = f.read(n * rows * cols)
    if len(raw) != n * rows * cols:
        raise DataError(f"{path}: truncated IDX pixel data")
    pixels = np.frombuffer(raw, dtype=np.uint8).reshape(n, rows * cols)
    return pixels.astype(np.float64) / 255.0


def load_idx_labels(path: str) -> np.ndarray:
    with _open_maybe_gzip(path) as f:
        header = f.read(8)
        if len(header) != 8:
            raise DataError(f"{path}: truncated IDX header")
        magic, n = struct.unpack(">II", header)
        if magic != IDX_LABELS_MAGIC:
            raise DataError(f"{path}: bad magic 0x{magic:08x}, expected 0x{IDX_LABELS_MAGIC:08x}")
        raw = f.read(n)
    if len(raw) != n:
        raise DataError(f"{path}: truncated IDX label data")
    return np.frombuffer(raw, dtype=np.uint8).astype(np.int64)


def write_idx_images(path: str, images: np.ndarray, rows: int, cols: int) -> None:
    """Inverse of load_idx_images; expects floats in [0, 1]."""
    n = images.shape[0]
    if images.shape[1] != rows * cols:
        raise DataError(f"images have {images.shape[1]} pixels, expected {rows * cols}")
    pixels = np.clip(np.rint(images * 255.0), 0, 255).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(struct.pack(">IIII", IDX_IMAGES_MAGIC, n, rows, cols))
        f.write(pixels.tobytes())


def write_idx_labels(path: str, labels: np.ndarray) -> None:
    labels = np.asarray(labels)
    if labels.min() < 0 or labels.max() > 255:
        raise DataError("IDX labels must fit in a byte")
    with open(path, "wb") as f:
        f.write(struct.pack(">II", IDX_LABELS_MAGIC, labels.shape[0]))
        f.write(labels.astype(np.uint8).tobytes())


def load_idx_pair(images_path: str, labels_path: str) -> Dataset:
    X = load_idx_images(images_path)
    y = load_idx_labels(labels_path)
    if X.shape[0] != y.shape[0]:
        raise DataError(f"{X.shape[0]} images but {y.shape[0]} labels")
    return Dataset(X=X, y=y)


def load_csv(path: str) -> Dataset:
    """Label in the first column, features after. A non-numeric first row
    is treated as a header and skipped."""
    rows = []
    with open(path, "r", encoding="utf-8", newline="") as f:
        for row in csv.reader(f):
            if not row:
                continue
            rows.append(row)
    if not rows:
        raise EmptyDataset(f"{path}: no rows")
    try:
        float(rows[0][0])
    except ValueError:
        rows = rows[1:]
        if not rows:
            raise EmptyDataset(f"{path}: header only") from None
    width = len(rows[0])
    y = np.empty(len(rows), dtype=np.int64)
    X = np.empty((len(rows), width - 1), dtype=np.float64)
    for i, row in enumerate(rows):
        if len(row) != width:
            raise DataError(f"{path}: row {i} has {len(row)} fields, expected {width}")
        try:
            y[i] = int(float(row[0]))
            X[i] = [float(v) for v in row[1:]]
        except ValueError as exc:
            raise DataError(f"{path}: row {i}: {exc}") from exc
    return Dataset(X=X, y=y)


def write_csv(path: str, dataset: Dataset) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f)
        for label, features in zip(dataset.y, dataset.X):
            writer.writerow([int(label)] + [repr(float(v)) for v in features])


def partition_iid(pool: Dataset, client_ids: list[str], seed: int) -> dict[str, Dataset]:
    """Shuffle once, deal out contiguous shards."""
    if not client_ids:
        raise DataError("need at least one client")
    pool.require_nonempty()
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(pool))
    shards = np.array_split(order, len(client_ids))
    return {
        cid: Dataset(X=pool.X[idx], y=pool.y[idx], owner=cid)
        for cid, idx in zip(client_ids, shards)
    }


def partition_class_sharded(
    pool: Dataset,
    client_ids: list[str],
    exclusive_client: str,
    exclusive_class: int,
    seed: int,
) -> dict[str, Dataset]:
    """One client holds every example of one class; the rest is split IID
    among the others. Unlearning the exclusive client therefore removes
    that class from the federation entirely."""
    if exclusive_client not in client_ids:
        raise DataError(f"{exclusive_client!r} not in client list")
    if len(client_ids) < 2:
        raise DataError("class sharding needs at least two clients")
    mask = pool.y == exclusive_class
    if not mask.any():
        raise DataError(f"class {exclusive_class} absent from pool")
    exclusive = Dataset(X=pool.X[mask], y=pool.y[mask], owner=exclusive_client)
    rest_pool = Dataset(X=pool.X[~mask], y=pool.y[~mask])
    others = [cid for cid in client_ids if cid != exclusive_client]
    parts = partition_iid(rest_pool, others, seed)
    parts[exclusive_client] = exclusive
    return {cid: parts[cid] for cid in client_ids}
