"""Datasets and client partitioning.

Synthetic Gaussian blobs are the default desk-scale data; IDX files (the
MNIST container format) can be loaded for real images.  Partitioning follows
the per-class Dirichlet scheme: for every class, client proportions are drawn
from ``Dirichlet(beta * 1_N)`` and that class's samples are split accordingly.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (ConfigError, IdxCountMismatchError, IdxMagicError, IdxTruncatedError,
                     InvalidInputError)

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


@dataclass(frozen=True, eq=False)
class LabeledDataset:
    x: np.ndarray
    y: np.ndarray
    num_classes: int
    # position of every sample in the dataset it was carved from
    index: np.ndarray = field(default=None)

    def __post_init__(self):
        x = np.asarray(self.x, dtype=np.float64)
        y = np.asarray(self.y, dtype=np.int64)
        if x.ndim != 2 or y.shape != (x.shape[0],):
            raise InvalidInputError("x must be (n, dim) and y must be (n,)")
        if x.shape[0] == 0:
            raise InvalidInputError("dataset must be non-empty")
        if np.any(y < 0) or np.any(y >= self.num_classes):
            raise InvalidInputError("labels must lie in [0, num_classes)")
        index = np.arange(len(y)) if self.index is None else np.asarray(self.index, dtype=np.int64)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "index", index)

    def __len__(self) -> int:
        return self.y.size

    @property
    def dim(self) -> int:
        return self.x.shape[1]

    def subset(self, rows) -> "LabeledDataset":
        rows = np.asarray(rows, dtype=np.int64)
        return LabeledDataset(self.x[rows], self.y[rows], self.num_classes, self.index[rows])

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.y, minlength=self.num_classes)


@dataclass(frozen=True)
class PartitionSpec:
    num_clients: int
    beta: float = 0.5
    seed: int = 0
    min_size: int = 1

    def __post_init__(self):
        if self.num_clients < 1:
            raise InvalidInputError("num_clients must be >= 1")
        if not self.beta > 0:
            raise InvalidInputError("beta must be > 0")


def make_blobs(num_classes: int, dim: int, n_per_class: int, class_separation: float,
               noise_std: float, seed) -> LabeledDataset:
    """Isotropic Gaussian clusters, one per class.

    Centers point in random directions at radius ``class_separation / sqrt(2)``,
    so two centers are about ``class_separation`` apart.
    """
    if min(num_classes, dim, n_per_class) <= 0:
        raise InvalidInputError("counts must be positive")
    rng = np.random.default_rng(seed)
    dirs = rng.standard_normal((num_classes, dim))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    centers = dirs * class_separation / np.sqrt(2.0)
    y = np.repeat(np.arange(num_classes), n_per_class)
    x = centers[y] + noise_std * rng.standard_normal((y.size, dim))
    return LabeledDataset(x, y, num_classes)


def blob_centers(ds: LabeledDataset) -> np.ndarray:
    return np.stack([ds.x[ds.y == k].mean(axis=0) for k in range(ds.num_classes)])


def _read_exact(buf: bytes, offset: int, n: int, what: str) -> bytes:
    if offset + n > len(buf):
        raise IdxTruncatedError(f"{what}: need {offset + n} bytes, file has {len(buf)}")
    return buf[offset:offset + n]


def load_idx(images_path, labels_path, num_classes: int = 10) -> LabeledDataset:
    """Load an uncompressed IDX image/label pair; pixels are scaled to [0, 1]."""
    img = Path(images_path).read_bytes()
    lab = Path(labels_path).read_bytes()

    magic, count, rows, cols = struct.unpack(">IIII", _read_exact(img, 0, 16, str(images_path)))
    if magic != IDX_IMAGES_MAGIC:
        raise IdxMagicError(f"{images_path}: bad image magic 0x{magic:08x}")
    magic_l, count_l = struct.unpack(">II", _read_exact(lab, 0, 8, str(labels_path)))
    if magic_l != IDX_LABELS_MAGIC:
        raise IdxMagicError(f"{labels_path}: bad label magic 0x{magic_l:08x}")
    if count != count_l:
        raise IdxCountMismatchError(f"{count} images but {count_l} labels")

    pixels = _read_exact(img, 16, count * rows * cols, str(images_path))
    labels = _read_exact(lab, 8, count, str(labels_path))
    x = np.frombuffer(pixels, dtype=np.uint8).reshape(count, rows * cols) / 255.0
    y = np.frombuffer(labels, dtype=np.uint8).astype(np.int64)
    return LabeledDataset(x, y, num_classes)


def iid_partition(ds: LabeledDataset, num_clients: int, seed) -> list[LabeledDataset]:
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(ds))
    return [ds.subset(np.sort(part)) for part in np.array_split(order, num_clients)]


def dirichlet_partition(ds: LabeledDataset, spec: PartitionSpec) -> list[LabeledDataset]:
    """Split ``ds`` across clients with per-class Dirichlet proportions.

    Allocations leaving any shard with fewer than ``spec.min_size`` samples
    are redrawn; after 100 failed attempts a :class:`ConfigError` is raised.
    """
    n = spec.num_clients
    if n == 1:
        return [ds.subset(np.arange(len(ds)))]
    rng = np.random.default_rng(spec.seed)
    by_class = [np.flatnonzero(ds.y == k) for k in range(ds.num_classes)]
    for _ in range(100):
        shards: list[list[np.ndarray]] = [[] for _ in range(n)]
        for idx in by_class:
            if idx.size == 0:
                continue
            idx = rng.permutation(idx)
            props = rng.dirichlet(np.full(n, spec.beta))
            cuts = (np.cumsum(props)[:-1] * idx.size).astype(int)
            for c, part in enumerate(np.split(idx, cuts)):
                shards[c].append(part)
        sizes = [sum(p.size for p in parts) for parts in shards]
        if min(sizes) >= spec.min_size:
            return [ds.subset(np.sort(np.concatenate(parts))) for parts in shards]
    raise ConfigError(
        f"could not draw a Dirichlet(beta={spec.beta}) partition into {n} shards "
        f"of size >= {spec.min_size} in 100 attempts")


def holdout_split(ds: LabeledDataset, test_fraction: float, seed):
    """Split one shard into (train, test); both sides keep at least one sample."""
    if len(ds) < 2:
        raise InvalidInputError("need at least two samples to hold some out")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(ds))
    n_test = min(max(1, int(round(test_fraction * len(ds)))), len(ds) - 1)
    return ds.subset(np.sort(order[n_test:])), ds.subset(np.sort(order[:n_test]))


def label_entropy(ds: LabeledDataset) -> float:
    p = ds.class_counts() / len(ds)
    p = p[p > 0]
    return float(-(p * np.log(p)).sum())
