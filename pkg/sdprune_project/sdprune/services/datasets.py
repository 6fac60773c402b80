"""Datasets: containers, minibatching, IDX/CSV ingestion and synthetic fixtures."""
import csv
import logging
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Optional, Sequence

import numpy as np

from sdprune.core.errors import DimensionError, FormatError, InputError
from sdprune.schemas.config_schemas import ModelSpec

logger = logging.getLogger(__name__)

IDX_IMAGE_MAGIC = 0x00000803
IDX_LABEL_MAGIC = 0x00000801


@dataclass(frozen=True)
class Dataset:
    """Inputs (N x in_dim) with float targets (N x out_dim) or integer class indices (N,)."""

    inputs: np.ndarray
    targets: np.ndarray
    name: str = "dataset"
    n_classes: Optional[int] = None

    def __post_init__(self):
        inputs = np.ascontiguousarray(self.inputs, dtype=np.float64)
        if inputs.ndim != 2 or inputs.shape[0] < 1:
            raise DimensionError(f"inputs must be a nonempty N x in_dim matrix, got {inputs.shape}")
        if not np.all(np.isfinite(inputs)):
            raise InputError(f"dataset '{self.name}' has non-finite inputs")
        if self.n_classes is not None:
            targets = np.asarray(self.targets).astype(np.int64).reshape(-1)
            if targets.shape[0] != inputs.shape[0]:
                raise DimensionError("one class index per input row is required")
            if targets.min() < 0 or targets.max() >= self.n_classes:
                raise InputError(f"class indices must lie in [0, {self.n_classes})")
        else:
            targets = np.asarray(self.targets, dtype=np.float64)
            if targets.ndim == 1:
                targets = targets[:, None]
            if targets.shape[0] != inputs.shape[0]:
                raise DimensionError("one target row per input row is required")
            if not np.all(np.isfinite(targets)):
                raise InputError(f"dataset '{self.name}' has non-finite targets")
        object.__setattr__(self, "inputs", inputs)
        object.__setattr__(self, "targets", np.ascontiguousarray(targets))

    def __len__(self) -> int:
        return int(self.inputs.shape[0])

    @property
    def in_dim(self) -> int:
        return int(self.inputs.shape[1])

    @property
    def out_dim(self) -> int:
        return self.n_classes if self.n_classes is not None else int(self.targets.shape[1])

    def subset(self, batch: "Batch") -> "Dataset":
        idx = batch.indices
        return Dataset(self.inputs[idx], self.targets[idx], self.name, self.n_classes)

    def split(self, n_test: int, rng: np.random.Generator) -> "tuple[Dataset, Optional[Dataset]]":
        if n_test <= 0:
            return self, None
        if n_test >= len(self):
            raise InputError("n_test must leave at least one training sample")
        order = rng.permutation(len(self))
        train = self.subset(Batch(order[n_test:], len(self)))
        test = self.subset(Batch(order[:n_test], len(self)))
        return (
            Dataset(train.inputs, train.targets, f"{self.name}-train", self.n_classes),
            Dataset(test.inputs, test.targets, f"{self.name}-test", self.n_classes),
        )


@dataclass(frozen=True)
class Batch:
    indices: np.ndarray
    size_of: int

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=np.int64).reshape(-1)
        if idx.size == 0:
            raise InputError("a batch must be nonempty")
        if idx.min() < 0 or idx.max() >= self.size_of:
            raise InputError("batch indices out of range")
        object.__setattr__(self, "indices", idx)

    @classmethod
    def full(cls, dataset: Dataset) -> "Batch":
        return cls(np.arange(len(dataset)), len(dataset))


def iterate_batches(dataset: Dataset, batch_size: int, rng: np.random.Generator) -> Iterator[Batch]:
    """Shuffled minibatches covering the dataset once; the last batch may be short."""
    n = len(dataset)
    if batch_size < 1 or batch_size > n:
        raise InputError(f"batch_size must lie in [1, {n}], got {batch_size}")
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield Batch(order[start:start + batch_size], n)


def _read_be32(raw: bytes, offset: int, path: Path) -> int:
    if len(raw) < offset + 4:
        raise FormatError(f"{path}: truncated header")
    return struct.unpack_from(">i", raw, offset)[0]


def load_idx_images(path) -> np.ndarray:
    # i32 magic | i32 count | i32 rows | i32 cols | u8[count*rows*cols]
    path = Path(path)
    raw = path.read_bytes()
    magic = _read_be32(raw, 0, path)
    if magic != IDX_IMAGE_MAGIC:
        raise FormatError(f"{path}: bad image magic number {magic} (expected {IDX_IMAGE_MAGIC})")
    count, rows, cols = (_read_be32(raw, off, path) for off in (4, 8, 12))
    if min(count, rows, cols) < 0:
        raise FormatError(f"{path}: negative dimension in header")
    expected = count * rows * cols
    body = raw[16:]
    if len(body) < expected:
        raise FormatError(f"{path}: truncated pixel data ({len(body)} of {expected} bytes)")
    return np.frombuffer(body, dtype=np.uint8, count=expected).reshape(count, rows * cols)


def load_idx_labels(path) -> np.ndarray:
    # i32 magic | i32 count | u8[count]
    path = Path(path)
    raw = path.read_bytes()
    magic = _read_be32(raw, 0, path)
    if magic != IDX_LABEL_MAGIC:
        raise FormatError(f"{path}: bad label magic number {magic} (expected {IDX_LABEL_MAGIC})")
    count = _read_be32(raw, 4, path)
    body = raw[8:]
    if count < 0 or len(body) < count:
        raise FormatError(f"{path}: truncated label data ({len(body)} of {count} bytes)")
    return np.frombuffer(body, dtype=np.uint8, count=count)


def load_idx(images_path, labels_path, n_classes: Optional[int] = None) -> Dataset:
    images = load_idx_images(images_path)
    labels = load_idx_labels(labels_path).astype(np.int64)
    if images.shape[0] != labels.shape[0]:
        raise FormatError(f"image count {images.shape[0]} does not match label count {labels.shape[0]}")
    if images.shape[0] == 0:
        raise FormatError("IDX files contain no samples")
    classes = n_classes if n_classes is not None else int(labels.max()) + 1
    logger.info("loaded %d IDX samples of dimension %d", images.shape[0], images.shape[1])
    return Dataset(images.astype(np.float64) / 255.0, labels, Path(images_path).stem, classes)


def load_csv(path, n_classes: Optional[int] = None) -> Dataset:
    """Header row, feature columns, then one target column; integer targets when n_classes is set."""
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        try:
            header = next(reader)
        except StopIteration:
            raise FormatError(f"{path}: empty CSV file") from None
        rows = [row for row in reader if row]
    if len(header) < 2:
        raise FormatError(f"{path}: need at least one feature column and one target column")
    try:
        table = np.array([[float(x) for x in row] for row in rows], dtype=np.float64)
    except ValueError as e:
        raise FormatError(f"{path}: non-numeric cell ({e})") from e
    if table.ndim != 2 or table.shape[0] == 0 or table.shape[1] != len(header):
        raise FormatError(f"{path}: every row must have {len(header)} cells")
    inputs, targets = table[:, :-1], table[:, -1]
    if n_classes is not None:
        if np.any(targets != np.round(targets)):
            raise FormatError(f"{path}: class targets must be integers")
        return Dataset(inputs, targets.astype(np.int64), path.stem, n_classes)
    return Dataset(inputs, targets, path.stem)


def quadratic_dataset(inputs: Sequence[Sequence[float]], targets: Sequence[float], name: str = "quadratic") -> Dataset:
    return Dataset(np.asarray(inputs, dtype=np.float64), np.asarray(targets, dtype=np.float64), name)


def make_two_moons(rng: np.random.Generator, n_samples: int, noise_std: float = 0.1) -> Dataset:
    """Two interleaving half circles, classes 0 (outer) and 1 (inner)."""
    n_outer = n_samples // 2
    n_inner = n_samples - n_outer
    theta_outer = rng.uniform(0.0, np.pi, n_outer)
    theta_inner = rng.uniform(0.0, np.pi, n_inner)
    outer = np.stack([np.cos(theta_outer), np.sin(theta_outer)], axis=1)
    inner = np.stack([1.0 - np.cos(theta_inner), 0.5 - np.sin(theta_inner)], axis=1)
    inputs = np.concatenate([outer, inner]) + noise_std * rng.standard_normal((n_samples, 2))
    labels = np.concatenate([np.zeros(n_outer, dtype=np.int64), np.ones(n_inner, dtype=np.int64)])
    order = rng.permutation(n_samples)
    return Dataset(inputs[order], labels[order], "two_moons", 2)


@dataclass(frozen=True)
class RegressionFixture:
    dataset: Dataset
    w_true: np.ndarray

    @property
    def spec(self) -> ModelSpec:
        """Bias-free single-output linear model matching the fixture."""
        return ModelSpec(kind="linear_regression", layer_sizes=[self.dataset.in_dim, 1], bias=False)


def make_linear_regression(rng: np.random.Generator, n_samples: int, dim: int, noise_std: float = 0.0) -> RegressionFixture:
    """Gaussian design with a planted solution whose entries have magnitude in [1, 2].

    With ``n_samples < dim`` and no noise the planted vector is an exact interpolating
    minimizer and the Hessian has an exact null space of dimension dim - rank(X).
    """
    inputs = rng.standard_normal((n_samples, dim))
    w_true = rng.choice([-1.0, 1.0], size=dim) * rng.uniform(1.0, 2.0, size=dim)
    targets = inputs @ w_true
    if noise_std > 0:
        targets = targets + noise_std * rng.standard_normal(n_samples)
    return RegressionFixture(Dataset(inputs, targets, "linear_regression"), w_true)
