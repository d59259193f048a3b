"""Dataset ingestion: IDX files (MNIST / EMNIST), class filtering, synthetics.

IDX is the big-endian binary container of the MNIST-family distributions:

  images:  u32 magic 0x00000803 | u32 count | u32 rows | u32 cols | u8 pixels
  labels:  u32 magic 0x00000801 | u32 count | u8 labels

Only uncompressed files are accepted. Pixels scale to [0, 1] by /255.

The synthetic generator renders jittered 5x7 digit glyphs into noisy 28x28
images so the full pipeline can run without downloads.
"""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .tensor import Tensor

log = logging.getLogger("qadbench.data")

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801

MNIST_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}
EMNIST_FILES = {
    "train": ("emnist-digits-train-images-idx3-ubyte", "emnist-digits-train-labels-idx1-ubyte"),
    "test": ("emnist-digits-test-images-idx3-ubyte", "emnist-digits-test-labels-idx1-ubyte"),
}


class DataError(ValueError):
    pass


@dataclass
class Dataset:
    """Images [N, 1, 28, 28] in [0, 1] plus integer class labels."""

    images: Tensor
    labels: np.ndarray
    n_classes: int = 0

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        arr = self.images.a
        if arr.ndim != 4 or arr.shape[1:] != (1, 28, 28):
            raise DataError(f"images must be [N, 1, 28, 28], got {arr.shape}")
        if self.labels.shape != (arr.shape[0],):
            raise DataError(
                f"image/label count mismatch: {arr.shape[0]} images vs "
                f"{self.labels.shape[0]} labels"
            )
        if arr.size and (arr.min() < 0.0 or arr.max() > 1.0):
            raise DataError("pixels outside [0, 1]")
        if self.n_classes == 0:
            self.n_classes = int(self.labels.max()) + 1 if self.labels.size else 0
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.n_classes):
            raise DataError(f"labels must lie in [0, {self.n_classes})")

    def __len__(self) -> int:
        return self.images.a.shape[0]

    def take(self, indices: np.ndarray) -> "Dataset":
        return Dataset(
            Tensor._wrap(self.images.a[indices]), self.labels[indices], self.n_classes
        )


def _read_be_u32(f, path) -> int:
    raw = f.read(4)
    if len(raw) != 4:
        raise DataError(f"{path}: truncated header")
    return struct.unpack(">I", raw)[0]


def load_idx_images(path) -> Tensor:
    """Parse an IDX image file into a [N, 1, rows, cols] tensor in [0, 1]."""
    path = Path(path)
    with open(path, "rb") as f:
        magic = _read_be_u32(f, path)
        if magic != IMAGE_MAGIC:
            raise DataError(f"{path}: bad image magic 0x{magic:08x}, expected 0x{IMAGE_MAGIC:08x}")
        count = _read_be_u32(f, path)
        rows = _read_be_u32(f, path)
        cols = _read_be_u32(f, path)
        payload = f.read(count * rows * cols)
    if len(payload) != count * rows * cols:
        raise DataError(
            f"{path}: truncated payload, {len(payload)} bytes for {count}x{rows}x{cols}"
        )
    if (rows, cols) != (28, 28):
        log.warning("%s: unusual image size %dx%d (expected 28x28)", path, rows, cols)
    pixels = np.frombuffer(payload, dtype=np.uint8).astype(np.float64) / 255.0
    return Tensor._wrap(pixels.reshape(count, 1, rows, cols))


def load_idx_labels(path) -> np.ndarray:
    path = Path(path)
    with open(path, "rb") as f:
        magic = _read_be_u32(f, path)
        if magic != LABEL_MAGIC:
            raise DataError(f"{path}: bad label magic 0x{magic:08x}, expected 0x{LABEL_MAGIC:08x}")
        count = _read_be_u32(f, path)
        payload = f.read(count)
    if len(payload) != count:
        raise DataError(f"{path}: truncated payload, {len(payload)} bytes for {count} labels")
    return np.frombuffer(payload, dtype=np.uint8).astype(np.int64)


def write_idx_images(path, images_u8: np.ndarray) -> None:
    """Inverse of load_idx_images for fixtures; expects uint8 [N, rows, cols]."""
    images_u8 = np.asarray(images_u8, dtype=np.uint8)
    n, rows, cols = images_u8.shape
    with open(path, "wb") as f:
        f.write(struct.pack(">IIII", IMAGE_MAGIC, n, rows, cols))
        f.write(images_u8.tobytes())


def write_idx_labels(path, labels: np.ndarray) -> None:
    labels = np.asarray(labels, dtype=np.uint8)
    with open(path, "wb") as f:
        f.write(struct.pack(">II", LABEL_MAGIC, labels.size))
        f.write(labels.tobytes())


def load_idx_dataset(images_path, labels_path) -> Dataset:
    images = load_idx_images(images_path)
    labels = load_idx_labels(labels_path)
    if images.a.shape[0] != labels.shape[0]:
        raise DataError(
            f"{images_path} has {images.a.shape[0]} images but {labels_path} has "
            f"{labels.shape[0]} labels"
        )
    return Dataset(images, labels)


def idx_paths(data_dir, dataset: str, split: str) -> tuple[Path, Path]:
    names = MNIST_FILES if dataset == "mnist" else EMNIST_FILES
    if split not in names:
        raise DataError(f"unknown split {split!r}")
    base = Path(data_dir)
    return base / names[split][0], base / names[split][1]


def dataset_available(data_dir, dataset: str) -> bool:
    return all(
        p.exists() for split in ("train", "test") for p in idx_paths(data_dir, dataset, split)
    )


def filter_classes(data: Dataset, classes) -> Dataset:
    """Keep samples whose label is in `classes`, relabeled to 0..len-1.

    Relabeling follows the order of `classes`; original sample order is
    preserved. An empty class set gives an empty dataset.
    """
    classes = list(classes)
    if len(set(classes)) != len(classes):
        raise DataError(f"duplicate entries in class set {classes}")
    observed = set(np.unique(data.labels).tolist())
    unknown = [c for c in classes if c not in observed]
    if unknown and len(data):
        raise DataError(f"classes {unknown} not present in dataset labels")
    if not classes:
        log.warning("filter_classes: empty class set, returning empty dataset")
        return Dataset(Tensor._wrap(data.images.a[:0]), data.labels[:0], n_classes=0)
    remap = {c: i for i, c in enumerate(classes)}
    mask = np.isin(data.labels, classes)
    new_labels = np.array([remap[c] for c in data.labels[mask]], dtype=np.int64)
    return Dataset(Tensor._wrap(data.images.a[mask]), new_labels, n_classes=len(classes))


def subsample_stratified(data: Dataset, size: int, seed: int) -> Dataset:
    """Seeded class-proportional subsample, original order preserved."""
    n = len(data)
    if size > n:
        raise DataError(f"cannot subsample {size} from {n} samples")
    if size == n:
        return data
    rng = np.random.default_rng(seed)
    per_class = {c: np.flatnonzero(data.labels == c) for c in np.unique(data.labels)}
    quota = {c: int(round(size * idx.size / n)) for c, idx in per_class.items()}
    # rounding can drift off `size`; fix up on the largest classes
    drift = size - sum(quota.values())
    for c in sorted(per_class, key=lambda c: -per_class[c].size):
        if drift == 0:
            break
        step = 1 if drift > 0 else -1
        quota[c] += step
        drift -= step
    chosen = np.concatenate(
        [rng.choice(idx, size=quota[c], replace=False) for c, idx in per_class.items()]
    )
    return data.take(np.sort(chosen))


# 5x7 digit glyphs for the synthetic generator
_GLYPHS = [
    ("01110", "10001", "10011", "10101", "11001", "10001", "01110"),
    ("00100", "01100", "00100", "00100", "00100", "00100", "01110"),
    ("01110", "10001", "00001", "00010", "00100", "01000", "11111"),
    ("11111", "00010", "00100", "00010", "00001", "10001", "01110"),
    ("00010", "00110", "01010", "10010", "11111", "00010", "00010"),
    ("11111", "10000", "11110", "00001", "00001", "10001", "01110"),
    ("00110", "01000", "10000", "11110", "10001", "10001", "01110"),
    ("11111", "00001", "00010", "00100", "01000", "01000", "01000"),
    ("01110", "10001", "10001", "01110", "10001", "10001", "01110"),
    ("01110", "10001", "10001", "01111", "00001", "00010", "01100"),
]


def _glyph_array(digit: int) -> np.ndarray:
    return np.array([[int(ch) for ch in row] for row in _GLYPHS[digit]], dtype=np.float64)


def synthetic_digits(seed: int, n: int, n_classes: int) -> Dataset:
    """Deterministic 28x28 digit-like images with balanced classes.

    Each sample is its class glyph upscaled 3x, placed at a jittered offset
    with jittered intensity, plus Gaussian pixel noise, clipped to [0, 1].
    """
    if n < 0:
        raise DataError("n must be >= 0")
    if not 2 <= n_classes <= 10:
        raise DataError("n_classes must be in [2, 10]")
    rng = np.random.default_rng(seed)
    labels = np.arange(n, dtype=np.int64) % n_classes
    images = np.zeros((n, 1, 28, 28))
    glyphs = [np.kron(_glyph_array(d), np.ones((3, 3))) for d in range(n_classes)]  # 21x15
    for i in range(n):
        g = glyphs[labels[i]]
        top = 3 + rng.integers(-2, 3)
        left = 6 + rng.integers(-3, 4)
        intensity = rng.uniform(0.65, 1.0)
        images[i, 0, top : top + 21, left : left + 15] = g * intensity
        images[i, 0] += rng.normal(0.0, 0.08, size=(28, 28))
    np.clip(images, 0.0, 1.0, out=images)
    return Dataset(Tensor._wrap(images), labels, n_classes=n_classes)
