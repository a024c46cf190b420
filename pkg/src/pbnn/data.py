"""Dataset ingestion, normalization, batching, and synthetic fixtures."""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from .errors import DataError

__all__ = [
    "NormalizationSpec",
    "Dataset",
    "cifar10_normalization",
    "load_cifar10",
    "batches",
    "synthetic_dataset",
    "subset",
]

IMAGE_SHAPE = (3, 32, 32)
RECORD_BYTES = 1 + 3072  # label byte + 32*32 pixels per channel plane (R, G, B)
TRAIN_FILES = tuple(f"data_batch_{i}.bin" for i in range(1, 6))
TEST_FILE = "test_batch.bin"


@dataclass(frozen=True)
class NormalizationSpec:
    """Per-channel (mean, std) pairs applied after scaling pixels to [0,1]."""

    means: tuple[float, float, float]
    stds: tuple[float, float, float]

    def __post_init__(self):
        if len(self.means) != 3 or len(self.stds) != 3:
            raise ValueError("three channels expected")
        if any(s <= 0 for s in self.stds):
            raise ValueError("stds must be positive")


def cifar10_normalization() -> NormalizationSpec:
    """Standard CIFAR-10 channel statistics (R, G, B order)."""
    return NormalizationSpec(
        means=(0.4914, 0.4822, 0.4465), stds=(0.2023, 0.1994, 0.2010)
    )


@dataclass
class Dataset:
    images: np.ndarray  # (N, 3, 32, 32) float32, normalized
    labels: np.ndarray  # (N,) int64 in [0, 10)
    split: str = "train"

    def __post_init__(self):
        if self.images.ndim != 4 or self.images.shape[1:] != IMAGE_SHAPE:
            raise DataError(f"images must be (N, 3, 32, 32), got {self.images.shape}")
        if self.labels.shape != (self.images.shape[0],):
            raise DataError("labels must align with images")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() > 9):
            raise DataError("labels outside [0, 9]")

    def __len__(self) -> int:
        return self.images.shape[0]


def _read_batch_file(path: str) -> tuple[np.ndarray, np.ndarray]:
    if not os.path.isfile(path):
        raise DataError(f"missing dataset file: {path}")
    raw = np.fromfile(path, dtype=np.uint8)
    if raw.size == 0 or raw.size % RECORD_BYTES != 0:
        raise DataError(
            f"truncated dataset file: {path} ({raw.size} bytes is not a "
            f"multiple of {RECORD_BYTES})"
        )
    records = raw.reshape(-1, RECORD_BYTES)
    labels = records[:, 0].astype(np.int64)
    if labels.max() > 9:
        raise DataError(f"corrupt dataset file: {path} (label byte > 9)")
    pixels = records[:, 1:].reshape(-1, *IMAGE_SHAPE)
    return pixels, labels


def _normalize(pixels: np.ndarray, norm: NormalizationSpec) -> np.ndarray:
    x = pixels.astype(np.float32) / 255.0
    means = np.asarray(norm.means, dtype=np.float32).reshape(1, 3, 1, 1)
    stds = np.asarray(norm.stds, dtype=np.float32).reshape(1, 3, 1, 1)
    return (x - means) / stds


def load_cifar10(
    data_dir: str, norm: NormalizationSpec | None = None
) -> tuple[Dataset, Dataset]:
    """Load the standard CIFAR-10 binary release from ``data_dir``.

    Expects data_batch_1..5.bin and test_batch.bin, each a sequence of
    3073-byte records (1 label byte + 3072 pixel bytes, channel planes in
    R, G, B order).  Pixels are scaled to [0,1] and normalized per channel.
    """
    norm = norm or cifar10_normalization()
    train_parts = [_read_batch_file(os.path.join(data_dir, f)) for f in TRAIN_FILES]
    test_pixels, test_labels = _read_batch_file(os.path.join(data_dir, TEST_FILE))
    train_pixels = np.concatenate([p for p, _ in train_parts])
    train_labels = np.concatenate([l for _, l in train_parts])
    train = Dataset(_normalize(train_pixels, norm), train_labels, split="train")
    test = Dataset(_normalize(test_pixels, norm), test_labels, split="test")
    return train, test


def batches(ds: Dataset, batch_size: int, rng: np.random.Generator):
    """Seeded-permutation batches; the final partial batch is dropped.

    Yields ``(images, labels)`` views.  Pass a generator keyed by
    (seed, epoch) for a fresh permutation each epoch.
    """
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}")
    order = rng.permutation(len(ds))
    n_full = len(ds) // batch_size
    for b in range(n_full):
        pick = order[b * batch_size : (b + 1) * batch_size]
        yield ds.images[pick], ds.labels[pick]


def synthetic_dataset(
    n: int,
    classes: int = 10,
    seed: int = 0,
    snr: float = 1.0,
    split: str = "train",
) -> Dataset:
    """Gaussian class-blob images with class-dependent channel structure.

    Each class gets a fixed smooth signal pattern (per-channel mean plus a
    coarse spatial blob); images are ``snr * pattern + N(0,1)`` noise, so
    the task is linearly separable at high SNR and pure chance at snr=0.
    Classes are interleaved (label i % classes), keeping any prefix subset
    balanced.  Fully determined by (n, classes, seed, snr).
    """
    if n < classes:
        raise DataError(f"need n >= classes, got n={n}, classes={classes}")
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))
    # class patterns: per-channel offsets plus one low-frequency spatial mode
    chan_means = rng.normal(size=(classes, 3, 1, 1))
    yy, xx = np.meshgrid(np.linspace(0, np.pi, 32), np.linspace(0, np.pi, 32))
    freqs = [(np.sin((c % 3 + 1) * yy) * np.cos((c % 4 + 1) * xx)) for c in range(classes)]
    patterns = chan_means + np.stack(freqs)[:, None, :, :]
    patterns /= np.sqrt(np.mean(patterns**2, axis=(1, 2, 3), keepdims=True))

    labels = (np.arange(n) % classes).astype(np.int64)
    noise = rng.normal(size=(n, *IMAGE_SHAPE))
    images = (snr * patterns[labels] + noise).astype(np.float32)
    return Dataset(images, labels, split=split)


def subset(ds: Dataset, n: int) -> Dataset:
    """Deterministic subset: the first ``n`` records."""
    if n > len(ds):
        raise DataError(f"subset {n} exceeds dataset size {len(ds)}")
    return Dataset(ds.images[:n].copy(), ds.labels[:n].copy(), split=ds.split)
