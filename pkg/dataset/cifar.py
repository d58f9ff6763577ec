"""
CIFAR binary format: records of 1 label byte followed by 3072 pixel bytes
(1024 red, 1024 green, 1024 blue, row-major within each plane).
"""

import logging
import os
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .samples import Dataset, one_hot_matrix

logger = logging.getLogger(__name__)

CIFAR_SIDE = 32
CIFAR_CHANNELS = 3
PIXEL_BYTES = CIFAR_CHANNELS * CIFAR_SIDE * CIFAR_SIDE
RECORD_BYTES = 1 + PIXEL_BYTES

TRAIN_FILES = [f"data_batch_{i}.bin" for i in range(1, 6)]
TEST_FILES = ["test_batch.bin"]


class CifarFormatError(ValueError):
    """Raised when a file does not follow the 3073-byte record layout."""


def _decode(raw: bytes, num_classes: int, source: str) -> Tuple[np.ndarray, np.ndarray]:
    if len(raw) % RECORD_BYTES != 0:
        offset = (len(raw) // RECORD_BYTES) * RECORD_BYTES
        raise CifarFormatError(
            f"{source}: truncated record at byte offset {offset} "
            f"(file length {len(raw)} is not a multiple of {RECORD_BYTES})"
        )
    records = np.frombuffer(raw, dtype=np.uint8).reshape(-1, RECORD_BYTES)
    labels = records[:, 0].astype(np.int64)
    bad = np.nonzero(labels >= num_classes)[0]
    if bad.size:
        raise CifarFormatError(
            f"{source}: record {int(bad[0])} has label {int(labels[bad[0]])} "
            f">= num_classes={num_classes}"
        )
    pixels = records[:, 1:].reshape(-1, CIFAR_CHANNELS, CIFAR_SIDE, CIFAR_SIDE)
    return pixels, labels


def load_cifar_binary(path: str, num_classes: int = 10, name: Optional[str] = None) -> Dataset:
    """
    Reads one CIFAR binary file (1 label byte + 3072 pixel bytes per record).

    Args:
        path: Binary file path
        num_classes: Labels must lie below this
        name: Dataset name (default: the file name)

    Returns:
        Dataset with images scaled to [0, 1] and one-hot labels
    """
    with open(path, "rb") as f:
        raw = f.read()
    pixels, labels = _decode(raw, num_classes, path)
    images = pixels.astype(np.float32) / np.float32(255.0)
    logger.info(f"Loaded {labels.size} CIFAR records from {path}")
    return Dataset(images, one_hot_matrix(labels, num_classes), name or os.path.basename(path))


def load_cifar_files(paths: Sequence[str], num_classes: int, name: str) -> Dataset:
    """Concatenates several binary files into one dataset."""
    chunks: List[np.ndarray] = []
    label_chunks: List[np.ndarray] = []
    for path in paths:
        ds = load_cifar_binary(path, num_classes)
        chunks.append(ds.images)
        label_chunks.append(ds.labels)
    if not chunks:
        raise ValueError(f"no CIFAR files given for '{name}'")
    return Dataset(np.concatenate(chunks), np.concatenate(label_chunks), name)


def load_cifar_dir(
    root: str,
    num_classes: int = 10,
    train_files: Sequence[str] = TRAIN_FILES,
    test_files: Sequence[str] = TEST_FILES,
) -> Tuple[Dataset, Dataset]:
    if not os.path.isdir(root):
        raise FileNotFoundError(f"CIFAR root directory not found: {root}")
    train_paths = [os.path.join(root, f) for f in train_files]
    test_paths = [os.path.join(root, f) for f in test_files]
    missing = [p for p in train_paths + test_paths if not os.path.exists(p)]
    if missing:
        raise FileNotFoundError(f"missing CIFAR files: {', '.join(missing)}")
    return (
        load_cifar_files(train_paths, num_classes, "cifar-train"),
        load_cifar_files(test_paths, num_classes, "cifar-test"),
    )


def write_cifar_binary(dataset: Dataset, path: str) -> None:
    """Writes `dataset` in the same layout; pixels are quantized to bytes."""
    if dataset.image_shape != (CIFAR_CHANNELS, CIFAR_SIDE, CIFAR_SIDE):
        raise ValueError(
            f"CIFAR layout needs {CIFAR_CHANNELS}x{CIFAR_SIDE}x{CIFAR_SIDE} images, "
            f"got {dataset.image_shape}"
        )
    if dataset.num_classes > 256:
        raise ValueError(f"label byte cannot hold {dataset.num_classes} classes")
    n = len(dataset)
    records = np.empty((n, RECORD_BYTES), dtype=np.uint8)
    records[:, 0] = dataset.class_indices.astype(np.uint8)
    quantized = np.rint(dataset.images.astype(np.float64) * 255.0)
    records[:, 1:] = np.clip(quantized, 0, 255).astype(np.uint8).reshape(n, PIXEL_BYTES)
    with open(path, "wb") as f:
        f.write(records.tobytes())
    logger.info(f"Wrote {n} records to {path}")
