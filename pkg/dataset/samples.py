"""
Core data containers.

Images are float32 arrays laid out channel-major (C, H, W) with values in
[0, 1]. Labels are float64 probability vectors; a hard label is a one-hot
vector. A Dataset keeps all images in one (N, C, H, W) block and all labels
in one (N, num_classes) block, both read-only once constructed.
"""

from dataclasses import dataclass
from typing import Iterator, NamedTuple, Sequence, Tuple

import numpy as np

IMAGE_DTYPE = np.float32
LABEL_DTYPE = np.float64
LABEL_SUM_TOL = 1e-6


class Sample(NamedTuple):
    image: np.ndarray
    label: np.ndarray


class Batch(NamedTuple):
    """A minibatch: images (B, C, H, W) and labels (B, num_classes)."""

    images: np.ndarray
    labels: np.ndarray

    @property
    def size(self) -> int:
        return self.images.shape[0]


def validate_image(image: np.ndarray) -> None:
    if image.ndim != 3:
        raise ValueError(f"image must be (channels, height, width), got shape {image.shape}")
    if image.size and (image.min() < 0.0 or image.max() > 1.0):
        raise ValueError(f"pixel values must lie in [0, 1], got [{image.min()}, {image.max()}]")


def validate_label(label: np.ndarray) -> None:
    if label.ndim != 1:
        raise ValueError(f"label must be a vector, got shape {label.shape}")
    if np.any(label < 0):
        raise ValueError(f"label has negative entries: {label}")
    if abs(float(label.sum()) - 1.0) > LABEL_SUM_TOL:
        raise ValueError(f"label must sum to 1, got {float(label.sum())}")


def one_hot(class_index: int, num_classes: int) -> np.ndarray:
    """Hard label: 1 at `class_index`, 0 elsewhere."""
    if num_classes < 1:
        raise ValueError(f"num_classes must be positive, got {num_classes}")
    if not 0 <= class_index < num_classes:
        raise ValueError(f"class index {class_index} out of range for {num_classes} classes")
    label = np.zeros(num_classes, dtype=LABEL_DTYPE)
    label[class_index] = 1.0
    return label


def one_hot_matrix(class_indices: Sequence[int], num_classes: int) -> np.ndarray:
    indices = np.asarray(class_indices, dtype=np.int64)
    if indices.size and (indices.min() < 0 or indices.max() >= num_classes):
        raise ValueError(f"class indices must lie in [0, {num_classes}), got {indices.min()}..{indices.max()}")
    labels = np.zeros((indices.size, num_classes), dtype=LABEL_DTYPE)
    labels[np.arange(indices.size), indices] = 1.0
    return labels


@dataclass(frozen=True, eq=False)
class Dataset:
    images: np.ndarray
    labels: np.ndarray
    name: str

    def __post_init__(self):
        images = np.ascontiguousarray(self.images, dtype=IMAGE_DTYPE)
        labels = np.ascontiguousarray(self.labels, dtype=LABEL_DTYPE)
        if images.ndim != 4:
            raise ValueError(f"dataset images must be (N, C, H, W), got shape {images.shape}")
        if labels.ndim != 2 or labels.shape[0] != images.shape[0]:
            raise ValueError(
                f"labels shape {labels.shape} does not match {images.shape[0]} images"
            )
        if images.size and (images.min() < 0.0 or images.max() > 1.0):
            raise ValueError(f"dataset '{self.name}' has pixels outside [0, 1]")
        if labels.size and (np.any(labels < 0) or np.any(np.abs(labels.sum(axis=1) - 1.0) > LABEL_SUM_TOL)):
            raise ValueError(f"dataset '{self.name}' has labels that are not probability vectors")
        images.setflags(write=False)
        labels.setflags(write=False)
        object.__setattr__(self, "images", images)
        object.__setattr__(self, "labels", labels)

    @property
    def num_classes(self) -> int:
        return self.labels.shape[1]

    @property
    def image_shape(self) -> Tuple[int, int, int]:
        return tuple(self.images.shape[1:])

    @property
    def class_indices(self) -> np.ndarray:
        return np.argmax(self.labels, axis=1)

    def __len__(self):
        return self.images.shape[0]

    def __getitem__(self, index: int) -> Sample:
        return Sample(self.images[index], self.labels[index])

    def __iter__(self) -> Iterator[Sample]:
        for i in range(len(self)):
            yield self[i]

    def batch(self, indices: Sequence[int]) -> Batch:
        idx = np.asarray(indices, dtype=np.int64)
        return Batch(self.images[idx], self.labels[idx])

    def subset(self, indices: Sequence[int], name: str = None) -> "Dataset":
        idx = np.asarray(indices, dtype=np.int64)
        return Dataset(self.images[idx], self.labels[idx], name or self.name)

    def __repr__(self):
        return f"<Dataset {self.name}: {len(self)} x {self.image_shape}, {self.num_classes} classes>"


def channel_stats(dataset: Dataset) -> Tuple[np.ndarray, np.ndarray]:
    """Per-channel mean and std of a dataset, used as normalization constants."""
    if len(dataset) == 0:
        raise ValueError("cannot compute channel statistics of an empty dataset")
    pixels = dataset.images.astype(np.float64)
    mean = pixels.mean(axis=(0, 2, 3))
    std = pixels.std(axis=(0, 2, 3))
    std = np.where(std < 1e-6, 1.0, std)
    return mean, std
