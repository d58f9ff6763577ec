"""
Procedural shape dataset used as the desk-scale stand-in for CIFAR.

Every class is a shape family drawn in a random hue over a random
background, with jittered position and scale plus additive noise. Colors are
drawn independently of the class, so per-channel color statistics overlap
across classes and the task cannot be solved from color alone.
"""

import colorsys
import logging
from dataclasses import dataclass
from typing import Callable, Dict, Tuple

import numpy as np

from .rng import RngStream
from .samples import Dataset, one_hot_matrix

logger = logging.getLogger(__name__)

NOISE_STD = 0.06


class InvalidSyntheticSpec(ValueError):
    pass


@dataclass(frozen=True)
class SyntheticSpec:
    num_classes: int = 4
    per_class_train: int = 500
    per_class_test: int = 100
    height: int = 32
    width: int = 32

    def validate(self) -> None:
        if self.num_classes < 2:
            raise InvalidSyntheticSpec(f"num_classes must be >= 2, got {self.num_classes}")
        if self.num_classes > len(SHAPES):
            raise InvalidSyntheticSpec(
                f"only {len(SHAPES)} shape families exist, got num_classes={self.num_classes}"
            )
        if self.height < 8 or self.width < 8:
            raise InvalidSyntheticSpec(f"images must be at least 8x8, got {self.height}x{self.width}")
        if self.per_class_train <= 0 or self.per_class_test <= 0:
            raise InvalidSyntheticSpec(
                f"need samples in both splits, got {self.per_class_train}/{self.per_class_test} per class"
            )


# Each shape maps (dx, dy, size, gen) -> boolean mask; dx/dy are pixel offsets
# from the jittered center.
def _rectangle(dx, dy, s, gen):
    a, b = s * gen.uniform(0.6, 1.0, size=2)
    return (np.abs(dx) < a) & (np.abs(dy) < b)


def _disk(dx, dy, s, gen):
    return dx ** 2 + dy ** 2 < s ** 2


def _cross(dx, dy, s, gen):
    t = s * gen.uniform(0.22, 0.35)
    return ((np.abs(dx) < t) & (np.abs(dy) < s)) | ((np.abs(dy) < t) & (np.abs(dx) < s))


def _stripe(dx, dy, s, gen):
    angle = gen.uniform(-np.pi / 9, np.pi / 9)
    period = s * gen.uniform(0.5, 0.8)
    phase = gen.uniform(0.0, 1.0)
    u = (dx * np.sin(angle) + dy * np.cos(angle)) / period + phase
    return np.mod(u, 1.0) < 0.5


def _ring(dx, dy, s, gen):
    r2 = dx ** 2 + dy ** 2
    return (r2 < s ** 2) & (r2 > (s * gen.uniform(0.45, 0.6)) ** 2)


def _triangle(dx, dy, s, gen):
    return (dy < 0.7 * s) & (np.abs(dx) < 0.6 * (dy + s))


def _checker(dx, dy, s, gen):
    p = max(s / 2.0, 1.0)
    inside = (np.abs(dx) < s) & (np.abs(dy) < s)
    return inside & (np.mod(np.floor((dx + s) / p) + np.floor((dy + s) / p), 2) == 0)


def _diamond(dx, dy, s, gen):
    return np.abs(dx) + np.abs(dy) < s


SHAPES: Dict[int, Callable] = {
    0: _rectangle,
    1: _disk,
    2: _cross,
    3: _stripe,
    4: _ring,
    5: _triangle,
    6: _checker,
    7: _diamond,
}
SHAPE_NAMES = ["rectangle", "disk", "cross", "stripe", "ring", "triangle", "checker", "diamond"]


def _random_color(gen: np.random.Generator, saturation: Tuple[float, float], value: Tuple[float, float]):
    h = gen.uniform(0.0, 1.0)
    s = gen.uniform(*saturation)
    v = gen.uniform(*value)
    return np.array(colorsys.hsv_to_rgb(h, s, v), dtype=np.float64)


def render_shape(class_index: int, height: int, width: int, rng: RngStream) -> np.ndarray:
    gen = rng.generator()
    yy, xx = np.mgrid[0:height, 0:width].astype(np.float64) + 0.5
    cx = width / 2.0 + gen.uniform(-0.15, 0.15) * width
    cy = height / 2.0 + gen.uniform(-0.15, 0.15) * height
    size = gen.uniform(0.22, 0.36) * min(height, width)
    mask = SHAPES[class_index](xx - cx, yy - cy, size, gen)

    background = _random_color(gen, (0.0, 0.6), (0.15, 0.85))
    foreground = _random_color(gen, (0.3, 1.0), (0.3, 1.0))
    # Keep the shape visible against its background.
    if np.abs(foreground - background).max() < 0.25:
        foreground = 1.0 - background

    image = np.where(mask[None, :, :], foreground[:, None, None], background[:, None, None])
    image = image + gen.normal(0.0, NOISE_STD, size=image.shape)
    return np.clip(image, 0.0, 1.0).astype(np.float32)


def _render_split(spec: SyntheticSpec, per_class: int, rng: RngStream, name: str) -> Dataset:
    n = spec.num_classes * per_class
    images = np.empty((n, 3, spec.height, spec.width), dtype=np.float32)
    classes = np.empty(n, dtype=np.int64)
    i = 0
    for index in range(per_class):
        for c in range(spec.num_classes):
            images[i] = render_shape(c, spec.height, spec.width, rng.child(c, index))
            classes[i] = c
            i += 1
    return Dataset(images, one_hot_matrix(classes, spec.num_classes), name)


def generate_synthetic(spec: SyntheticSpec, seed: int) -> Tuple[Dataset, Dataset]:
    """Class-balanced (train, test) pair; train and test use disjoint RNG paths."""
    spec.validate()
    root = RngStream(seed).child("synthetic")
    train = _render_split(spec, spec.per_class_train, root.child("train"), "synthetic-train")
    test = _render_split(spec, spec.per_class_test, root.child("test"), "synthetic-test")
    logger.info(
        f"Generated synthetic shapes: {spec.num_classes} classes, "
        f"{len(train)} train / {len(test)} test, {spec.height}x{spec.width}, seed={seed}"
    )
    return train, test
