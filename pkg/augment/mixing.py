"""
Batch-level mixing: Mixup and CutMix, plus the Beta sampler they share.

Both operators pair every sample with a partner taken from a seeded
permutation of the same minibatch and mix the labels with the coefficient
that was actually applied to the pixels.
"""

import logging
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from dataset.rng import RngStream
from dataset.samples import Batch

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class MixCoefficient:
    lam: float
    gamma: float

    def __post_init__(self):
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError(f"mixing coefficient must lie in [0, 1], got {self.lam}")
        if self.gamma <= 0:
            raise ValueError(f"Beta concentration must be > 0, got {self.gamma}")


@dataclass(frozen=True)
class CutMask:
    """Half-open rectangle [y0, y1) x [x0, x1) in pixel coordinates."""

    x0: int
    y0: int
    x1: int
    y1: int

    @property
    def area(self) -> int:
        return (self.x1 - self.x0) * (self.y1 - self.y0)

    def as_dict(self):
        return {"x0": self.x0, "y0": self.y0, "x1": self.x1, "y1": self.y1}


@dataclass
class MixInfo:
    """What a batch-level op did, kept for previews and tests."""

    kind: str
    lam: float
    perm: np.ndarray
    mask: Optional[CutMask] = None
    layer: int = 0


def beta_sample(gamma: float, rng: RngStream) -> float:
    """Draws lambda ~ Beta(gamma, gamma) as G1 / (G1 + G2) with Gi ~ Gamma(gamma, 1)."""
    if not gamma > 0:
        raise ValueError(f"gamma must be > 0, got {gamma}")
    gen = rng.generator()
    while True:
        g1 = gen.standard_gamma(gamma)
        g2 = gen.standard_gamma(gamma)
        # Both draws can underflow to 0 for very small gamma.
        if g1 + g2 > 0:
            return float(g1 / (g1 + g2))


def convex_mix(values: np.ndarray, lam: float, perm: np.ndarray) -> np.ndarray:
    """lam * v_i + (1 - lam) * v_perm(i) along the batch axis."""
    return lam * values + (1.0 - lam) * values[perm]


def mix_images(images: np.ndarray, lam: float, perm: np.ndarray) -> np.ndarray:
    # Clipping only absorbs the last-ulp overshoot of the convex combination.
    return np.clip(convex_mix(images, lam, perm), 0.0, 1.0)


def partner_permutation(batch_size: int, rng: RngStream) -> np.ndarray:
    return rng.generator().permutation(batch_size)


def _check_batch(batch: Batch) -> None:
    if batch.images.shape[0] == 0:
        raise ValueError("cannot mix an empty batch")
    if batch.images.ndim != 4:
        raise ValueError(f"batch images must share one (C, H, W) shape, got {batch.images.shape}")
    if batch.labels.shape[0] != batch.images.shape[0]:
        raise ValueError(
            f"{batch.images.shape[0]} images but {batch.labels.shape[0]} labels in batch"
        )


def mixup_batch(
    batch: Batch,
    gamma: float,
    rng: RngStream,
    lam: Optional[float] = None,
    perm: Optional[np.ndarray] = None,
) -> Tuple[Batch, MixInfo]:
    """
    Mixup with one lambda per batch.

    `lam` and `perm` override the random draws; they exist so callers can
    replay a known mix exactly.
    """
    _check_batch(batch)
    n = batch.images.shape[0]
    if lam is None:
        lam = beta_sample(gamma, rng.child("lambda"))
    if perm is None:
        perm = partner_permutation(n, rng.child("perm"))
    perm = np.asarray(perm, dtype=np.int64)
    images = mix_images(batch.images, lam, perm)
    labels = convex_mix(batch.labels, lam, perm)
    return Batch(images, labels), MixInfo("mixup", float(lam), perm)


def cutmix_masks(
    height: int,
    width: int,
    rng: RngStream,
    lam: Optional[float] = None,
    center: Optional[Tuple[int, int]] = None,
) -> Tuple[CutMask, MixCoefficient]:
    """
    Rectangle with sides H*sqrt(1-lam), W*sqrt(1-lam) around a uniform pixel,
    clipped to the image. The returned coefficient is re-derived from the
    clipped area: lam = 1 - area / (H * W).
    """
    if height < 1 or width < 1:
        raise ValueError(f"image must be at least 1x1, got {height}x{width}")
    if lam is None:
        lam = beta_sample(1.0, rng.child("lambda"))
    gen = rng.child("center").generator()
    if center is None:
        cy, cx = int(gen.integers(height)), int(gen.integers(width))
    else:
        cy, cx = center
    ratio = np.sqrt(1.0 - lam)
    cut_h, cut_w = int(height * ratio), int(width * ratio)
    y0 = cy - cut_h // 2
    x0 = cx - cut_w // 2
    mask = CutMask(
        x0=int(np.clip(x0, 0, width)),
        y0=int(np.clip(y0, 0, height)),
        x1=int(np.clip(x0 + cut_w, 0, width)),
        y1=int(np.clip(y0 + cut_h, 0, height)),
    )
    total = height * width
    adjusted = (total - mask.area) / total
    return mask, MixCoefficient(adjusted, 1.0)


def paste_mask(images: np.ndarray, perm: np.ndarray, mask: CutMask) -> np.ndarray:
    out = images.copy()
    out[:, :, mask.y0:mask.y1, mask.x0:mask.x1] = images[perm][:, :, mask.y0:mask.y1, mask.x0:mask.x1]
    return out


def cutmix_batch(
    batch: Batch,
    apply_probability: float,
    rng: RngStream,
    apply: Optional[bool] = None,
    lam: Optional[float] = None,
    perm: Optional[np.ndarray] = None,
    center: Optional[Tuple[int, int]] = None,
) -> Tuple[Batch, Optional[MixInfo]]:
    """CutMix applied to the whole batch with probability `apply_probability`."""
    if not 0.0 <= apply_probability <= 1.0:
        raise ValueError(f"apply_probability must lie in [0, 1], got {apply_probability}")
    _check_batch(batch)
    if apply is None:
        apply = bool(rng.child("coin").generator().random() < apply_probability)
    if not apply:
        return batch, None
    _, _, height, width = batch.images.shape
    mask, coef = cutmix_masks(height, width, rng.child("mask"), lam=lam, center=center)
    if perm is None:
        perm = partner_permutation(batch.images.shape[0], rng.child("perm"))
    perm = np.asarray(perm, dtype=np.int64)
    images = paste_mask(batch.images, perm, mask)
    labels = convex_mix(batch.labels, coef.lam, perm)
    return Batch(images, labels), MixInfo("cutmix", coef.lam, perm, mask)
