"""
Per-image ops working on float (C, H, W) images in [0, 1].

Each op takes its own RngStream and returns a new array. When `trace` is a
list, a dict describing what was applied is appended to it.
"""

from typing import List, Optional

import numpy as np

from dataset.rng import RngStream

FILL_VALUE = 0.5


def hflip(image: np.ndarray, probability: float, rng: RngStream, trace: Optional[List[dict]] = None) -> np.ndarray:
    if not 0.0 <= probability <= 1.0:
        raise ValueError(f"flip probability must lie in [0, 1], got {probability}")
    flip = bool(rng.generator().random() < probability)
    if trace is not None:
        trace.append({"op": "hflip", "applied": flip})
    if not flip:
        return image
    return image[:, :, ::-1].copy()


def pad_crop(image: np.ndarray, padding: int, rng: RngStream, trace: Optional[List[dict]] = None) -> np.ndarray:
    """Reflect-pads by `padding` on every side, then crops a uniform H x W window."""
    if padding < 0:
        raise ValueError(f"padding must be >= 0, got {padding}")
    if padding == 0:
        return image
    _, height, width = image.shape
    padded = np.pad(image, ((0, 0), (padding, padding), (padding, padding)), mode="reflect")
    gen = rng.generator()
    top = int(gen.integers(0, 2 * padding + 1))
    left = int(gen.integers(0, 2 * padding + 1))
    if trace is not None:
        trace.append({"op": "pad_crop", "top": top, "left": left})
    return padded[:, top:top + height, left:left + width].copy()


def cutout_box(height: int, width: int, size: int, cy: int, cx: int):
    y0 = cy - size // 2
    x0 = cx - size // 2
    return (
        int(np.clip(y0, 0, height)),
        int(np.clip(y0 + size, 0, height)),
        int(np.clip(x0, 0, width)),
        int(np.clip(x0 + size, 0, width)),
    )


def cutout(image: np.ndarray, size: int, rng: RngStream, trace: Optional[List[dict]] = None) -> np.ndarray:
    """Fills a size x size square around a uniform pixel (clipped) with mid-gray."""
    if size < 0:
        raise ValueError(f"cutout size must be >= 0, got {size}")
    if size == 0:
        return image
    _, height, width = image.shape
    gen = rng.generator()
    cy, cx = int(gen.integers(height)), int(gen.integers(width))
    y0, y1, x0, x1 = cutout_box(height, width, size, cy, cx)
    out = image.copy()
    out[:, y0:y1, x0:x1] = FILL_VALUE
    if trace is not None:
        trace.append({"op": "cutout", "y0": y0, "y1": y1, "x0": x0, "x1": x1})
    return out
