"""
Policy executor for AutoAugment-style policies.

A policy is a list of sub-policies, each an ordered pair of
(kind, probability, magnitude) ops. One sub-policy is picked uniformly per
image and each of its ops fires with its own probability. Magnitudes are
integers 0-9 mapped to physical parameters by the table in
`policies/magnitudes.json`.

Ops run through Pillow on a 256-level quantized copy of the image; geometric
ops resample bilinearly and fill uncovered pixels with mid-gray.
"""

import json
import logging
import os
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from PIL import Image, ImageEnhance, ImageOps

from dataset.rng import RngStream

from .image_ops import cutout

logger = logging.getLogger(__name__)

POLICY_DIR = os.path.join(os.path.dirname(os.path.abspath(__file__)), "policies")
DEFAULT_POLICY_PATH = os.path.join(POLICY_DIR, "default_policy.json")
MAGNITUDE_TABLE_PATH = os.path.join(POLICY_DIR, "magnitudes.json")

OP_KINDS = (
    "ShearX", "ShearY", "TranslateX", "TranslateY", "Rotate",
    "Invert", "Solarize", "Posterize", "Contrast", "Color",
    "Brightness", "Sharpness", "AutoContrast", "Equalize", "Cutout",
)
MAX_MAGNITUDE = 9
FILL_LEVEL = 128


class PolicyConfigError(ValueError):
    pass


@dataclass(frozen=True)
class MagnitudeRange:
    low: float
    high: float
    signed: bool = False
    integer: bool = False

    def physical(self, magnitude: int) -> float:
        value = self.low + (self.high - self.low) * magnitude / MAX_MAGNITUDE
        return float(int(round(value))) if self.integer else value


def load_magnitude_table(path: str = MAGNITUDE_TABLE_PATH) -> Dict[str, MagnitudeRange]:
    try:
        with open(path, "r", encoding="utf-8") as f:
            raw = json.load(f)
    except json.JSONDecodeError as e:
        raise PolicyConfigError(f"{path}:{e.lineno}:{e.colno}: {e.msg}") from e
    if raw.get("format") != "magnitudes/1":
        raise PolicyConfigError(f"{path}: unsupported magnitude table format {raw.get('format')!r}")
    if raw.get("levels", MAX_MAGNITUDE + 1) != MAX_MAGNITUDE + 1:
        raise PolicyConfigError(f"{path}: levels must be {MAX_MAGNITUDE + 1}, got {raw.get('levels')!r}")
    table = {}
    for kind, entry in raw.get("ops", {}).items():
        if kind not in OP_KINDS:
            raise PolicyConfigError(f"{path}: unknown op kind '{kind}' in magnitude table")
        table[kind] = MagnitudeRange(
            float(entry["min"]), float(entry["max"]),
            bool(entry.get("signed", False)), bool(entry.get("integer", False)),
        )
    missing = [k for k in OP_KINDS if k not in table]
    if missing:
        raise PolicyConfigError(f"{path}: magnitude table misses {', '.join(missing)}")
    return table


MAGNITUDES = load_magnitude_table()


@dataclass(frozen=True)
class PolicyOp:
    kind: str
    probability: float
    magnitude: int

    def __post_init__(self):
        if self.kind not in OP_KINDS:
            raise PolicyConfigError(f"unknown policy op kind '{self.kind}'")
        if not 0.0 <= self.probability <= 1.0:
            raise PolicyConfigError(f"{self.kind}: probability {self.probability} outside [0, 1]")
        if int(self.magnitude) != self.magnitude or not 0 <= self.magnitude <= MAX_MAGNITUDE:
            raise PolicyConfigError(f"{self.kind}: magnitude {self.magnitude} outside 0..{MAX_MAGNITUDE}")

    def as_list(self):
        return [self.kind, self.probability, self.magnitude]


@dataclass(frozen=True)
class Policy:
    sub_policies: Tuple[Tuple[PolicyOp, PolicyOp], ...]
    name: str = "policy"

    def __post_init__(self):
        if not self.sub_policies:
            raise PolicyConfigError("a policy needs at least one sub-policy")
        for i, sub in enumerate(self.sub_policies):
            if len(sub) != 2:
                raise PolicyConfigError(f"sub-policy {i} must hold exactly 2 ops, got {len(sub)}")

    @classmethod
    def from_lists(cls, sub_policies: Sequence[Sequence[Sequence]], name: str = "policy") -> "Policy":
        subs = []
        for i, sub in enumerate(sub_policies):
            try:
                subs.append(tuple(PolicyOp(str(k), float(p), int(m)) for k, p, m in sub))
            except (TypeError, ValueError) as e:
                if isinstance(e, PolicyConfigError):
                    raise PolicyConfigError(f"sub-policy {i}: {e}") from e
                raise PolicyConfigError(f"sub-policy {i}: ops must be [kind, probability, magnitude]") from e
        return cls(tuple(subs), name)

    def to_lists(self) -> List[List[list]]:
        return [[op.as_list() for op in sub] for sub in self.sub_policies]


def load_policy(path: str = DEFAULT_POLICY_PATH) -> Policy:
    try:
        with open(path, "r", encoding="utf-8") as f:
            raw = json.load(f)
    except json.JSONDecodeError as e:
        raise PolicyConfigError(f"{path}:{e.lineno}:{e.colno}: {e.msg}") from e
    if raw.get("format") != "policy/1":
        raise PolicyConfigError(f"{path}: unsupported policy format {raw.get('format')!r}")
    policy = Policy.from_lists(raw.get("sub_policies", []), raw.get("name", os.path.basename(path)))
    logger.debug(f"Loaded policy '{policy.name}' with {len(policy.sub_policies)} sub-policies")
    return policy


def to_pil(image: np.ndarray) -> Image.Image:
    channels = image.shape[0]
    quantized = np.clip(np.rint(image * 255.0), 0, 255).astype(np.uint8)
    if channels == 3:
        return Image.fromarray(np.ascontiguousarray(np.transpose(quantized, (1, 2, 0))))
    if channels == 1:
        return Image.fromarray(np.ascontiguousarray(quantized[0]))
    raise PolicyConfigError(f"policy ops need 1 or 3 channels, got {channels}")


def from_pil(img: Image.Image) -> np.ndarray:
    arr = np.asarray(img, dtype=np.float32) / np.float32(255.0)
    if arr.ndim == 2:
        return arr[None, :, :].copy()
    return np.ascontiguousarray(np.transpose(arr, (2, 0, 1)))


def _fill(img: Image.Image):
    return FILL_LEVEL if img.mode == "L" else (FILL_LEVEL,) * 3


def _affine(img: Image.Image, matrix) -> Image.Image:
    return img.transform(
        img.size, Image.Transform.AFFINE, matrix,
        resample=Image.Resampling.BILINEAR, fillcolor=_fill(img),
    )


def _apply_pil(img: Image.Image, kind: str, value: float) -> Image.Image:
    width, height = img.size
    if kind == "ShearX":
        return _affine(img, (1, value, -value * height / 2.0, 0, 1, 0))
    if kind == "ShearY":
        return _affine(img, (1, 0, 0, value, 1, -value * width / 2.0))
    if kind == "TranslateX":
        return _affine(img, (1, 0, value * width, 0, 1, 0))
    if kind == "TranslateY":
        return _affine(img, (1, 0, 0, 0, 1, value * height))
    if kind == "Rotate":
        return img.rotate(value, resample=Image.Resampling.BILINEAR, fillcolor=_fill(img))
    if kind == "Invert":
        return ImageOps.invert(img)
    if kind == "Solarize":
        return ImageOps.solarize(img, threshold=int(value))
    if kind == "Posterize":
        return ImageOps.posterize(img, int(value))
    if kind == "Contrast":
        return ImageEnhance.Contrast(img).enhance(value)
    if kind == "Color":
        return ImageEnhance.Color(img).enhance(value)
    if kind == "Brightness":
        return ImageEnhance.Brightness(img).enhance(value)
    if kind == "Sharpness":
        return ImageEnhance.Sharpness(img).enhance(value)
    if kind == "AutoContrast":
        return ImageOps.autocontrast(img)
    if kind == "Equalize":
        return ImageOps.equalize(img)
    raise PolicyConfigError(f"unknown policy op kind '{kind}'")


def apply_op(
    image: np.ndarray,
    kind: str,
    magnitude: int,
    rng: RngStream,
    trace: Optional[List[dict]] = None,
) -> np.ndarray:
    """Applies one op unconditionally at the given magnitude."""
    if kind not in OP_KINDS:
        raise PolicyConfigError(f"unknown policy op kind '{kind}'")
    rng_range = MAGNITUDES[kind]
    value = rng_range.physical(magnitude)
    if rng_range.signed and rng.child("sign").generator().random() < 0.5:
        value = -value
    if trace is not None:
        trace.append({"op": kind, "magnitude": int(magnitude), "value": value})
    if kind == "Cutout":
        return cutout(image, int(value), rng.child("cutout"))
    return from_pil(_apply_pil(to_pil(image), kind, value))


def apply_policy(
    image: np.ndarray,
    policy: Policy,
    cutout_size: int,
    rng: RngStream,
    trace: Optional[List[dict]] = None,
) -> np.ndarray:
    """Uniform sub-policy, each op with its probability, then Cutout."""
    gen = rng.child("choice").generator()
    index = int(gen.integers(len(policy.sub_policies)))
    if trace is not None:
        trace.append({"op": "sub_policy", "index": index})
    out = image
    for j, op in enumerate(policy.sub_policies[index]):
        op_rng = rng.child("op", j)
        if op_rng.child("coin").generator().random() < op.probability:
            out = apply_op(out, op.kind, op.magnitude, op_rng, trace)
    return cutout(out, cutout_size, rng.child("cutout"), trace)
