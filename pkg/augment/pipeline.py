"""
Augmentation pipelines: moderate per-image ops followed by at most one
intensive op.

Per-sample randomness is keyed by the sample's dataset index, batch-level
randomness by the batch path, so results do not depend on how samples are
scheduled.
"""

import logging
from dataclasses import dataclass, replace
from typing import Any, Dict, List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np

from dataset.rng import RngStream
from dataset.samples import Batch

from .image_ops import hflip, pad_crop
from .mixing import (
    beta_sample,
    convex_mix,
    cutmix_batch,
    mixup_batch,
    partner_permutation,
)
from .policy import Policy, apply_policy

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Moderate:
    flip_probability: float = 0.5
    padding: int = 4

    def __post_init__(self):
        if not 0.0 <= self.flip_probability <= 1.0:
            raise ValueError(f"flip_probability must lie in [0, 1], got {self.flip_probability}")
        if self.padding < 0:
            raise ValueError(f"padding must be >= 0, got {self.padding}")

    @property
    def enabled(self) -> bool:
        return self.flip_probability > 0 or self.padding > 0


NO_MODERATE = Moderate(flip_probability=0.0, padding=0)


@dataclass(frozen=True)
class Mixup:
    gamma: float = 1.0

    def __post_init__(self):
        if not self.gamma > 0:
            raise ValueError(f"Mixup gamma must be > 0, got {self.gamma}")


@dataclass(frozen=True)
class ManifoldMixup:
    gamma: float = 1.0
    eligible_layers: Tuple[int, ...] = (0, 1)

    def __post_init__(self):
        if not self.gamma > 0:
            raise ValueError(f"Manifold Mixup gamma must be > 0, got {self.gamma}")
        if not self.eligible_layers:
            raise ValueError("Manifold Mixup needs at least one eligible layer")
        object.__setattr__(self, "eligible_layers", tuple(sorted(int(k) for k in self.eligible_layers)))


@dataclass(frozen=True)
class CutMix:
    apply_probability: float = 0.5

    def __post_init__(self):
        if not 0.0 <= self.apply_probability <= 1.0:
            raise ValueError(f"CutMix apply_probability must lie in [0, 1], got {self.apply_probability}")


@dataclass(frozen=True)
class PolicyAug:
    policy: Policy
    cutout_size: int = 16
    apply_probability: float = 1.0

    def __post_init__(self):
        if self.cutout_size < 0:
            raise ValueError(f"cutout_size must be >= 0, got {self.cutout_size}")
        if not 0.0 <= self.apply_probability <= 1.0:
            raise ValueError(f"PolicyAug apply_probability must lie in [0, 1], got {self.apply_probability}")


Intensive = Union[Mixup, ManifoldMixup, CutMix, PolicyAug]


@dataclass(frozen=True)
class MixHook:
    """Instruction to mix activations at mix point `layer` inside the network."""

    layer: int
    lam: float
    perm: np.ndarray


class AugmentedBatch(NamedTuple):
    batch: Batch
    hook: Optional[MixHook]
    log: Optional[Dict[str, Any]]


@dataclass(frozen=True)
class AugPipeline:
    moderate: Moderate = Moderate()
    intensive: Optional[Intensive] = None
    intensity_scale: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.intensity_scale <= 1.0:
            raise ValueError(f"intensity_scale must lie in [0, 1], got {self.intensity_scale}")
        if self.intensive is None:
            object.__setattr__(self, "intensity_scale", 0.0)

    @property
    def method(self) -> str:
        if self.intensive is None:
            return "moderate" if self.moderate.enabled else "clean"
        return {
            Mixup: "mixup",
            ManifoldMixup: "manifold_mixup",
            CutMix: "cutmix",
            PolicyAug: "autoaugment",
        }[type(self.intensive)]

    def moderate_only(self) -> "AugPipeline":
        return AugPipeline(self.moderate, None)

    def describe(self) -> Dict[str, Any]:
        desc: Dict[str, Any] = {
            "method": self.method,
            "flip_probability": self.moderate.flip_probability,
            "padding": self.moderate.padding,
            "intensity_scale": self.intensity_scale,
        }
        op = self.intensive
        if isinstance(op, (Mixup, ManifoldMixup)):
            desc["gamma"] = op.gamma
        if isinstance(op, ManifoldMixup):
            desc["eligible_layers"] = list(op.eligible_layers)
        if isinstance(op, CutMix):
            desc["apply_probability"] = op.apply_probability
        if isinstance(op, PolicyAug):
            desc.update(policy=op.policy.name, cutout_size=op.cutout_size, apply_probability=op.apply_probability)
        return desc

    def _per_sample(self, image: np.ndarray, rng: RngStream, trace: Optional[List[dict]]) -> np.ndarray:
        out = pad_crop(image, self.moderate.padding, rng.child("crop"), trace)
        if self.moderate.flip_probability > 0:
            out = hflip(out, self.moderate.flip_probability, rng.child("flip"), trace)
        op = self.intensive
        if isinstance(op, PolicyAug):
            coin = rng.child("policy_coin").generator().random()
            if coin < op.apply_probability:
                out = apply_policy(out, op.policy, op.cutout_size, rng.child("policy"), trace)
        return out

    def apply(
        self,
        batch: Batch,
        indices: Sequence[int],
        rng: RngStream,
        trace: bool = False,
    ) -> AugmentedBatch:
        """
        Augments one minibatch.

        `indices` are the dataset indices of the batch rows; per-sample ops
        draw from rng.child("sample", index). Manifold Mixup leaves the images
        untouched and returns a MixHook for the network instead.
        """
        log: Optional[Dict[str, Any]] = {"samples": [], "batch": None} if trace else None
        if self.moderate.enabled or isinstance(self.intensive, PolicyAug):
            images = []
            for row, index in enumerate(indices):
                sample_trace = [] if trace else None
                images.append(self._per_sample(batch.images[row], rng.child("sample", int(index)), sample_trace))
                if trace:
                    log["samples"].append(sample_trace)
            batch = Batch(np.stack(images).astype(batch.images.dtype, copy=False), batch.labels)
        elif trace:
            log["samples"] = [[] for _ in indices]

        hook = None
        op = self.intensive
        batch_rng = rng.child("batch")
        if isinstance(op, Mixup):
            batch, info = mixup_batch(batch, op.gamma, batch_rng)
            if trace:
                log["batch"] = {"op": "mixup", "lambda": info.lam, "perm": info.perm.tolist()}
        elif isinstance(op, CutMix):
            batch, info = cutmix_batch(batch, op.apply_probability, batch_rng)
            if trace:
                log["batch"] = None if info is None else {
                    "op": "cutmix", "lambda": info.lam, "perm": info.perm.tolist(), "mask": info.mask.as_dict(),
                }
        elif isinstance(op, ManifoldMixup):
            gen = batch_rng.child("layer").generator()
            layer = op.eligible_layers[int(gen.integers(len(op.eligible_layers)))]
            lam = beta_sample(op.gamma, batch_rng.child("lambda"))
            perm = partner_permutation(batch.images.shape[0], batch_rng.child("perm"))
            hook = MixHook(layer, lam, perm)
            batch = Batch(batch.images, convex_mix(batch.labels, lam, perm))
            if trace:
                log["batch"] = {"op": "manifold_mixup", "layer": layer, "lambda": lam, "perm": perm.tolist()}
        return AugmentedBatch(batch, hook, log)


def weaken_intensity(pipeline: AugPipeline, scale: float) -> AugPipeline:
    """
    Scales the intensive op: gamma for the Mixup family, apply probability for
    CutMix and policies. scale=0 yields the moderate-only pipeline.
    """
    if not 0.0 <= scale <= 1.0:
        raise ValueError(f"scale must lie in [0, 1], got {scale}")
    if scale == 1.0:
        return pipeline
    op = pipeline.intensive
    if scale == 0.0 or op is None:
        return pipeline.moderate_only()
    if isinstance(op, (Mixup, ManifoldMixup)):
        weakened = replace(op, gamma=op.gamma * scale)
    else:
        weakened = replace(op, apply_probability=op.apply_probability * scale)
    return AugPipeline(pipeline.moderate, weakened, pipeline.intensity_scale * scale)
