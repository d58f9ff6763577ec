"""
Model description, construction, and the forward/backward passes.

A model is a list of segments. Mix point k is the input of segment k: mix
point 0 is the raw [0, 1] image (before normalization), mix point k >= 1 is
the output of block k, so mix points run over 0..num_layers.
"""

import logging
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from augment.mixing import convex_mix, mix_images
from augment.pipeline import MixHook
from dataset.rng import RngStream

from .layers import (
    AvgPool2d,
    BatchNorm2d,
    Conv2d,
    Dense,
    Dropout,
    Flatten,
    GlobalAvgPool,
    Layer,
    Normalize,
    ReLU,
)
from .loss import soft_ce_grad
from .tensor import Tensor

logger = logging.getLogger(__name__)

MODEL_KINDS = ("mlp", "small_convnet")
DTYPES = {"float32": np.float32, "float64": np.float64}


class MixHookError(ValueError):
    pass


@dataclass(frozen=True)
class ModelSpec:
    """
    kind "mlp": `widths` are hidden layer widths.
    kind "small_convnet": `widths` are the channel widths of the conv blocks,
    one entry per block.
    """

    kind: str
    num_classes: int
    input_shape: Tuple[int, int, int]
    widths: Tuple[int, ...]
    norm_mean: Tuple[float, ...] = ()
    norm_std: Tuple[float, ...] = ()
    eligible_mix_layers: Tuple[int, ...] = (0, 1)
    drop_rate: float = 0.0
    dtype: str = "float32"

    def __post_init__(self):
        object.__setattr__(self, "input_shape", tuple(int(v) for v in self.input_shape))
        object.__setattr__(self, "widths", tuple(int(v) for v in self.widths))
        object.__setattr__(self, "eligible_mix_layers", tuple(sorted({int(v) for v in self.eligible_mix_layers})))
        channels = self.input_shape[0] if self.input_shape else 0
        if not self.norm_mean:
            object.__setattr__(self, "norm_mean", (0.0,) * channels)
        if not self.norm_std:
            object.__setattr__(self, "norm_std", (1.0,) * channels)
        object.__setattr__(self, "norm_mean", tuple(float(v) for v in self.norm_mean))
        object.__setattr__(self, "norm_std", tuple(float(v) for v in self.norm_std))
        self.validate()

    @property
    def num_layers(self) -> int:
        return len(self.widths)

    def validate(self) -> None:
        if self.kind not in MODEL_KINDS:
            raise ValueError(f"unknown model kind {self.kind!r}, expected one of {MODEL_KINDS}")
        if self.num_classes < 2:
            raise ValueError(f"num_classes must be >= 2, got {self.num_classes}")
        if len(self.input_shape) != 3 or min(self.input_shape) < 1:
            raise ValueError(f"input_shape must be (C, H, W), got {self.input_shape}")
        if any(w < 1 for w in self.widths):
            raise ValueError(f"widths must be positive, got {self.widths}")
        c, h, w = self.input_shape
        if len(self.norm_mean) != c or len(self.norm_std) != c:
            raise ValueError(f"normalization constants need {c} entries per channel")
        if any(s <= 0 for s in self.norm_std):
            raise ValueError(f"norm_std must be positive, got {self.norm_std}")
        if self.kind == "small_convnet":
            if not self.widths:
                raise ValueError("small_convnet needs at least one block")
            factor = 2 ** len(self.widths)
            if h % factor or w % factor:
                raise ValueError(f"{h}x{w} input is not divisible by {factor} for {len(self.widths)} pooling blocks")
        bad = [k for k in self.eligible_mix_layers if not 0 <= k <= self.num_layers]
        if bad:
            raise ValueError(f"eligible_mix_layers {bad} outside 0..{self.num_layers}")
        if not 0.0 <= self.drop_rate < 1.0:
            raise ValueError(f"drop_rate must lie in [0, 1), got {self.drop_rate}")
        if self.dtype not in DTYPES:
            raise ValueError(f"dtype must be one of {sorted(DTYPES)}, got {self.dtype!r}")

    def to_dict(self) -> Dict[str, Any]:
        d = asdict(self)
        for key in ("input_shape", "widths", "norm_mean", "norm_std", "eligible_mix_layers"):
            d[key] = list(d[key])
        return d

    @classmethod
    def from_dict(cls, d: Dict[str, Any]) -> "ModelSpec":
        return cls(**d)


@dataclass
class Trace:
    """Everything backward needs from one train-mode forward."""

    caches: List[List[Any]]
    hook: Optional[MixHook]
    logits: np.ndarray

    def relu_masks(self, model: "Model") -> List[np.ndarray]:
        masks = []
        for segment, caches in zip(model.segments, self.caches):
            for layer, cache in zip(segment, caches):
                if isinstance(layer, ReLU):
                    masks.append(cache)
        return masks


class Model:
    def __init__(self, spec: ModelSpec, segments: List[List[Layer]]):
        self.spec = spec
        self.segments = segments
        self.dtype = np.dtype(DTYPES[spec.dtype])

    def named_layers(self):
        for k, segment in enumerate(self.segments):
            for i, layer in enumerate(segment):
                yield f"{k}.{i}", layer

    def parameters(self) -> Dict[str, Tensor]:
        return {
            f"{prefix}.{name}": tensor
            for prefix, layer in self.named_layers()
            for name, tensor in layer.parameters().items()
        }

    def buffers(self) -> Dict[str, np.ndarray]:
        return {
            f"{prefix}.{name}": buf
            for prefix, layer in self.named_layers()
            for name, buf in layer.buffers().items()
        }

    @property
    def num_parameters(self) -> int:
        return sum(t.size for t in self.parameters().values())

    def state_dict(self) -> Dict[str, np.ndarray]:
        state = {f"param/{k}": t.values.copy() for k, t in self.parameters().items()}
        state.update({f"buffer/{k}": b.copy() for k, b in self.buffers().items()})
        return state

    def load_state_dict(self, state: Dict[str, np.ndarray]) -> None:
        params, buffers = self.parameters(), self.buffers()
        expected = {f"param/{k}" for k in params} | {f"buffer/{k}" for k in buffers}
        if set(state) != expected:
            missing = sorted(expected - set(state))
            extra = sorted(set(state) - expected)
            raise ValueError(f"state mismatch: missing {missing}, unexpected {extra}")
        for k, t in params.items():
            value = np.asarray(state[f"param/{k}"])
            if value.shape != t.shape:
                raise ValueError(f"{k}: shape {value.shape} != {t.shape}")
            t.values = value.astype(self.dtype, copy=True)
        for k, b in buffers.items():
            value = np.asarray(state[f"buffer/{k}"])
            if value.shape != b.shape:
                raise ValueError(f"{k}: shape {value.shape} != {b.shape}")
            b[...] = value

    def zero_grad(self) -> None:
        for t in self.parameters().values():
            t.zero_grad()

    def __repr__(self):
        return f"<Model {self.spec.kind} widths={list(self.spec.widths)} params={self.num_parameters}>"


def build_model(spec: ModelSpec, seed: int = 0) -> Model:
    """Builds a freshly initialized model; weights come from RngStream(seed).child("init")."""
    dtype = DTYPES[spec.dtype]
    init = RngStream(seed).child("init")
    c, h, w = spec.input_shape

    def gen(i):
        return init.child(i).generator()

    def dropout():
        return [Dropout(spec.drop_rate)] if spec.drop_rate > 0 else []

    prefix: List[Layer] = [Normalize(spec.norm_mean, spec.norm_std, dtype)]
    blocks: List[List[Layer]] = []
    if spec.kind == "mlp":
        prefix.append(Flatten())
        fan_in = c * h * w
        for i, width in enumerate(spec.widths):
            blocks.append([Dense(fan_in, width, gen(i), dtype), ReLU()] + dropout())
            fan_in = width
        head: List[Layer] = [Dense(fan_in, spec.num_classes, gen(len(spec.widths)), dtype)]
    else:
        fan_in = c
        for i, width in enumerate(spec.widths):
            blocks.append([Conv2d(fan_in, width, gen(i), dtype), BatchNorm2d(width, dtype), ReLU(), AvgPool2d()])
            fan_in = width
        head = [GlobalAvgPool()] + dropout() + [Dense(fan_in, spec.num_classes, gen(len(spec.widths)), dtype)]

    segments = blocks + [head]
    segments[0] = prefix + segments[0]
    model = Model(spec, segments)
    logger.debug(f"built {model}")
    return model


def _check_hook(model: Model, hook: Optional[MixHook], batch_size: int) -> None:
    if hook is None:
        return
    if hook.layer not in model.spec.eligible_mix_layers:
        raise MixHookError(
            f"mix hook at layer {hook.layer} is not eligible; eligible layers are {list(model.spec.eligible_mix_layers)}"
        )
    if sorted(np.asarray(hook.perm).tolist()) != list(range(batch_size)):
        raise MixHookError(f"mix hook perm is not a permutation of the batch of {batch_size}")
    if not 0.0 <= hook.lam <= 1.0:
        raise MixHookError(f"mix hook lambda must lie in [0, 1], got {hook.lam}")


def forward(
    model: Model,
    images: np.ndarray,
    mix_hook: Optional[MixHook] = None,
    mode: str = "train",
    rng: Optional[RngStream] = None,
) -> Tuple[np.ndarray, Optional[Trace]]:
    """
    Runs the network on a (B, C, H, W) batch of [0, 1] images.

    Returns the logits and, in train mode, the Trace for backward. Train mode
    uses batch statistics in batch-norm and updates its running statistics;
    eval mode only reads them and leaves the model untouched.
    """
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    if images.ndim != 4 or tuple(images.shape[1:]) != model.spec.input_shape:
        raise ValueError(f"batch shape {images.shape} does not match model input {model.spec.input_shape}")
    _check_hook(model, mix_hook, images.shape[0])
    train = mode == "train"

    x = images
    if mix_hook is not None and mix_hook.layer == 0:
        # Same arithmetic as input-space Mixup, applied before the dtype cast.
        x = mix_images(x, mix_hook.lam, np.asarray(mix_hook.perm))
    x = x.astype(model.dtype, copy=False)

    caches: List[List[Any]] = []
    for k, segment in enumerate(model.segments):
        if mix_hook is not None and mix_hook.layer == k and k > 0:
            x = convex_mix(x, x.dtype.type(mix_hook.lam), np.asarray(mix_hook.perm))
        segment_caches = []
        for i, layer in enumerate(segment):
            x, cache = layer.forward(x, train, rng.child(k, i) if rng is not None else None)
            segment_caches.append(cache)
        caches.append(segment_caches)

    if not train:
        return x, None
    return x, Trace(caches, mix_hook, x)


def _first_parameterized(segment: List[Layer]) -> int:
    for i, layer in enumerate(segment):
        if layer.parameters():
            return i
    return len(segment)


def backward(model: Model, trace: Optional[Trace], labels: np.ndarray) -> Dict[str, np.ndarray]:
    """
    Gradients of soft_ce_loss(logits, labels) for every parameter, keyed like
    model.parameters(). Also stores them in each Tensor.grad.
    """
    if trace is None:
        raise ValueError("backward needs the trace of a train-mode forward")
    hook = trace.hook
    grads: Dict[str, np.ndarray] = {}
    d = soft_ce_grad(trace.logits, labels)
    for k in reversed(range(len(model.segments))):
        segment = model.segments[k]
        stop = _first_parameterized(segment) if k == 0 else 0
        for i in reversed(range(stop, len(segment))):
            need_dx = not (k == 0 and i == stop)
            d, layer_grads = segment[i].backward(trace.caches[k][i], d, need_dx)
            for name, g in layer_grads.items():
                grads[f"{k}.{i}.{name}"] = g
        if hook is not None and hook.layer == k and k > 0:
            lam = d.dtype.type(hook.lam)
            mixed = lam * d
            mixed[np.asarray(hook.perm)] += (1 - lam) * d
            d = mixed

    for name, tensor in model.parameters().items():
        tensor.grad = grads[name]
    return grads
