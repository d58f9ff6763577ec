"""
Finite-difference verification of the backward pass.

Coordinates whose +h or -h evaluation flips any ReLU on/off are skipped:
the loss is not differentiable across such a kink and the central difference
there says nothing about the analytic gradient.
"""

import logging
from dataclasses import dataclass
from typing import List, Optional

import numpy as np

from augment.pipeline import MixHook
from dataset.rng import RngStream

from .loss import soft_ce_loss
from .model import Model, ModelSpec, backward, build_model, forward

logger = logging.getLogger(__name__)

DEFAULT_STEP = 1e-3
ERROR_FLOOR = 1e-3


@dataclass
class GradCheckResult:
    max_rel_error: float
    checked: int
    skipped: int
    worst: Optional[str] = None


def relative_error(analytic: float, numeric: float) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), ERROR_FLOOR)


def _loss_and_pattern(model, images, labels, hook, rng):
    logits, trace = forward(model, images, hook, "train", rng)
    return soft_ce_loss(logits, labels), trace.relu_masks(model)


def _same_pattern(a: List[np.ndarray], b: List[np.ndarray]) -> bool:
    return all(np.array_equal(x, y) for x, y in zip(a, b))


def gradient_check(
    model: Model,
    images: np.ndarray,
    labels: np.ndarray,
    step: float = DEFAULT_STEP,
    mix_hook: Optional[MixHook] = None,
    rng: Optional[RngStream] = None,
) -> GradCheckResult:
    """
    Compares backward() against central differences over every parameter
    coordinate. Run it on a float64 model; batch-norm running statistics are
    touched by the extra forwards but never influence train-mode outputs.
    """
    rng = rng or RngStream(0).child("gradcheck")
    logits, trace = forward(model, images, mix_hook, "train", rng)
    base_pattern = trace.relu_masks(model)
    grads = backward(model, trace, labels)

    worst, worst_name, checked, skipped = 0.0, None, 0, 0
    for name, tensor in model.parameters().items():
        flat = tensor.values.reshape(-1)
        analytic = grads[name].reshape(-1)
        for i in range(flat.size):
            original = flat[i]
            flat[i] = original + step
            plus, plus_pattern = _loss_and_pattern(model, images, labels, mix_hook, rng)
            flat[i] = original - step
            minus, minus_pattern = _loss_and_pattern(model, images, labels, mix_hook, rng)
            flat[i] = original
            if not (_same_pattern(base_pattern, plus_pattern) and _same_pattern(base_pattern, minus_pattern)):
                skipped += 1
                continue
            numeric = (plus - minus) / (2 * step)
            err = relative_error(float(analytic[i]), numeric)
            checked += 1
            if err > worst:
                worst, worst_name = err, f"{name}[{i}]"
    return GradCheckResult(worst, checked, skipped, worst_name)


def random_instance(rng: RngStream, kind: str):
    """
    A tiny float64 model with a random batch, soft labels and, half of the
    time, a mix hook. MLPs stay at or below 500 parameters, one-block conv
    nets at or below 2000.
    """
    gen = rng.generator()
    num_classes = int(gen.integers(2, 5))
    if kind == "mlp":
        channels, side = int(gen.integers(1, 3)), int(gen.integers(2, 5))
        hidden = int(gen.integers(3, 9))
        widths = (hidden,)
        eligible = (0, 1)
    else:
        channels, side = int(gen.integers(1, 4)), 2 * int(gen.integers(2, 4))
        widths = (int(gen.integers(2, 7)),)
        eligible = (0, 1)
    spec = ModelSpec(
        kind=kind,
        num_classes=num_classes,
        input_shape=(channels, side, side),
        widths=widths,
        norm_mean=tuple(gen.uniform(0.3, 0.7, channels)),
        norm_std=tuple(gen.uniform(0.2, 0.4, channels)),
        eligible_mix_layers=eligible,
        dtype="float64",
    )
    model = build_model(spec, seed=int(gen.integers(2**31)))
    limit = 500 if kind == "mlp" else 2000
    if model.num_parameters > limit:
        raise AssertionError(f"random {kind} instance has {model.num_parameters} > {limit} parameters")

    batch_size = int(gen.integers(2, 6))
    images = gen.random((batch_size,) + spec.input_shape)
    labels = gen.dirichlet(np.ones(num_classes), size=batch_size)
    hook = None
    if gen.random() < 0.5:
        hook = MixHook(int(gen.choice(eligible)), float(gen.uniform(0.1, 0.9)), gen.permutation(batch_size))
    return model, images, labels, hook


def run_gradient_checks(count: int = 100, seed: int = 0) -> GradCheckResult:
    """Checks `count` random instances, alternating MLP and conv nets; returns the worst."""
    root = RngStream(seed).child("gradcheck")
    total_checked, total_skipped = 0, 0
    worst = GradCheckResult(0.0, 0, 0)
    for i in range(count):
        kind = "mlp" if i % 2 == 0 else "small_convnet"
        model, images, labels, hook = random_instance(root.child(i), kind)
        result = gradient_check(model, images, labels, mix_hook=hook)
        total_checked += result.checked
        total_skipped += result.skipped
        if result.max_rel_error >= worst.max_rel_error:
            worst = GradCheckResult(result.max_rel_error, 0, 0, f"instance {i} ({kind}) {result.worst}")
    logger.info(f"gradient check: {count} instances, {total_checked} coordinates, {total_skipped} skipped at kinks")
    return GradCheckResult(worst.max_rel_error, total_checked, total_skipped, worst.worst)
