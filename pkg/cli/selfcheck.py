"""Fast verification suite behind `selfcheck`: each check prints PASS or FAIL once."""

import logging
from typing import Callable, List, Tuple

import numpy as np

from augment.mixing import beta_sample, cutmix_masks, mixup_batch
from augment.pipeline import AugPipeline, Mixup, Moderate, MixHook
from augment.policy import apply_op
from dataset.rng import RngStream
from dataset.samples import Batch, one_hot_matrix
from dataset.synthetic import SyntheticSpec, generate_synthetic
from network.gradcheck import run_gradient_checks
from network.model import ModelSpec, build_model, forward
from training.refine import DataSplits, StageConfig, refined_training
from training.schedules import Cosine, Step, lr_at

logger = logging.getLogger(__name__)

CheckResult = Tuple[bool, str]

GRADCHECK_INSTANCES = 20
GRADCHECK_TOLERANCE = 1e-3
KS_CRITICAL_001 = 1.628
BETA_DRAWS = 10_000


def check_gradients() -> CheckResult:
    result = run_gradient_checks(GRADCHECK_INSTANCES, seed=0)
    ok = result.max_rel_error < GRADCHECK_TOLERANCE and result.checked > 0
    return ok, f"max relative error {result.max_rel_error:.2e} over {result.checked} coordinates (worst: {result.worst})"


def _beta_draws(gamma: float) -> np.ndarray:
    root = RngStream(2024).child("selfcheck", "beta", int(gamma * 1000))
    return np.array([beta_sample(gamma, root.child(i)) for i in range(BETA_DRAWS)])


def check_beta_sampler() -> CheckResult:
    x = np.sort(_beta_draws(1.0))
    n = x.size
    cdf = np.arange(1, n + 1) / n
    d = max(np.max(cdf - x), np.max(x - (cdf - 1.0 / n)))
    if d >= KS_CRITICAL_001 / np.sqrt(n):
        return False, f"KS statistic {d:.4f} against Uniform(0, 1)"
    for gamma in (0.2, 0.5, 1.0):
        draws = _beta_draws(gamma)
        expected = 1.0 / (4.0 * (2.0 * gamma + 1.0))
        if abs(draws.mean() - 0.5) >= 0.02 or abs(draws.var() - expected) / expected >= 0.15:
            return False, f"gamma={gamma}: mean {draws.mean():.4f}, variance {draws.var():.5f} (expected {expected:.5f})"
    return True, f"KS {d:.4f}; moments within tolerance for gamma 0.2, 0.5, 1"


def check_cutmix_lambda() -> CheckResult:
    root = RngStream(7).child("selfcheck", "cutmix")
    for i in range(1000):
        h, w = 8 + i % 25, 8 + (i * 7) % 25
        mask, coef = cutmix_masks(h, w, root.child(i))
        if abs((1.0 - coef.lam) * h * w - mask.area) > 1e-9:
            return False, f"draw {i}: area {mask.area} vs (1 - lambda) * H * W = {(1.0 - coef.lam) * h * w}"
    return True, "mask area == (1 - lambda) * H * W on 1000 draws"


def check_policy_identities() -> CheckResult:
    image = RngStream(3).generator().random((3, 16, 16)).astype(np.float32)
    cases = {
        "Invert twice": apply_op(apply_op(image, "Invert", 0, RngStream(1)), "Invert", 0, RngStream(2)),
        "Rotate 0": apply_op(image, "Rotate", 0, RngStream(3)),
        "Posterize 8 bits": apply_op(image, "Posterize", 0, RngStream(4)),
    }
    for name, out in cases.items():
        err = float(np.abs(out - image).max())
        if err > 1.0 / 255:
            return False, f"{name}: max pixel error {err:.5f}"
    return True, "identities hold within 1/255"


def check_mix_hook_equivalence() -> CheckResult:
    spec = ModelSpec("small_convnet", 4, (3, 8, 8), (4, 4), eligible_mix_layers=(0, 1))
    model = build_model(spec, seed=1)
    root = RngStream(5).child("selfcheck", "hook")
    for i in range(10):
        gen = root.child("data", i).generator()
        batch = Batch(gen.random((6, 3, 8, 8)).astype(np.float32), one_hot_matrix(gen.integers(0, 4, 6), 4))
        mixed, info = mixup_batch(batch, 1.0, root.child("mix", i))
        expected, _ = forward(model, mixed.images, mode="eval")
        hooked, _ = forward(model, batch.images, MixHook(0, info.lam, info.perm), mode="eval")
        if not np.array_equal(expected, hooked):
            return False, f"batch {i}: hook at layer 0 differs from input Mixup"
    return True, "hook at layer 0 equals input Mixup on 10 batches"


def check_schedules() -> CheckResult:
    cases = [
        (Step(0.1, [150, 275], 0.1), 149, 0.1),
        (Step(0.1, [150, 275], 0.1), 150, 0.01),
        (Step(0.1, [150, 275], 0.1), 300, 0.001),
        (Step(0.2, [120, 240, 320], 0.2), 240, 0.008),
    ]
    for schedule, epoch, expected in cases:
        if lr_at(schedule, epoch) != expected:
            return False, f"{schedule} at epoch {epoch}: {lr_at(schedule, epoch)} != {expected}"
    cosine = Cosine(0.1, 0.0, 10)
    if abs(lr_at(cosine, 5) - 0.05) > 1e-12 or lr_at(cosine, 10) != 0.0:
        return False, "cosine midpoint or endpoint off"
    return True, "step and cosine values exact"


def check_determinism() -> CheckResult:
    train, test = generate_synthetic(SyntheticSpec(2, per_class_train=4, per_class_test=2, height=8, width=8), seed=0)
    splits = DataSplits(train, test)
    spec = ModelSpec("small_convnet", 2, (3, 8, 8), (2,), eligible_mix_layers=(0, 1))
    config = StageConfig(
        augment_epochs=1,
        refine_epochs=1,
        stage1_pipeline=AugPipeline(Moderate(0.5, 2), Mixup(1.0)),
        stage2_pipeline=AugPipeline(Moderate(0.5, 2)),
        schedule=Step(0.05, [1], 0.1),
        batch_size=4,
    )
    a = refined_training(config, splits, spec, progress=False)
    b = refined_training(config, splits, spec, progress=False)
    if a.records != b.records:
        return False, "two identical runs produced different records"
    return True, "two identical runs produced identical records"


CHECKS: List[Tuple[str, Callable[[], CheckResult]]] = [
    ("gradient_check", check_gradients),
    ("beta_sampler", check_beta_sampler),
    ("cutmix_lambda", check_cutmix_lambda),
    ("policy_identities", check_policy_identities),
    ("mix_hook_equivalence", check_mix_hook_equivalence),
    ("schedules", check_schedules),
    ("determinism", check_determinism),
]


def run_selfcheck(out=print) -> bool:
    """Runs every check once; returns True iff all pass."""
    failed = []
    for name, check in CHECKS:
        try:
            ok, detail = check()
        except Exception as e:
            ok, detail = False, f"{type(e).__name__}: {e}"
        out(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
        if not ok:
            failed.append(name)
            logger.error(f"selfcheck {name} failed: {detail}")
    if failed:
        out(f"{len(failed)} of {len(CHECKS)} checks failed: {', '.join(failed)}")
    else:
        out(f"all {len(CHECKS)} checks passed")
    return not failed
