"""
Two-stage refined training.

Stage 1 trains N epochs on the augmented distribution (moderate + intensive
ops) under the stage-1 schedule. Stage 2 refines M more epochs with the
intensive op removed (or, in gradual mode, weakened linearly to zero) at the
refinement learning rate.

All randomness hangs off RngStream(seed).child("run") and is keyed by the
absolute epoch number, so stage boundaries do not shift the streams.
"""

import logging
import os
import time
from dataclasses import dataclass, field, replace
from typing import Any, Dict, List, NamedTuple, Optional, Sequence, Union

import numpy as np
from tqdm import tqdm

from augment.pipeline import AugPipeline, weaken_intensity
from dataset.batching import epoch_batches
from dataset.rng import RngStream
from dataset.samples import Dataset
from metrics.records import EpochRecord
from metrics.report import RunSummary
from metrics.risk import IDENTITY, clean_pass, empirical_risk
from network.checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from network.loss import NumericError, soft_ce_loss
from network.model import Model, ModelSpec, backward, build_model, forward
from network.optim import OptimState, sgd_step

from .schedules import LrSchedule, lr_at, schedule_to_dict

logger = logging.getLogger(__name__)

CODE_VERSION = "1.0.0"
FIXED_LR_DIVISOR = 1000.0


class TrainingAbort(RuntimeError):
    def __init__(self, message: str, epoch: int, batch_index: int, lr: float):
        super().__init__(message)
        self.epoch = epoch
        self.batch_index = batch_index
        self.lr = lr

    def __reduce__(self):
        # Keeps the diagnostics when the error crosses a worker-process boundary.
        return type(self), (str(self), self.epoch, self.batch_index, self.lr)


class DataSplits(NamedTuple):
    train: Dataset
    test: Dataset


@dataclass(frozen=True)
class ContinueFinal:
    """Refine at the last stage-1 learning rate, held constant."""


@dataclass(frozen=True)
class FixedLr:
    """A small constant; None means the initial stage-1 rate / 1000."""

    lr: Optional[float] = None

    def __post_init__(self):
        if self.lr is not None and not self.lr > 0:
            raise ValueError(f"fixed refinement lr must be > 0, got {self.lr}")


@dataclass(frozen=True)
class CosineRestart:
    """Restart at `lr` when refinement begins and cosine-decay to lr_min over the M epochs."""

    lr: float
    lr_min: float = 0.0

    def __post_init__(self):
        if not self.lr > 0 or not 0.0 <= self.lr_min <= self.lr:
            raise ValueError(f"cosine restart needs lr > 0 and 0 <= lr_min <= lr, got {self.lr}, {self.lr_min}")


RefineLrRule = Union[ContinueFinal, FixedLr, CosineRestart]


def refine_rule_to_dict(rule: RefineLrRule) -> Dict[str, Any]:
    if isinstance(rule, ContinueFinal):
        return {"kind": "continue_final"}
    if isinstance(rule, FixedLr):
        return {"kind": "fixed", "lr": rule.lr}
    return {"kind": "cosine_restart", "lr": rule.lr, "lr_min": rule.lr_min}


def refine_rule_from_dict(d: Dict[str, Any]) -> RefineLrRule:
    d = dict(d)
    kind = d.pop("kind", None)
    if kind == "continue_final":
        return ContinueFinal()
    if kind == "fixed":
        return FixedLr(**d)
    if kind == "cosine_restart":
        return CosineRestart(**d)
    raise ValueError(f"unknown refinement lr rule {kind!r}")


def initial_lr(schedule: LrSchedule) -> float:
    return lr_at(schedule, 0)


def refinement_lr(config: "StageConfig", m: int) -> float:
    """Learning rate of refinement epoch m (0-based within stage 2)."""
    rule = config.refine_lr
    if isinstance(rule, ContinueFinal):
        return lr_at(config.schedule, max(config.augment_epochs - 1, 0))
    if isinstance(rule, FixedLr):
        return rule.lr if rule.lr is not None else initial_lr(config.schedule) / FIXED_LR_DIVISOR
    cos = np.cos(np.pi * m / config.refine_epochs)
    return float(rule.lr_min + 0.5 * (rule.lr - rule.lr_min) * (1.0 + cos))


@dataclass(frozen=True)
class StageConfig:
    augment_epochs: int
    refine_epochs: int
    stage1_pipeline: AugPipeline
    stage2_pipeline: AugPipeline
    schedule: LrSchedule
    refine_lr: RefineLrRule = ContinueFinal()
    batch_size: int = 128
    seed: int = 0
    eval_every: int = 1
    momentum: float = 0.9
    weight_decay: float = 1e-4
    gradual: bool = False
    log_wall_time: bool = False

    def __post_init__(self):
        n, m = self.augment_epochs, self.refine_epochs
        if n < 0 or m < 0 or n + m < 1:
            raise ValueError(f"need N >= 0, M >= 0 and N + M >= 1, got N={n}, M={m}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.eval_every < 1:
            raise ValueError(f"eval_every must be >= 1, got {self.eval_every}")
        if self.stage2_pipeline.intensive is not None:
            raise ValueError("stage-2 pipeline must not contain an intensive op (gradual mode derives it from stage 1)")
        if self.gradual and m < 1:
            raise ValueError("gradual weakening needs at least one refinement epoch")

    @property
    def total_epochs(self) -> int:
        return self.augment_epochs + self.refine_epochs

    def stage_of(self, epoch: int) -> str:
        return "augment" if epoch <= self.augment_epochs else "refine"

    def lr_for(self, epoch: int) -> float:
        """Learning rate of 1-based training epoch `epoch`."""
        if epoch <= self.augment_epochs:
            return lr_at(self.schedule, epoch - 1)
        return refinement_lr(self, epoch - self.augment_epochs - 1)

    def pipeline_for(self, epoch: int) -> AugPipeline:
        if epoch <= self.augment_epochs:
            return self.stage1_pipeline
        if not self.gradual:
            return self.stage2_pipeline
        m = epoch - self.augment_epochs
        base = AugPipeline(self.stage2_pipeline.moderate, self.stage1_pipeline.intensive)
        return weaken_intensity(base, 1.0 - m / self.refine_epochs)

    def describe(self) -> Dict[str, Any]:
        return {
            "augment_epochs": self.augment_epochs,
            "refine_epochs": self.refine_epochs,
            "stage1_pipeline": self.stage1_pipeline.describe(),
            "stage2_pipeline": self.stage2_pipeline.describe(),
            "schedule": schedule_to_dict(self.schedule),
            "refine_lr": refine_rule_to_dict(self.refine_lr),
            "batch_size": self.batch_size,
            "seed": self.seed,
            "eval_every": self.eval_every,
            "momentum": self.momentum,
            "weight_decay": self.weight_decay,
            "gradual": self.gradual,
            "log_wall_time": self.log_wall_time,
        }


@dataclass
class RunResult:
    records: List[EpochRecord]
    model: Model
    best_epoch: int
    best_test_acc: float
    best_state: Optional[Dict[str, np.ndarray]]
    manifest: Dict[str, Any]
    final_path: Optional[str] = None
    best_path: Optional[str] = None

    @property
    def method(self) -> str:
        return self.manifest["method"]

    def best_model(self) -> Model:
        model = build_model(self.model.spec)
        model.load_state_dict(self.best_state)
        return model

    def summary(self, name: Optional[str] = None) -> RunSummary:
        return RunSummary(name or f"seed_{self.manifest['seed']}", self.method, tuple(self.records))


class EvalResult(NamedTuple):
    loss: float
    top1_accuracy: float


def evaluate(model: Model, dataset: Dataset) -> EvalResult:
    """Eval-mode hard-label loss and top-1 accuracy, no augmentation."""
    loss, acc = clean_pass(model, dataset)
    return EvalResult(loss, acc)


def train_epoch(
    model: Model,
    dataset: Dataset,
    pipeline: AugPipeline,
    lr: float,
    optim: OptimState,
    rng: RngStream,
    batch_size: int = 128,
    epoch: int = 0,
) -> float:
    """
    One pass over `dataset` in seeded batch order. Returns the mean training
    loss on the augmented batches. A non-finite loss raises TrainingAbort
    before the offending step is applied.
    """
    if not lr >= 0:
        raise ValueError(f"learning rate must be >= 0, got {lr}")
    optim.learning_rate = lr
    total, count = 0.0, 0
    for b, idx in enumerate(epoch_batches(dataset, batch_size, rng.child("order"))):
        augmented = pipeline.apply(dataset.batch(idx), idx, rng.child("batch", b))
        try:
            logits, trace = forward(model, augmented.batch.images, augmented.hook, "train", rng.child("net", b))
            loss = soft_ce_loss(logits, augmented.batch.labels)
        except NumericError as e:
            raise TrainingAbort(f"epoch {epoch} batch {b}: {e} at lr={lr}", epoch, b, lr) from e
        if not np.isfinite(loss):
            raise TrainingAbort(f"epoch {epoch} batch {b}: non-finite loss {loss} at lr={lr}", epoch, b, lr)
        grads = backward(model, trace, augmented.batch.labels)
        sgd_step(model, grads, optim)
        total += loss * len(idx)
        count += len(idx)
    return total / count


def _measure(
    model: Model, config: StageConfig, datasets: DataSplits, rng: RngStream, epoch: int
) -> Dict[str, float]:
    risk_aug = empirical_risk(
        model, datasets.train, config.stage1_pipeline, rng.child("measure", epoch), config.batch_size
    )
    risk_clean = empirical_risk(model, datasets.train, IDENTITY)
    test = evaluate(model, datasets.test)
    return {"risk_aug": risk_aug, "risk_clean": risk_clean, "test_loss": test.loss, "test_acc": test.top1_accuracy}


def build_manifest(config: StageConfig, spec: ModelSpec, datasets: DataSplits) -> Dict[str, Any]:
    return {
        "code_version": CODE_VERSION,
        "method": config.stage1_pipeline.method,
        "seed": config.seed,
        "stage": config.describe(),
        "model": spec.to_dict(),
        "train_set": {"name": datasets.train.name, "size": len(datasets.train)},
        "test_set": {"name": datasets.test.name, "size": len(datasets.test)},
        "notes": {
            "batch_norm_refinement": "running statistics keep updating in train mode during refinement",
            "milestones": "schedule milestones are fixed relative to epoch 0 whatever N is",
            "fixed_lr_default": f"FixedLr without a value uses the initial rate / {FIXED_LR_DIVISOR:g}",
            "risk_aug_estimator": "one fresh eval-mode augmented epoch per measurement on its own RNG path",
        },
    }


def refined_training(
    config: StageConfig,
    datasets: DataSplits,
    spec: ModelSpec,
    out_dir: Optional[str] = None,
    resume_from: Optional[str] = None,
    progress: bool = True,
) -> RunResult:
    """
    Runs both stages: N augmented epochs, then M refinement epochs.

    Args:
        config: Stage lengths, schedule, pipelines and seed
        datasets: Train and test splits
        spec: Model to build
        out_dir: Where last.npz (rewritten every epoch), best.npz and final.npz go
        resume_from: A last.npz to continue from
        progress: Show a tqdm bar

    Returns:
        RunResult with every EpochRecord (epoch-0 baseline first), the final
        model and the best-by-test-accuracy state
    """
    rng = RngStream(config.seed).child("run")
    manifest = build_manifest(config, spec, datasets)
    best_path = os.path.join(out_dir, "best.npz") if out_dir else None
    last_path = os.path.join(out_dir, "last.npz") if out_dir else None
    final_path = os.path.join(out_dir, "final.npz") if out_dir else None

    if resume_from is not None:
        checkpoint = load_checkpoint(resume_from)
        model, optim, records, start, best_epoch, best_acc = _resume_state(checkpoint, config, spec)
        best_state = None
        if best_path and os.path.exists(best_path):
            best_state = load_checkpoint(best_path).model.state_dict()
        logger.info(f"resuming seed {config.seed} after epoch {start - 1}")
    else:
        model = build_model(spec, seed=config.seed)
        optim = OptimState(initial_lr(config.schedule), config.momentum, config.weight_decay)
        baseline = _measure(model, config, datasets, rng, 0)
        records = [EpochRecord(0, "init", 0.0, intensity_scale=config.stage1_pipeline.intensity_scale, **baseline)]
        start, best_epoch, best_acc, best_state = 1, 0, baseline["test_acc"], model.state_dict()
        if best_path:
            save_checkpoint(best_path, model, optim, epoch=0, seed=config.seed, test_acc=best_acc)

    measured = dict((k, getattr(records[-1], k)) for k in ("risk_aug", "risk_clean", "test_loss", "test_acc"))
    epochs = tqdm(range(start, config.total_epochs + 1), desc=f"seed {config.seed}", disable=not progress)
    for epoch in epochs:
        started = time.perf_counter()
        stage = config.stage_of(epoch)
        lr = config.lr_for(epoch)
        pipeline = config.pipeline_for(epoch)
        try:
            train_loss = train_epoch(
                model, datasets.train, pipeline, lr, optim, rng.child("train", epoch), config.batch_size, epoch
            )
        except TrainingAbort as e:
            logger.error(f"training aborted at epoch {e.epoch}, batch {e.batch_index}, lr={e.lr}: {e}")
            raise

        if epoch % config.eval_every == 0 or epoch in (config.augment_epochs, config.total_epochs):
            measured = _measure(model, config, datasets, rng, epoch)
        elapsed = time.perf_counter() - started
        record = EpochRecord(
            epoch,
            stage,
            lr,
            intensity_scale=pipeline.intensity_scale,
            wall_seconds=elapsed if config.log_wall_time else 0.0,
            **measured,
        )
        records.append(record)
        logger.info(
            f"seed {config.seed} epoch {epoch} [{stage}] lr={lr:.6g} train_loss={train_loss:.4f} "
            f"risk_aug={record.risk_aug:.4f} risk_clean={record.risk_clean:.4f} "
            f"test_loss={record.test_loss:.4f} test_acc={record.test_acc:.4f} ({elapsed:.1f}s)"
        )

        if record.test_acc > best_acc:
            best_epoch, best_acc, best_state = epoch, record.test_acc, model.state_dict()
            if best_path:
                save_checkpoint(best_path, model, optim, epoch=epoch, seed=config.seed, test_acc=best_acc)
        if last_path:
            save_checkpoint(
                last_path,
                model,
                optim,
                epoch=epoch,
                seed=config.seed,
                records=[r.as_dict() for r in records],
                best_epoch=best_epoch,
                best_test_acc=best_acc,
            )

    if final_path:
        save_checkpoint(final_path, model, optim, epoch=config.total_epochs, seed=config.seed)
    manifest["best_epoch"] = best_epoch
    manifest["best_test_acc"] = best_acc
    return RunResult(records, model, best_epoch, best_acc, best_state, manifest, final_path, best_path)


def _resume_state(checkpoint: Checkpoint, config: StageConfig, spec: ModelSpec):
    meta = checkpoint.meta
    if meta.get("seed") != config.seed:
        raise ValueError(f"checkpoint seed {meta.get('seed')} does not match run seed {config.seed}")
    if checkpoint.model.spec != spec:
        raise ValueError("checkpoint model spec differs from the configured model")
    if "records" not in meta:
        raise ValueError("checkpoint carries no run records; resume needs a last.npz")
    records = [EpochRecord.from_dict(d) for d in meta["records"]]
    optim = checkpoint.optim or OptimState(initial_lr(config.schedule), config.momentum, config.weight_decay)
    optim.momentum, optim.weight_decay = config.momentum, config.weight_decay
    return checkpoint.model, optim, records, int(meta["epoch"]) + 1, int(meta["best_epoch"]), float(meta["best_test_acc"])


def gradual_refined_training(
    config: StageConfig,
    datasets: DataSplits,
    spec: ModelSpec,
    decay: str = "linear",
    **kwargs,
) -> RunResult:
    """refined_training with the intensive op weakened by 1 - m/M in refinement epoch m."""
    if decay != "linear":
        raise ValueError(f"only linear decay is supported, got {decay!r}")
    return refined_training(replace(config, gradual=True), datasets, spec, **kwargs)


def fixed_budget_sweep(
    config: StageConfig,
    datasets: DataSplits,
    spec: ModelSpec,
    total_epochs: int,
    refine_list: Sequence[int],
    out_dir: Optional[str] = None,
    progress: bool = True,
) -> Dict[int, RunResult]:
    """
    Runs N = total - M, M for each M in `refine_list`. The schedule is left
    as configured, so milestones stay fixed relative to epoch 0, and epochs
    below min(N) share their RNG paths across runs.

    Args:
        total_epochs: Fixed budget N + M
        refine_list: Distinct M values in 0..total_epochs, checked before any run starts
        out_dir: Parent directory; each run writes to refine_<M>

    Returns:
        RunResult per M
    """
    refine_list = list(refine_list)
    if not refine_list:
        raise ValueError("refine_list is empty")
    if len(set(refine_list)) != len(refine_list):
        raise ValueError(f"duplicate refine epochs in {refine_list}")
    bad = [m for m in refine_list if not 0 <= m <= total_epochs]
    if bad:
        raise ValueError(f"refine epochs {bad} outside 0..{total_epochs}")
    run_configs = {m: replace(config, augment_epochs=total_epochs - m, refine_epochs=m) for m in refine_list}

    results = {}
    for m in tqdm(refine_list, desc="refine sweep", disable=not progress):
        run_config = run_configs[m]
        run_dir = os.path.join(out_dir, f"refine_{m}") if out_dir else None
        if run_dir:
            os.makedirs(run_dir, exist_ok=True)
        results[m] = refined_training(run_config, datasets, spec, out_dir=run_dir, progress=progress)
        logger.info(f"sweep N={total_epochs - m} M={m}: final test_acc={results[m].records[-1].test_acc:.4f}")
    return results
