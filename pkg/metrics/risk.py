"""
Empirical risk on clean and augmented training data.

The clean pass is shared with evaluate(): same batching, same float64
accumulation, so the Identity risk and the evaluation loss are the same
number.
"""

import logging
from typing import Optional, Tuple, Union

import numpy as np

from augment.pipeline import AugPipeline
from dataset.batching import epoch_batches, sequential_batches
from dataset.rng import RngStream
from dataset.samples import Dataset
from network.loss import soft_ce_per_sample
from network.model import Model, forward

from .records import EpochRecord

logger = logging.getLogger(__name__)

EVAL_BATCH_SIZE = 256


class Identity:
    """No augmentation: the clean training distribution."""

    def __repr__(self):
        return "IDENTITY"


IDENTITY = Identity()


def clean_pass(model: Model, dataset: Dataset, batch_size: int = EVAL_BATCH_SIZE) -> Tuple[float, float]:
    """Eval-mode (mean cross-entropy, top-1 accuracy). Ties in argmax go to the lowest class index."""
    if len(dataset) == 0:
        raise ValueError(f"dataset '{dataset.name}' is empty")
    total_loss = 0.0
    correct = 0
    for idx in sequential_batches(len(dataset), batch_size):
        batch = dataset.batch(idx)
        logits, _ = forward(model, batch.images, mode="eval")
        total_loss += float(soft_ce_per_sample(logits, batch.labels).sum())
        correct += int(np.sum(np.argmax(logits, axis=1) == np.argmax(batch.labels, axis=1)))
    n = len(dataset)
    return total_loss / n, correct / n


def empirical_risk(
    model: Model,
    dataset: Dataset,
    pipeline: Union[AugPipeline, Identity, None],
    rng: Optional[RngStream] = None,
    batch_size: int = EVAL_BATCH_SIZE,
) -> float:
    """
    Mean loss of an eval-mode model over `dataset`.

    With IDENTITY (or None) this is the clean risk and needs no rng. With a
    pipeline it draws one augmented epoch from `rng` and averages the
    soft-label loss, a one-epoch Monte-Carlo estimate of the augmented risk.
    `batch_size` matters for batch-level ops (Mixup pairs within a batch).
    """
    if pipeline is None or isinstance(pipeline, Identity):
        return clean_pass(model, dataset)[0]
    if rng is None:
        raise ValueError("augmented risk needs an RngStream")
    if len(dataset) == 0:
        raise ValueError(f"dataset '{dataset.name}' is empty")
    total = 0.0
    for b, idx in enumerate(epoch_batches(dataset, batch_size, rng.child("order"))):
        augmented = pipeline.apply(dataset.batch(idx), idx, rng.child("batch", b))
        logits, _ = forward(model, augmented.batch.images, augmented.hook, mode="eval")
        total += float(soft_ce_per_sample(logits, augmented.batch.labels).sum())
    return total / len(dataset)


def risk_gap(risk_aug: float, risk_clean: float) -> float:
    return abs(risk_aug - risk_clean)


def gap(record: EpochRecord) -> float:
    """
    |risk_aug - risk_clean| of one record. A measurable proxy for the
    distribution gap between augmented and clean data, not the gap itself.
    """
    return risk_gap(record.risk_aug, record.risk_clean)
