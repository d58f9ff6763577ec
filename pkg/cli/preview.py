"""
Writes a handful of augmented training images as binary PPM files plus a
preview.jsonl sidecar describing how each one was produced.
"""

import json
import logging
import os
from typing import Any, Dict, List

import numpy as np

from augment.pipeline import AugPipeline
from augment.policy import to_pil
from dataset.rng import RngStream
from dataset.samples import Dataset

logger = logging.getLogger(__name__)

SIDECAR_NAME = "preview.jsonl"


def write_ppm(image: np.ndarray, path: str) -> None:
    """(C, H, W) float image in [0, 1] -> binary P6; grayscale is expanded to RGB."""
    to_pil(image).convert("RGB").save(path, format="PPM")


def preview_augmentations(
    pipeline: AugPipeline, dataset: Dataset, count: int, out_dir: str, seed: int = 0
) -> List[Dict[str, Any]]:
    """
    Augments `count` training images as one batch and writes them to `out_dir`.

    Args:
        pipeline: Pipeline to preview
        dataset: Source images, picked at random without replacement
        count: Number of images; 0 leaves the directory empty
        out_dir: Output directory for the PPM files and sidecar
        seed: Seed for the pick and the augmentation

    Returns:
        Sidecar entries, one per written image
    """
    if count < 0:
        raise ValueError(f"count must be >= 0, got {count}")
    os.makedirs(out_dir, exist_ok=True)
    if count == 0:
        return []
    count = min(count, len(dataset))
    rng = RngStream(seed).child("preview")
    indices = rng.child("pick").generator().permutation(len(dataset))[:count]
    augmented = pipeline.apply(dataset.batch(indices), indices, rng.child("augment"), trace=True)

    batch_log = augmented.log["batch"]
    entries = []
    for row, index in enumerate(indices):
        file_name = f"preview_{row:04d}.ppm"
        write_ppm(augmented.batch.images[row], os.path.join(out_dir, file_name))
        entry: Dict[str, Any] = {
            "file": file_name,
            "dataset_index": int(index),
            "source_class": int(np.argmax(dataset.labels[index])),
            "ops": augmented.log["samples"][row],
            "label": augmented.batch.labels[row].tolist(),
            "method": pipeline.method,
        }
        if batch_log is not None:
            entry["batch_op"] = batch_log["op"]
            entry["lambda"] = batch_log["lambda"]
            partner = batch_log["perm"][row]
            entry["partner_index"] = int(indices[partner])
            if "mask" in batch_log:
                entry["mask"] = batch_log["mask"]
            if "layer" in batch_log:
                entry["layer"] = batch_log["layer"]
        entries.append(entry)

    with open(os.path.join(out_dir, SIDECAR_NAME), "w", encoding="utf-8") as f:
        for entry in entries:
            f.write(json.dumps(entry) + "\n")
    logger.info(f"wrote {len(entries)} preview images to {out_dir}")
    return entries
