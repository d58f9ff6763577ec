"""
Checkpoints are .npz archives without pickled objects: one array per
parameter, batch-norm buffer and momentum buffer, plus a JSON metadata string
under "__meta__" (format version, ModelSpec, optimizer hyper-parameters and
whatever run state the caller adds).

Random streams are derived from (seed, path), so seed and epoch in the
metadata are all the RNG state a resume needs.
"""

import json
import logging
import os
import zipfile
from dataclasses import dataclass
from typing import Any, Dict, Optional

import numpy as np

from .model import Model, ModelSpec, build_model
from .optim import OptimState

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "refine-lab-checkpoint"
CHECKPOINT_VERSION = 1
META_KEY = "__meta__"


class CheckpointError(IOError):
    pass


@dataclass
class Checkpoint:
    model: Model
    optim: Optional[OptimState]
    meta: Dict[str, Any]


def save_checkpoint(path: str, model: Model, optim: Optional[OptimState] = None, **extra) -> None:
    meta = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "spec": model.spec.to_dict(),
        "optim": optim.hyperparameters() if optim is not None else None,
        **extra,
    }
    arrays = model.state_dict()
    if optim is not None:
        arrays.update({f"velocity/{k}": v for k, v in optim.velocity.items()})
    arrays[META_KEY] = np.array(json.dumps(meta))

    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    tmp_path = path + ".tmp"
    with open(tmp_path, "wb") as f:
        np.savez(f, **arrays)
    os.replace(tmp_path, path)
    logger.debug(f"saved checkpoint {path}")


def load_checkpoint(path: str) -> Checkpoint:
    try:
        with np.load(path, allow_pickle=False) as archive:
            arrays = {k: archive[k] for k in archive.files}
    except FileNotFoundError as e:
        raise CheckpointError(f"checkpoint not found: {path}") from e
    except (OSError, ValueError, zipfile.BadZipFile, EOFError) as e:
        raise CheckpointError(f"unreadable checkpoint {path}: {e}") from e

    if META_KEY not in arrays:
        raise CheckpointError(f"{path}: missing metadata entry")
    try:
        meta = json.loads(str(arrays.pop(META_KEY)))
    except json.JSONDecodeError as e:
        raise CheckpointError(f"{path}: corrupted metadata: {e}") from e
    if meta.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"{path}: not a checkpoint of this tool (format={meta.get('format')!r})")
    if meta.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"{path}: checkpoint version {meta.get('version')} is not supported (expected {CHECKPOINT_VERSION})"
        )

    try:
        spec = ModelSpec.from_dict(meta["spec"])
        model = build_model(spec)
        model.load_state_dict({k: v for k, v in arrays.items() if not k.startswith("velocity/")})
    except (KeyError, TypeError, ValueError) as e:
        raise CheckpointError(f"{path}: inconsistent checkpoint: {e}") from e

    optim = None
    if meta.get("optim") is not None:
        optim = OptimState(**meta["optim"])
        optim.velocity = {
            k[len("velocity/"):]: v.astype(model.dtype, copy=False) for k, v in arrays.items() if k.startswith("velocity/")
        }
    return Checkpoint(model, optim, meta)
