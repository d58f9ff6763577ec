"""
Per-epoch metric records and their CSV / JSONL files.

Floats are written with repr(), which round-trips exactly, so reading a file
back gives the same values the run produced.
"""

import csv
import json
import logging
import math
import os
from dataclasses import asdict, dataclass
from typing import Any, Dict, List, Optional, Sequence

logger = logging.getLogger(__name__)

CSV_FIELDS = (
    "epoch",
    "stage",
    "lr",
    "risk_aug",
    "risk_clean",
    "test_loss",
    "test_acc",
    "intensity_scale",
    "wall_seconds",
)
STAGES = ("init", "augment", "refine")
FORMATS = ("csv", "jsonl")


@dataclass(frozen=True)
class EpochRecord:
    """
    One row of the metric log. Epoch 0 is the "init" baseline measured before
    any update; epochs 1..N are "augment" and N+1..N+M are "refine".
    """

    epoch: int
    stage: str
    lr: float
    risk_aug: float
    risk_clean: float
    test_loss: float
    test_acc: float
    intensity_scale: float
    wall_seconds: float = 0.0

    def __post_init__(self):
        if self.stage not in STAGES:
            raise ValueError(f"stage must be one of {STAGES}, got {self.stage!r}")
        if self.epoch < 0:
            raise ValueError(f"epoch must be >= 0, got {self.epoch}")
        for name in CSV_FIELDS[2:]:
            value = getattr(self, name)
            if not math.isfinite(value):
                raise ValueError(f"{name} must be finite, got {value}")
        for name in ("risk_aug", "risk_clean", "test_loss"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0, got {getattr(self, name)}")
        if not 0.0 <= self.test_acc <= 1.0:
            raise ValueError(f"test_acc must lie in [0, 1], got {self.test_acc}")

    def as_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: Dict[str, Any]) -> "EpochRecord":
        return cls(
            epoch=int(d["epoch"]),
            stage=str(d["stage"]),
            **{name: float(d[name]) for name in CSV_FIELDS[2:]},
        )


def _format_of(path: str, fmt: Optional[str]) -> str:
    if fmt is None:
        fmt = os.path.splitext(path)[1].lstrip(".").lower()
    if fmt not in FORMATS:
        raise ValueError(f"unknown record format {fmt!r}, expected one of {FORMATS}")
    return fmt


def export_records(records: Sequence[EpochRecord], path: str, fmt: Optional[str] = None) -> None:
    """Writes records to `path`; the format follows the extension unless `fmt` is given."""
    if not records:
        raise ValueError("no records to export")
    fmt = _format_of(path, fmt)
    with open(path, "w", newline="", encoding="utf-8") as f:
        if fmt == "csv":
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(CSV_FIELDS)
            for r in records:
                writer.writerow([r.epoch, r.stage] + [repr(float(getattr(r, n))) for n in CSV_FIELDS[2:]])
        else:
            for r in records:
                f.write(json.dumps(r.as_dict()) + "\n")
    logger.debug(f"wrote {len(records)} records to {path}")


def read_records(path: str, fmt: Optional[str] = None) -> List[EpochRecord]:
    fmt = _format_of(path, fmt)
    with open(path, "r", encoding="utf-8") as f:
        if fmt == "csv":
            reader = csv.DictReader(f)
            if tuple(reader.fieldnames or ()) != CSV_FIELDS:
                raise ValueError(f"{path}: unexpected header {reader.fieldnames}")
            return [EpochRecord.from_dict(row) for row in reader]
        return [EpochRecord.from_dict(json.loads(line)) for line in f if line.strip()]


CURVE_FIELDS = ("epoch", "stage", "risk_aug", "risk_clean", "test_loss", "test_acc", "boundary")


def curve_rows(records: Sequence[EpochRecord], boundary: int) -> List[Dict[str, Any]]:
    """
    Loss-vs-epoch rows for plotting. `boundary` is the last augmentation epoch
    (N); the row for that epoch has boundary=1, every other row 0.
    """
    return [
        {
            "epoch": r.epoch,
            "stage": r.stage,
            "risk_aug": r.risk_aug,
            "risk_clean": r.risk_clean,
            "test_loss": r.test_loss,
            "test_acc": r.test_acc,
            "boundary": int(r.epoch == boundary),
        }
        for r in records
    ]


def write_curve(records: Sequence[EpochRecord], boundary: int, path: str) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.DictWriter(f, fieldnames=CURVE_FIELDS, lineterminator="\n")
        writer.writeheader()
        for row in curve_rows(records, boundary):
            writer.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})


def augment_epochs_of(records: Sequence[EpochRecord]) -> int:
    """N recovered from the stage tags."""
    return sum(1 for r in records if r.stage == "augment")
