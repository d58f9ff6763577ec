"""
Augmented vs clean risk table: one row per run, (risk_aug, risk_clean) at the
end of augmentation and at the end of refinement, shown at x1e-3 scale.
"""

import csv
import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

from .records import EpochRecord, augment_epochs_of

logger = logging.getLogger(__name__)

DISPLAY_SCALE = 1e3
ABSENT = "-"
COLUMNS = ("method", "run", "aug_end_risk_aug", "aug_end_risk_clean", "refine_end_risk_aug", "refine_end_risk_clean")


@dataclass(frozen=True)
class RunSummary:
    name: str
    method: str
    records: Tuple[EpochRecord, ...]

    @property
    def augment_epochs(self) -> int:
        return augment_epochs_of(self.records)


@dataclass(frozen=True)
class GapRow:
    method: str
    run: str
    aug_end: Tuple[float, float]
    refine_end: Optional[Tuple[float, float]]


def format_cell(value: Optional[float]) -> str:
    """Display formatting only; stored values stay unscaled."""
    return ABSENT if value is None else f"{value * DISPLAY_SCALE:.3f}"


@dataclass(frozen=True)
class GapReport:
    rows: Tuple[GapRow, ...]

    def cells(self) -> List[List[str]]:
        out = []
        for row in self.rows:
            refine = row.refine_end or (None, None)
            out.append([row.method, row.run, format_cell(row.aug_end[0]), format_cell(row.aug_end[1]),
                        format_cell(refine[0]), format_cell(refine[1])])
        return out

    def to_text(self) -> str:
        table = [list(COLUMNS)] + self.cells()
        widths = [max(len(r[i]) for r in table) for i in range(len(COLUMNS))]
        lines = ["cross-entropy x1e-3"]
        for i, r in enumerate(table):
            lines.append("  ".join(cell.ljust(w) if j < 2 else cell.rjust(w) for j, (cell, w) in enumerate(zip(r, widths))))
            if i == 0:
                lines.append("  ".join("-" * w for w in widths))
        return "\n".join(lines) + "\n"

    def write_csv(self, path: str) -> None:
        with open(path, "w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(COLUMNS)
            writer.writerows(self.cells())


def _as_summary(run) -> RunSummary:
    if isinstance(run, RunSummary):
        return run
    return run.summary()


def gap_report(runs: Sequence) -> GapReport:
    """
    Accepts RunSummary objects or anything with a summary() method (RunResult).
    Rows are ordered by method name, then run name.
    """
    rows = []
    for run in map(_as_summary, runs):
        n = run.augment_epochs
        if n == 0:
            raise ValueError(f"run '{run.name}' has no augmentation epoch")
        by_epoch = {r.epoch: r for r in run.records}
        if n not in by_epoch:
            raise ValueError(f"run '{run.name}' has no record for epoch {n}")
        aug_end = (by_epoch[n].risk_aug, by_epoch[n].risk_clean)
        last = max(by_epoch)
        refine_end = None
        if by_epoch[last].stage == "refine":
            refine_end = (by_epoch[last].risk_aug, by_epoch[last].risk_clean)
        rows.append(GapRow(run.method, run.name, aug_end, refine_end))
    rows.sort(key=lambda r: (r.method, r.run))
    return GapReport(tuple(rows))
