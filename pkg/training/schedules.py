"""Per-epoch learning-rate schedules. Epochs are 0-based."""

import math
from dataclasses import dataclass
from typing import Any, Dict, Tuple, Union


@dataclass(frozen=True)
class Constant:
    lr: float

    def __post_init__(self):
        if not self.lr > 0:
            raise ValueError(f"learning rate must be > 0, got {self.lr}")


@dataclass(frozen=True)
class Step:
    """lr0 multiplied by `factor` once for every milestone <= epoch."""

    lr0: float
    milestones: Tuple[int, ...]
    factor: float = 0.1

    def __post_init__(self):
        object.__setattr__(self, "milestones", tuple(int(m) for m in self.milestones))
        if not self.lr0 > 0:
            raise ValueError(f"lr0 must be > 0, got {self.lr0}")
        if not 0.0 < self.factor < 1.0:
            raise ValueError(f"factor must lie in (0, 1), got {self.factor}")
        if any(b <= a for a, b in zip(self.milestones, self.milestones[1:])):
            raise ValueError(f"milestones must be strictly increasing, got {list(self.milestones)}")
        if any(m < 0 for m in self.milestones):
            raise ValueError(f"milestones must be >= 0, got {list(self.milestones)}")


@dataclass(frozen=True)
class Cosine:
    """Cosine annealing without restart from lr0 to lr_min over T epochs."""

    lr0: float
    lr_min: float
    T: int

    def __post_init__(self):
        if not self.lr0 > 0:
            raise ValueError(f"lr0 must be > 0, got {self.lr0}")
        if not 0.0 <= self.lr_min <= self.lr0:
            raise ValueError(f"lr_min must lie in [0, lr0], got {self.lr_min}")
        if self.T < 1:
            raise ValueError(f"T must be >= 1, got {self.T}")


LrSchedule = Union[Constant, Step, Cosine]


def lr_at(schedule: LrSchedule, epoch: int) -> float:
    if epoch < 0:
        raise ValueError(f"epoch must be >= 0, got {epoch}")
    if isinstance(schedule, Constant):
        return schedule.lr
    if isinstance(schedule, Step):
        drops = sum(1 for m in schedule.milestones if m <= epoch)
        divisor = 1.0 / schedule.factor
        if abs(divisor - round(divisor)) < 1e-9:
            # "divided by 10" stays a division so 0.1 -> 0.01 -> 0.001 exactly.
            return schedule.lr0 / round(divisor) ** drops
        return schedule.lr0 * schedule.factor ** drops
    if isinstance(schedule, Cosine):
        if epoch >= schedule.T:
            return schedule.lr_min
        cos = math.cos(math.pi * epoch / schedule.T)
        return schedule.lr_min + 0.5 * (schedule.lr0 - schedule.lr_min) * (1.0 + cos)
    raise TypeError(f"unknown schedule {schedule!r}")


def schedule_to_dict(schedule: LrSchedule) -> Dict[str, Any]:
    if isinstance(schedule, Constant):
        return {"kind": "constant", "lr": schedule.lr}
    if isinstance(schedule, Step):
        return {"kind": "step", "lr0": schedule.lr0, "milestones": list(schedule.milestones), "factor": schedule.factor}
    return {"kind": "cosine", "lr0": schedule.lr0, "lr_min": schedule.lr_min, "T": schedule.T}


def schedule_from_dict(d: Dict[str, Any]) -> LrSchedule:
    d = dict(d)
    kind = d.pop("kind", None)
    classes = {"constant": Constant, "step": Step, "cosine": Cosine}
    if kind not in classes:
        raise ValueError(f"unknown schedule kind {kind!r}, expected one of {sorted(classes)}")
    return classes[kind](**d)
