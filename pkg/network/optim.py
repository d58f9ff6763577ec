from dataclasses import dataclass, field
from typing import Dict

import numpy as np

from .model import Model


@dataclass
class OptimState:
    learning_rate: float
    momentum: float = 0.9
    weight_decay: float = 1e-4
    velocity: Dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ValueError(f"learning_rate must be >= 0, got {self.learning_rate}")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError(f"momentum must lie in [0, 1), got {self.momentum}")
        if self.weight_decay < 0:
            raise ValueError(f"weight_decay must be >= 0, got {self.weight_decay}")

    def hyperparameters(self) -> Dict[str, float]:
        return {
            "learning_rate": self.learning_rate,
            "momentum": self.momentum,
            "weight_decay": self.weight_decay,
        }


def sgd_step(model: Model, grads: Dict[str, np.ndarray], optim: OptimState) -> Model:
    """
    v <- momentum * v + grad + weight_decay * param; param <- param - lr * v.
    Tensors created with decay=False (biases, batch-norm scale/shift) get no
    weight decay. Parameters are updated in place.
    """
    for name, tensor in model.parameters().items():
        grad = grads.get(name)
        if grad is None:
            continue
        if grad.shape != tensor.shape:
            raise ValueError(f"{name}: gradient shape {grad.shape} != parameter shape {tensor.shape}")
        step = grad
        if optim.weight_decay and tensor.decay:
            step = step + optim.weight_decay * tensor.values
        velocity = optim.velocity.get(name)
        if velocity is not None:
            if velocity.shape != tensor.shape:
                raise ValueError(f"{name}: velocity shape {velocity.shape} != parameter shape {tensor.shape}")
            step = optim.momentum * velocity + step
        step = np.asarray(step, dtype=tensor.values.dtype)
        optim.velocity[name] = step
        tensor.values = tensor.values - optim.learning_rate * step
    return model
