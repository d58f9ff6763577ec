from typing import Optional, Tuple

import numpy as np


class Tensor:
    """A trainable parameter: values plus the gradient of the last backward pass."""

    def __init__(self, values: np.ndarray, decay: bool = True):
        self.values = values
        self.grad: Optional[np.ndarray] = None
        # Biases and batch-norm scale/shift are excluded from weight decay.
        self.decay = decay

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.values.shape

    @property
    def size(self) -> int:
        return self.values.size

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"<Tensor shape={self.shape} decay={self.decay}>"
