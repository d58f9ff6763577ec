from typing import List

import numpy as np

from .rng import RngStream
from .samples import Dataset


def epoch_batches(dataset: Dataset, batch_size: int, rng: RngStream) -> List[np.ndarray]:
    """
    Seeded permutation of the dataset indices split into batches.

    The permutation depends only on `rng` (seed and path), so the same epoch
    path always yields the same order. The last batch may be smaller.
    """
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}")
    n = len(dataset)
    if n == 0:
        raise ValueError(f"cannot batch empty dataset '{dataset.name}'")
    order = rng.generator().permutation(n)
    return [order[start:start + batch_size] for start in range(0, n, batch_size)]


def sequential_batches(n: int, batch_size: int) -> List[np.ndarray]:
    """Fixed in-order batches, used for evaluation passes."""
    return [np.arange(start, min(start + batch_size, n)) for start in range(0, n, batch_size)]
