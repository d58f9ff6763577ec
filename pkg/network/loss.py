import numpy as np


class NumericError(ArithmeticError):
    pass


def _check(logits: np.ndarray, labels: np.ndarray):
    if logits.ndim != 2 or logits.shape != labels.shape:
        raise ValueError(f"logits {logits.shape} and labels {labels.shape} must be equal 2-d shapes")
    if not np.all(np.isfinite(logits)):
        raise NumericError("non-finite logits")


def log_softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise log-softmax in float64 with max subtraction."""
    z = logits.astype(np.float64)
    shifted = z - z.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def softmax(logits: np.ndarray) -> np.ndarray:
    return np.exp(log_softmax(logits))


def soft_ce_per_sample(logits: np.ndarray, labels: np.ndarray) -> np.ndarray:
    _check(logits, labels)
    return -(labels.astype(np.float64) * log_softmax(logits)).sum(axis=1)


def soft_ce_loss(logits: np.ndarray, labels: np.ndarray) -> float:
    """Mean soft-label cross-entropy over the batch, accumulated in float64."""
    return float(soft_ce_per_sample(logits, labels).mean())


def soft_ce_grad(logits: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """d soft_ce_loss / d logits, in the logits' dtype."""
    _check(logits, labels)
    y = labels.astype(np.float64)
    grad = softmax(logits) * y.sum(axis=1, keepdims=True) - y
    return (grad / logits.shape[0]).astype(logits.dtype, copy=False)
