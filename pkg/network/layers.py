"""
Layers with explicit forward and backward passes.

forward(x, train, rng) returns (y, cache); backward(cache, dout) returns
(dx, {param_name: grad}). Layers never keep per-call state on themselves,
only parameters and batch-norm running statistics.
"""

from typing import Any, Dict, Optional, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from dataset.rng import RngStream

from .tensor import Tensor

Grads = Dict[str, np.ndarray]


class Layer:
    def parameters(self) -> Dict[str, Tensor]:
        return {}

    def buffers(self) -> Dict[str, np.ndarray]:
        return {}

    def forward(self, x: np.ndarray, train: bool, rng: Optional[RngStream] = None) -> Tuple[np.ndarray, Any]:
        raise NotImplementedError

    def backward(self, cache: Any, dout: np.ndarray, need_dx: bool = True) -> Tuple[Optional[np.ndarray], Grads]:
        raise NotImplementedError

    def __repr__(self):
        return f"<{type(self).__name__}>"


class Normalize(Layer):
    """Per-channel (x - mean) / std on the raw [0, 1] pixels."""

    def __init__(self, mean, std, dtype):
        self.mean = np.asarray(mean, dtype=dtype)[:, None, None]
        self.std = np.asarray(std, dtype=dtype)[:, None, None]

    def forward(self, x, train, rng=None):
        return (x - self.mean) / self.std, None

    def backward(self, cache, dout, need_dx=True):
        return (dout / self.std if need_dx else None), {}


class Flatten(Layer):
    def forward(self, x, train, rng=None):
        return x.reshape(x.shape[0], -1), x.shape

    def backward(self, cache, dout, need_dx=True):
        return dout.reshape(cache), {}


class Dense(Layer):
    def __init__(self, in_features: int, out_features: int, gen: np.random.Generator, dtype):
        std = np.sqrt(2.0 / in_features)
        self.weight = Tensor(gen.normal(0.0, std, (in_features, out_features)).astype(dtype))
        self.bias = Tensor(np.zeros(out_features, dtype=dtype), decay=False)

    def parameters(self):
        return {"weight": self.weight, "bias": self.bias}

    def forward(self, x, train, rng=None):
        return x @ self.weight.values + self.bias.values, x

    def backward(self, cache, dout, need_dx=True):
        x = cache
        grads = {"weight": x.T @ dout, "bias": dout.sum(axis=0)}
        dx = dout @ self.weight.values.T if need_dx else None
        return dx, grads

    def __repr__(self):
        return f"<Dense {self.weight.shape[0]}->{self.weight.shape[1]}>"


class Conv2d(Layer):
    """Stride-1 'same' convolution without bias (always followed by batch-norm here)."""

    def __init__(self, in_channels: int, out_channels: int, gen: np.random.Generator, dtype, kernel_size: int = 3):
        if kernel_size % 2 != 1:
            raise ValueError(f"kernel_size must be odd, got {kernel_size}")
        self.kernel_size = kernel_size
        self.padding = kernel_size // 2
        std = np.sqrt(2.0 / (in_channels * kernel_size * kernel_size))
        self.weight = Tensor(
            gen.normal(0.0, std, (out_channels, in_channels, kernel_size, kernel_size)).astype(dtype)
        )

    def parameters(self):
        return {"weight": self.weight}

    def forward(self, x, train, rng=None):
        b, c, h, w = x.shape
        k, p = self.kernel_size, self.padding
        f = self.weight.shape[0]
        padded = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
        windows = sliding_window_view(padded, (k, k), axis=(2, 3))
        cols = windows.transpose(0, 2, 3, 1, 4, 5).reshape(b * h * w, c * k * k)
        out = cols @ self.weight.values.reshape(f, -1).T
        y = out.reshape(b, h, w, f).transpose(0, 3, 1, 2)
        return np.ascontiguousarray(y), (x.shape, cols)

    def backward(self, cache, dout, need_dx=True):
        (b, c, h, w), cols = cache
        k, p = self.kernel_size, self.padding
        f = self.weight.shape[0]
        dflat = dout.transpose(0, 2, 3, 1).reshape(-1, f)
        grads = {"weight": (dflat.T @ cols).reshape(self.weight.shape)}
        if not need_dx:
            return None, grads
        dcols = (dflat @ self.weight.values.reshape(f, -1)).reshape(b, h, w, c, k, k)
        dpadded = np.zeros((b, c, h + 2 * p, w + 2 * p), dtype=dout.dtype)
        for i in range(k):
            for j in range(k):
                dpadded[:, :, i:i + h, j:j + w] += dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
        return dpadded[:, :, p:p + h, p:p + w], grads

    def __repr__(self):
        f, c, k, _ = self.weight.shape
        return f"<Conv2d {c}->{f} {k}x{k}>"


class BatchNorm2d(Layer):
    def __init__(self, channels: int, dtype, momentum: float = 0.1, eps: float = 1e-5):
        self.momentum = momentum
        self.eps = eps
        self.gamma = Tensor(np.ones(channels, dtype=dtype), decay=False)
        self.beta = Tensor(np.zeros(channels, dtype=dtype), decay=False)
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)

    def parameters(self):
        return {"gamma": self.gamma, "beta": self.beta}

    def buffers(self):
        return {"running_mean": self.running_mean, "running_var": self.running_var}

    def forward(self, x, train, rng=None):
        g = self.gamma.values[None, :, None, None]
        bt = self.beta.values[None, :, None, None]
        if not train:
            inv_std = 1.0 / np.sqrt(self.running_var + self.eps)
            xhat = (x - self.running_mean[None, :, None, None]) * inv_std[None, :, None, None]
            return g * xhat + bt, None
        n = x.shape[0] * x.shape[2] * x.shape[3]
        mean = x.mean(axis=(0, 2, 3))
        var = x.var(axis=(0, 2, 3))
        inv_std = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - mean[None, :, None, None]) * inv_std[None, :, None, None]
        unbiased = var * (n / (n - 1)) if n > 1 else var
        # In place so the buffers returned by buffers() stay the live arrays.
        self.running_mean *= 1.0 - self.momentum
        self.running_mean += self.momentum * mean
        self.running_var *= 1.0 - self.momentum
        self.running_var += self.momentum * unbiased
        return g * xhat + bt, (xhat, inv_std)

    def backward(self, cache, dout, need_dx=True):
        xhat, inv_std = cache
        axes = (0, 2, 3)
        grads = {"gamma": (dout * xhat).sum(axis=axes), "beta": dout.sum(axis=axes)}
        if not need_dx:
            return None, grads
        n = dout.shape[0] * dout.shape[2] * dout.shape[3]
        dxhat = dout * self.gamma.values[None, :, None, None]
        dx = (inv_std[None, :, None, None] / n) * (
            n * dxhat
            - dxhat.sum(axis=axes, keepdims=True)
            - xhat * (dxhat * xhat).sum(axis=axes, keepdims=True)
        )
        return dx, grads


class ReLU(Layer):
    def forward(self, x, train, rng=None):
        mask = x > 0
        return x * mask, mask

    def backward(self, cache, dout, need_dx=True):
        return dout * cache, {}


class AvgPool2d(Layer):
    """Non-overlapping 2x2 average pooling."""

    def forward(self, x, train, rng=None):
        b, c, h, w = x.shape
        if h % 2 or w % 2:
            raise ValueError(f"2x2 pooling needs even spatial size, got {h}x{w}")
        return x.reshape(b, c, h // 2, 2, w // 2, 2).mean(axis=(3, 5)), None

    def backward(self, cache, dout, need_dx=True):
        dx = np.repeat(np.repeat(dout, 2, axis=2), 2, axis=3) * 0.25
        return dx.astype(dout.dtype, copy=False), {}


class GlobalAvgPool(Layer):
    def forward(self, x, train, rng=None):
        return x.mean(axis=(2, 3)), x.shape

    def backward(self, cache, dout, need_dx=True):
        b, c, h, w = cache
        dx = np.broadcast_to(dout[:, :, None, None] / (h * w), cache)
        return np.ascontiguousarray(dx).astype(dout.dtype, copy=False), {}


class Dropout(Layer):
    def __init__(self, rate: float):
        if not 0.0 <= rate < 1.0:
            raise ValueError(f"drop rate must lie in [0, 1), got {rate}")
        self.rate = rate

    def forward(self, x, train, rng=None):
        if not train or self.rate == 0.0:
            return x, None
        if rng is None:
            raise ValueError("dropout in train mode needs an RngStream")
        keep = rng.generator().random(x.shape) >= self.rate
        mask = keep.astype(x.dtype) / x.dtype.type(1.0 - self.rate)
        return x * mask, mask

    def backward(self, cache, dout, need_dx=True):
        return (dout if cache is None else dout * cache), {}
