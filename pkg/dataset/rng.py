"""
Hierarchical, counter-based random streams.

A stream is identified by a root seed and a path of keys (epoch index,
batch index, op name, ...). Equal (seed, path) pairs always produce the same
numbers, whatever order streams are created in, so per-sample work can be
parallelized without changing results.
"""

import zlib
from dataclasses import dataclass
from typing import Tuple, Union

import numpy as np

PathKey = Union[int, str]


def _key_to_int(key: PathKey) -> int:
    if isinstance(key, (bool, np.bool_)):
        raise TypeError(f"RNG path keys must be int or str, got {key!r}")
    if isinstance(key, (int, np.integer)):
        if key < 0:
            raise ValueError(f"RNG path keys must be non-negative, got {key}")
        return int(key)
    if isinstance(key, str):
        # Strings are kept apart from small integers by the high bit.
        return (1 << 32) | zlib.crc32(key.encode("utf-8"))
    raise TypeError(f"RNG path keys must be int or str, got {key!r}")


@dataclass(frozen=True)
class RngStream:
    seed: int
    path: Tuple[int, ...] = ()

    def __post_init__(self):
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError(f"seed must fit in 64 unsigned bits, got {self.seed}")
        object.__setattr__(self, "path", tuple(_key_to_int(k) for k in self.path))

    def child(self, *keys: PathKey) -> "RngStream":
        return RngStream(self.seed, self.path + tuple(_key_to_int(k) for k in keys))

    def generator(self) -> np.random.Generator:
        """Fresh Philox generator positioned at the start of this stream."""
        seq = np.random.SeedSequence(int(self.seed), spawn_key=self.path)
        return np.random.Generator(np.random.Philox(seq))

    def __repr__(self):
        return f"RngStream(seed={self.seed}, path={self.path})"
