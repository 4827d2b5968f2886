"""Seeded randomness and shape-checked tensor helpers.

All arrays are ``float64`` numpy arrays. Randomness comes from
:class:`RandomStream`, a thin wrapper over numpy's counter-based Philox
bit generator: the 128-bit Philox key is ``(seed, lane)`` and every draw
call uses a fresh counter block indexed by ``counter``. Normal variates
use numpy's ziggurat sampler (``Generator.standard_normal``), so golden
values depend only on ``(seed, lane, counter)`` and the numpy version.
"""

from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


class RandomStream:
    """Splittable, replayable source of random draws.

    Each call to a draw method consumes exactly one counter value, so the
    output of the ``k``-th call depends only on ``(seed, lane, k)``.
    ``spawn(k)`` returns an independent stream on a different key lane.
    """

    def __init__(self, seed: int, counter: int = 0, lane: int = 0):
        if seed < 0 or counter < 0 or lane < 0:
            raise ValueError("seed, counter and lane must be non-negative")
        self.seed = int(seed) & _MASK64
        self.counter = int(counter) & _MASK64
        self.lane = int(lane) & _MASK64

    def __repr__(self):
        return f"RandomStream(seed={self.seed}, counter={self.counter}, lane={self.lane})"

    def spawn(self, k: int) -> "RandomStream":
        # Mix the current lane so nested spawns do not collide.
        lane = int(np.random.SeedSequence([self.lane, int(k)]).generate_state(1, np.uint64)[0])
        return RandomStream(self.seed, 0, lane)

    def _generator(self) -> np.random.Generator:
        # Counter word 3 indexes the call; words 0-2 are left for Philox's
        # own block increments within a single call.
        bg = np.random.Philox(key=self.seed | (self.lane << 64), counter=[0, 0, 0, self.counter])
        self.counter = (self.counter + 1) & _MASK64
        return np.random.Generator(bg)

    def normal(self, shape) -> np.ndarray:
        shape = _check_shape(shape)
        return self._generator().standard_normal(shape)

    def uniform(self, shape, low: float = 0.0, high: float = 1.0) -> np.ndarray:
        shape = _check_shape(shape)
        return self._generator().uniform(low, high, shape)

    def integers(self, low: int, high: int, shape) -> np.ndarray:
        """Integers in the closed range ``[low, high]``."""
        shape = _check_shape(shape)
        return self._generator().integers(low, high, shape, endpoint=True)


def _check_shape(shape) -> tuple:
    if np.isscalar(shape):
        shape = (int(shape),)
    shape = tuple(int(s) for s in shape)
    if len(shape) == 0 or any(s <= 0 for s in shape):
        raise ShapeError(f"shape must have positive dimensions, got {shape}")
    return shape


def gaussian(stream: RandomStream, shape) -> np.ndarray:
    """I.i.d. standard normal tensor of ``shape``; advances ``stream``."""
    return stream.normal(shape)


def as_tensor(x) -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise FloatingPointError("tensor contains non-finite values")
    return arr


def _binary(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape and a.ndim != 0 and b.ndim != 0:
        raise ShapeError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a, b


def add(a, b) -> np.ndarray:
    a, b = _binary(a, b)
    return as_tensor(a + b)


def sub(a, b) -> np.ndarray:
    a, b = _binary(a, b)
    return as_tensor(a - b)


def mul(a, b) -> np.ndarray:
    a, b = _binary(a, b)
    return as_tensor(a * b)


def scale(a, k: float) -> np.ndarray:
    return as_tensor(np.asarray(a, dtype=np.float64) * float(k))


def reduce_mean(a) -> float:
    return float(np.mean(np.asarray(a, dtype=np.float64)))


def reduce_var(a) -> float:
    """Population variance (divides by N)."""
    return float(np.var(np.asarray(a, dtype=np.float64)))


def dot(a, b) -> float:
    a, b = _binary(a, b)
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch: {a.shape} vs {b.shape}")
    return float(np.dot(a.ravel(), b.ravel()))
