"""Dense float64 arrays and the seeded random source used throughout the package.

Tensors are plain ``numpy.ndarray`` objects of dtype float64 and rank 1 or 2.
The helpers here add the shape checks and reduction-order guarantees the rest
of the package relies on.
"""
from __future__ import annotations

import zlib

import numpy as np

DTYPE = np.float64

# numerator range for open-interval uniforms: (k + 0.5) / 2**52 is exact in float64
_UNIFORM_BITS = 52


class DimensionError(ValueError):
    """Operand shapes are incompatible."""


def as_tensor(x) -> np.ndarray:
    arr = np.array(x, dtype=DTYPE)
    if arr.ndim > 2:
        raise DimensionError(f"rank {arr.ndim} tensors are not supported (shape {arr.shape})")
    return arr


def matmul(a: np.ndarray, b: np.ndarray, kernel: str = "sequential") -> np.ndarray:
    """Matrix product ``a @ b``.

    ``kernel="sequential"`` accumulates over the inner dimension one index at a
    time, reproducing a naive triple loop bit for bit on every platform.
    ``kernel="blas"`` defers to numpy/BLAS: much faster, deterministic on a
    fixed machine, but its summation order is implementation-defined.
    """
    a = np.asarray(a, dtype=DTYPE)
    b = np.asarray(b, dtype=DTYPE)
    if a.ndim not in (1, 2) or b.ndim not in (1, 2):
        raise DimensionError(f"matmul needs rank 1 or 2 operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[0]:
        raise DimensionError(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")
    if kernel == "blas":
        return a @ b
    if kernel != "sequential":
        raise ValueError(f"unknown matmul kernel {kernel!r}")
    a2 = a.reshape(1, -1) if a.ndim == 1 else a
    b2 = b.reshape(-1, 1) if b.ndim == 1 else b
    out = np.zeros((a2.shape[0], b2.shape[1]), dtype=DTYPE)
    for k in range(a2.shape[1]):
        out += a2[:, k : k + 1] * b2[k : k + 1, :]
    if a.ndim == 1 and b.ndim == 1:
        return out.reshape(())
    if a.ndim == 1:
        return out.reshape(-1)
    if b.ndim == 1:
        return out.reshape(-1)
    return out


def transpose(a: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(np.asarray(a, dtype=DTYPE).T)


def sum_axis(a: np.ndarray, axis: int | None = None) -> np.ndarray:
    """Sum with a fixed left-to-right order along ``axis``."""
    a = np.asarray(a, dtype=DTYPE)
    if axis is None:
        return sum_axis(a.reshape(-1), 0)
    a = np.moveaxis(a, axis, 0)
    out = np.zeros(a.shape[1:], dtype=DTYPE)
    for row in a:
        out = out + row
    return out


def max_axis(a: np.ndarray, axis: int | None = None) -> np.ndarray:
    return np.max(np.asarray(a, dtype=DTYPE), axis=axis)


def check_same_shape(a: np.ndarray, b: np.ndarray, what: str = "operands") -> None:
    if np.shape(a) != np.shape(b):
        raise DimensionError(f"{what} have different shapes: {np.shape(a)} vs {np.shape(b)}")


class Rng:
    """Seeded PCG64 stream.

    Distinct ``stream`` names give statistically independent generators for
    the same seed, so that e.g. parameter initialisation and Gumbel noise do
    not consume each other's variates.
    """

    algorithm = "pcg64"

    def __init__(self, seed: int, stream: str = "default"):
        self.seed = int(seed)
        self.stream = stream
        seq = np.random.SeedSequence([self.seed, zlib.crc32(stream.encode("utf-8"))])
        self._gen = np.random.Generator(np.random.PCG64(seq))

    def uniform(self, shape=()) -> np.ndarray:
        """I.i.d. uniforms strictly inside (0, 1)."""
        k = self._gen.integers(0, 2**_UNIFORM_BITS, size=shape, dtype=np.int64)
        return (k.astype(DTYPE) + 0.5) / float(2**_UNIFORM_BITS)

    def uniform_range(self, low: float, high: float, shape=()) -> np.ndarray:
        return low + (high - low) * self.uniform(shape)

    def normal(self, shape=()) -> np.ndarray:
        return self._gen.standard_normal(size=shape)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def integers(self, low: int, high: int, shape=()) -> np.ndarray:
        return self._gen.integers(low, high, size=shape)


def uniform(rng: Rng, shape) -> np.ndarray:
    return rng.uniform(shape)
