"""Dense NCHW float32 tensors and the deterministic generator used for demo weights.

A tensor is a plain ``numpy.ndarray`` of dtype float32 and rank 4, laid out
C-contiguously as (n, c, h, w): element (i, j, y, x) sits at flat index
``((i*c + j)*h + y)*w + x``.  The helpers here validate that contract so the
rest of the package can use numpy slicing freely.

Random numbers come from :class:`Prng`, a fixed generator that yields the
same stream on every platform:

* seeding: SplitMix64, ``state = mix(seed + 0x9E3779B97F4A7C15)``
  with ``mix(z)``: ``z ^= z >> 30; z *= 0xBF58476D1CE4E5B9; z ^= z >> 27;
  z *= 0x94D049BB133111EB; z ^= z >> 31`` (all mod 2**64); a zero state is
  replaced by ``0x9E3779B97F4A7C15``.
* stepping: xorshift64*, ``x ^= x >> 12; x ^= x << 25; x ^= x >> 27``,
  output ``x * 0x2545F4914F6CDD1D``.
* bulk draws: one xorshift64* output ``key`` is taken and expanded as
  ``mix(key + k * 0x9E3779B97F4A7C15)`` for ``k = 1..count``, which keeps
  large weight tensors vectorised without changing the stream's definition.
* uniforms: ``(u >> 11) * 2**-53``; normals: Box-Muller (cosine branch only)
  over consecutive pairs ``(u1', u2)`` with ``u1' = ((u >> 11) + 1) * 2**-53``.
"""

from __future__ import annotations

import math
import sys
from typing import Iterable

import numpy as np

from .errors import ShapeError

Tensor = np.ndarray
Shape4 = tuple[int, int, int, int]

MASK64 = (1 << 64) - 1
GOLDEN_GAMMA = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB
_XS_MULT = 0x2545F4914F6CDD1D


def _check_shape(shape: Iterable[int]) -> Shape4:
    shape = tuple(int(s) for s in shape)
    if len(shape) != 4:
        raise ShapeError(f"tensor shape must have 4 extents (n, c, h, w), got {shape}")
    if any(s < 0 for s in shape):
        raise ShapeError(f"negative extent in shape {shape}")
    total = 1
    for s in shape:
        total *= s
    # 4 bytes per element must stay addressable
    if total * 4 > sys.maxsize:
        raise ShapeError(f"shape {shape} has {total} elements, exceeding addressable size")
    return shape  # type: ignore[return-value]


def tensor_new(shape: Iterable[int], fill: float = 0.0) -> Tensor:
    """Return a new float32 tensor of ``shape`` with every element equal to ``fill``."""
    return np.full(_check_shape(shape), fill, dtype=np.float32)


def as_tensor(data, shape: Iterable[int] | None = None) -> Tensor:
    """Coerce ``data`` to a C-contiguous float32 rank-4 array (reshaped if ``shape`` is given)."""
    arr = np.ascontiguousarray(data, dtype=np.float32)
    if shape is not None:
        shape = _check_shape(shape)
        if arr.size != math.prod(shape):
            raise ShapeError(f"cannot view {arr.size} values as shape {shape}")
        arr = arr.reshape(shape)
    if arr.ndim != 4:
        raise ShapeError(f"expected a rank-4 tensor, got shape {arr.shape}")
    return arr


def _check_index(t: Tensor, idx: tuple[int, int, int, int]) -> tuple[int, int, int, int]:
    if len(idx) != 4:
        raise IndexError(f"expected 4 indices, got {len(idx)}")
    for k, (i, n) in enumerate(zip(idx, t.shape)):
        if not 0 <= i < n:
            raise IndexError(f"index {i} out of range for axis {k} with extent {n}")
    return idx


def flat_index(shape: Shape4, i: int, j: int, y: int, x: int) -> int:
    _, c, h, w = shape
    return ((i * c + j) * h + y) * w + x


def element(t: Tensor, i: int, j: int, y: int, x: int) -> float:
    _check_index(t, (i, j, y, x))
    return float(t.reshape(-1)[flat_index(t.shape, i, j, y, x)])


def set_element(t: Tensor, i: int, j: int, y: int, x: int, value: float) -> None:
    _check_index(t, (i, j, y, x))
    t.reshape(-1)[flat_index(t.shape, i, j, y, x)] = value


def _mix64(z: int) -> int:
    z = ((z ^ (z >> 30)) * _MIX1) & MASK64
    z = ((z ^ (z >> 27)) * _MIX2) & MASK64
    return z ^ (z >> 31)


def _mix64_array(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * np.uint64(_MIX1)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(_MIX2)
    return z ^ (z >> np.uint64(31))


class Prng:
    """SplitMix64-seeded xorshift64* generator (constants in the module docstring)."""

    def __init__(self, seed: int):
        self.seed = int(seed) & MASK64
        state = _mix64((self.seed + GOLDEN_GAMMA) & MASK64)
        self.state = state or GOLDEN_GAMMA

    def next_u64(self) -> int:
        x = self.state
        x ^= x >> 12
        x ^= (x << 25) & MASK64
        x ^= x >> 27
        self.state = x
        return (x * _XS_MULT) & MASK64

    def u64_block(self, count: int) -> np.ndarray:
        key = self.next_u64()
        k = np.arange(1, count + 1, dtype=np.uint64)
        with np.errstate(over="ignore"):
            return _mix64_array(np.uint64(key) + k * np.uint64(GOLDEN_GAMMA))

    def uniform(self, count: int) -> np.ndarray:
        """``count`` float64 uniforms in [0, 1)."""
        return (self.u64_block(count) >> np.uint64(11)).astype(np.float64) * 2.0**-53

    def normal(self, shape, mean: float = 0.0, std: float = 1.0) -> np.ndarray:
        """Float32 normals of any shape; see :func:`seeded_normal` for the rank-4 form."""
        if std < 0:
            raise ValueError(f"std must be non-negative, got {std}")
        shape = tuple(int(s) for s in shape)
        count = math.prod(shape)
        bits = self.u64_block(2 * count) >> np.uint64(11)
        u1 = (bits[0::2].astype(np.float64) + 1.0) * 2.0**-53
        u2 = bits[1::2].astype(np.float64) * 2.0**-53
        z = np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * math.pi * u2)
        return (mean + std * z).astype(np.float32).reshape(shape)


def seeded_normal(prng: Prng, shape: Iterable[int], mean: float = 0.0, std: float = 1.0) -> Tensor:
    """Deterministic pseudo-normal tensor drawn from ``prng``."""
    return prng.normal(_check_shape(shape), mean, std)


def elementwise(op: str, a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"elementwise {op}: shape mismatch {a.shape} vs {b.shape}")
    if op == "add":
        return np.add(a, b, dtype=np.float32)
    if op == "mul":
        return np.multiply(a, b, dtype=np.float32)
    raise ValueError(f"unknown elementwise op {op!r}")
