"""Convolutional building blocks on NCHW float32 tensors.

Every function here is pure: inputs are never modified and a fresh array is
returned.  Convolution is cross-correlation with zero padding.  The direct
convolution loop (compiled with numba) accumulates each output element in
float64 in a fixed order (kernel row, kernel column, then input channel
within the group) and rounds once to float32, so repeated runs are bitwise
identical regardless of BLAS or thread settings.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numba
import numpy as np

from .errors import ParamError, ShapeError
from .tensor import Tensor

ACTIVATIONS = ("relu", "silu", "sigmoid", "identity")


def _pair(v) -> tuple[int, int]:
    if isinstance(v, (tuple, list)):
        if len(v) != 2:
            raise ParamError(f"expected a pair, got {v!r}")
        return int(v[0]), int(v[1])
    return int(v), int(v)


def _check4(x: Tensor, what: str = "input") -> None:
    if not isinstance(x, np.ndarray) or x.ndim != 4:
        raise ShapeError(f"{what} must be a rank-4 NCHW array, got {getattr(x, 'shape', type(x))}")


@dataclass(frozen=True)
class ConvParams:
    """Geometry of a (possibly grouped) 2-D convolution.

    ``groups == 1`` is a standard convolution, ``groups == in_channels ==
    out_channels`` a depth-wise one, and a (1, 1) kernel a point-wise one.
    """

    in_channels: int
    out_channels: int
    kernel: tuple[int, int] = (1, 1)
    stride: tuple[int, int] = (1, 1)
    padding: tuple[int, int] = (0, 0)
    groups: int = 1

    def __post_init__(self):
        object.__setattr__(self, "kernel", _pair(self.kernel))
        object.__setattr__(self, "stride", _pair(self.stride))
        object.__setattr__(self, "padding", _pair(self.padding))
        if self.in_channels < 1 or self.out_channels < 1 or self.groups < 1:
            raise ParamError(f"channel and group counts must be positive: {self}")
        if self.in_channels % self.groups or self.out_channels % self.groups:
            raise ParamError(
                f"groups={self.groups} must divide in_channels={self.in_channels} "
                f"and out_channels={self.out_channels}"
            )
        if min(self.kernel) < 1 or min(self.stride) < 1 or min(self.padding) < 0:
            raise ParamError(f"invalid kernel/stride/padding: {self}")

    @classmethod
    def from_weight(cls, weight_shape, stride=1, padding=0, groups: int = 1) -> "ConvParams":
        if len(weight_shape) != 4:
            raise ShapeError(f"conv weight must be rank 4, got shape {tuple(weight_shape)}")
        cout, cin_g, kh, kw = (int(s) for s in weight_shape)
        return cls(cin_g * groups, cout, (kh, kw), _pair(stride), _pair(padding), groups)

    @property
    def weight_shape(self) -> tuple[int, int, int, int]:
        return (self.out_channels, self.in_channels // self.groups, *self.kernel)

    @property
    def is_depthwise(self) -> bool:
        return self.groups == self.in_channels == self.out_channels

    @property
    def is_pointwise(self) -> bool:
        return self.kernel == (1, 1)

    def output_size(self, h: int, w: int) -> tuple[int, int]:
        (kh, kw), (sh, sw), (ph, pw) = self.kernel, self.stride, self.padding
        ho = (h + 2 * ph - kh) // sh + 1
        wo = (w + 2 * pw - kw) // sw + 1
        if h + 2 * ph < kh or w + 2 * pw < kw or ho < 1 or wo < 1:
            raise ParamError(f"convolution {self} on {h}x{w} input gives an empty output")
        return ho, wo


@dataclass
class BnParams:
    gamma: np.ndarray
    beta: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray
    eps: float = 1e-5

    def __post_init__(self):
        sizes = {np.size(a) for a in (self.gamma, self.beta, self.running_mean, self.running_var)}
        if len(sizes) != 1:
            raise ShapeError("batch-norm parameter arrays differ in length")
        if np.any(np.asarray(self.running_var) < 0) or self.eps <= 0:
            raise ParamError("batch norm needs running_var >= 0 and eps > 0")

    @property
    def channels(self) -> int:
        return int(np.size(self.gamma))

    @classmethod
    def identity(cls, channels: int, eps: float = 1e-5) -> "BnParams":
        return cls(
            np.ones(channels, np.float32),
            np.zeros(channels, np.float32),
            np.zeros(channels, np.float32),
            np.ones(channels, np.float32),
            eps,
        )


def conv2d(x: Tensor, weight: np.ndarray, bias: np.ndarray | None = None,
           stride=1, padding=0, groups: int = 1) -> Tensor:
    """Grouped 2-D cross-correlation.

    ``weight`` has shape (C_out, C_in/groups, kh, kw).  Output channel ``o`` of
    group ``q`` reads only input channels ``[q*C_in/g, (q+1)*C_in/g)``.
    """
    _check4(x)
    p = ConvParams.from_weight(weight.shape, stride, padding, groups)
    n, c, h, w = x.shape
    if c != p.in_channels:
        raise ShapeError(f"input has {c} channels, weight {tuple(weight.shape)} with groups={groups} expects {p.in_channels}")
    if bias is not None and np.size(bias) != p.out_channels:
        raise ShapeError(f"bias has {np.size(bias)} entries, expected {p.out_channels}")
    ho, wo = p.output_size(h, w)
    (kh, kw), (sh, sw), (ph, pw) = p.kernel, p.stride, p.padding

    hp, wp = h + 2 * ph, w + 2 * pw
    xp = np.zeros((n, c, hp, wp), dtype=np.float64)
    xp[:, :, ph:ph + h, pw:pw + w] = np.asarray(x, np.float32)
    # one column-shifted, column-strided copy per kernel column: cols[b, ci, kx, y, ox] = xp[b, ci, y, ox*sw + kx]
    cols = np.empty((n, c, kw, hp, wo), dtype=np.float64)
    for kx in range(kw):
        cols[:, :, kx] = xp[:, :, :, kx:kx + sw * (wo - 1) + 1:sw]
    b64 = np.zeros(p.out_channels) if bias is None else np.asarray(bias, np.float32).astype(np.float64).ravel()
    return _conv_rows(cols, np.ascontiguousarray(weight, np.float32), b64, sh, groups, ho, wo)


@numba.njit(cache=True)
def _conv_rows(cols, weight, bias, sh, groups, ho, wo):
    """Direct grouped convolution over pre-shifted rows.

    Each output element is accumulated in float64 as
    ``sum over ky, then kx, then ci`` (in that nesting order), bias added
    last, then rounded once to float32.
    """
    n = cols.shape[0]
    cout, cig, kh, kw = weight.shape
    cog = cout // groups
    out = np.empty((n, cout, ho, wo), np.float32)
    acc = np.empty((cog, wo), np.float64)
    for b in range(n):
        for q in range(groups):
            for oy in range(ho):
                acc[:, :] = 0.0
                for ky in range(kh):
                    iy = oy * sh + ky
                    for kx in range(kw):
                        for ci in range(cig):
                            row = cols[b, q * cig + ci, kx, iy]
                            for oo in range(cog):
                                wv = np.float64(weight[q * cog + oo, ci, ky, kx])
                                a = acc[oo]
                                for ox in range(wo):
                                    a[ox] += wv * row[ox]
                for oo in range(cog):
                    o = q * cog + oo
                    for ox in range(wo):
                        out[b, o, oy, ox] = acc[oo, ox] + bias[o]
    return out


def channel_shuffle(x: Tensor, groups: int) -> Tensor:
    """Interleave channels across ``groups``: channel ``q*n + r`` moves to ``r*groups + q``."""
    _check4(x)
    b, c, h, w = x.shape
    if groups < 1 or c % groups:
        raise ParamError(f"channel_shuffle: groups={groups} must divide {c} channels")
    return np.ascontiguousarray(
        x.reshape(b, groups, c // groups, h, w).transpose(0, 2, 1, 3, 4).reshape(b, c, h, w)
    )


def channel_split(x: Tensor) -> tuple[Tensor, Tensor]:
    _check4(x)
    c = x.shape[1]
    if c % 2:
        raise ShapeError(f"channel_split needs an even channel count, got {c}")
    half = c // 2
    return np.ascontiguousarray(x[:, :half]), np.ascontiguousarray(x[:, half:])


def concat_channels(parts: Sequence[Tensor]) -> Tensor:
    if not parts:
        raise ShapeError("concat_channels needs at least one tensor")
    for p in parts:
        _check4(p)
    ref = parts[0].shape
    for p in parts[1:]:
        if (p.shape[0], p.shape[2], p.shape[3]) != (ref[0], ref[2], ref[3]):
            raise ShapeError(f"concat_channels: incompatible shapes {ref} and {p.shape}")
    return np.concatenate(parts, axis=1).astype(np.float32, copy=False)


def batchnorm(x: Tensor, bn: BnParams) -> Tensor:
    """Inference-mode normalisation, applied directly (the unfolded path)."""
    _check4(x)
    if x.shape[1] != bn.channels:
        raise ShapeError(f"batchnorm: {x.shape[1]} channels vs {bn.channels} parameters")
    shape = (1, -1, 1, 1)
    mean = np.asarray(bn.running_mean, np.float32).reshape(shape)
    inv = (1.0 / np.sqrt(np.asarray(bn.running_var, np.float64) + bn.eps)).astype(np.float32).reshape(shape)
    gamma = np.asarray(bn.gamma, np.float32).reshape(shape)
    beta = np.asarray(bn.beta, np.float32).reshape(shape)
    return ((x - mean) * inv * gamma + beta).astype(np.float32)


def batchnorm_fold(weight: np.ndarray, bias: np.ndarray | None, bn: BnParams) -> tuple[np.ndarray, np.ndarray]:
    """Fold inference batch norm into the preceding convolution's weight and bias."""
    cout = weight.shape[0]
    if bn.channels != cout:
        raise ShapeError(f"batchnorm_fold: conv has {cout} outputs, bn has {bn.channels} channels")
    if bias is None:
        bias = np.zeros(cout, np.float64)
    elif np.size(bias) != cout:
        raise ShapeError(f"batchnorm_fold: bias has {np.size(bias)} entries, expected {cout}")
    scale = np.asarray(bn.gamma, np.float64) / np.sqrt(np.asarray(bn.running_var, np.float64) + bn.eps)
    w = np.asarray(weight, np.float64) * scale.reshape(-1, *([1] * (weight.ndim - 1)))
    b = (np.asarray(bias, np.float64) - np.asarray(bn.running_mean, np.float64)) * scale + np.asarray(bn.beta, np.float64)
    return w.astype(np.float32), b.astype(np.float32)


def sigmoid(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x)
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(x.dtype, copy=False)


def activation(kind: str, x: Tensor) -> Tensor:
    if kind == "relu":
        return np.maximum(x, np.float32(0))
    if kind == "silu":
        return (x * sigmoid(x)).astype(np.float32, copy=False)
    if kind == "sigmoid":
        return sigmoid(x)
    if kind == "identity":
        return np.array(x, dtype=np.float32, copy=True)
    raise ParamError(f"unknown activation {kind!r}; expected one of {ACTIVATIONS}")


def _pool_geometry(x: Tensor, kernel, stride, padding) -> tuple[tuple[int, int], tuple[int, int], tuple[int, int], int, int]:
    _check4(x)
    k, s, p = _pair(kernel), _pair(stride), _pair(padding)
    if min(k) < 1 or min(s) < 1 or min(p) < 0:
        raise ParamError(f"invalid pooling kernel={k} stride={s} padding={p}")
    if p[0] > k[0] // 2 or p[1] > k[1] // 2:
        # a window could then lie entirely in the padding
        raise ParamError(f"pool padding {p} exceeds half the kernel {k}")
    h, w = x.shape[2], x.shape[3]
    ho = (h + 2 * p[0] - k[0]) // s[0] + 1
    wo = (w + 2 * p[1] - k[1]) // s[1] + 1
    if h + 2 * p[0] < k[0] or w + 2 * p[1] < k[1] or ho < 1 or wo < 1:
        raise ParamError(f"pool kernel {k} does not fit a {h}x{w} input with padding {p}")
    return k, s, p, ho, wo


def maxpool2d(x: Tensor, kernel, stride=None, padding=0) -> Tensor:
    """Window maximum; padded positions never win (they act as -inf)."""
    stride = kernel if stride is None else stride
    (kh, kw), (sh, sw), (ph, pw), ho, wo = _pool_geometry(x, kernel, stride, padding)
    n, c, h, w = x.shape
    xp = np.full((n, c, h + 2 * ph, w + 2 * pw), -np.inf, dtype=np.float32)
    xp[:, :, ph:ph + h, pw:pw + w] = x
    out = np.full((n, c, ho, wo), -np.inf, dtype=np.float32)
    for ky in range(kh):
        for kx in range(kw):
            np.maximum(out, xp[:, :, ky:ky + sh * (ho - 1) + 1:sh, kx:kx + sw * (wo - 1) + 1:sw], out=out)
    return out


def avgpool2d(x: Tensor, kernel, stride=None, padding=0) -> Tensor:
    """Window mean with zero padding counted in the divisor."""
    stride = kernel if stride is None else stride
    (kh, kw), (sh, sw), (ph, pw), ho, wo = _pool_geometry(x, kernel, stride, padding)
    n, c, h, w = x.shape
    xp = np.zeros((n, c, h + 2 * ph, w + 2 * pw), dtype=np.float32)
    xp[:, :, ph:ph + h, pw:pw + w] = x
    out = np.zeros((n, c, ho, wo), dtype=np.float32)
    for ky in range(kh):
        for kx in range(kw):
            out += xp[:, :, ky:ky + sh * (ho - 1) + 1:sh, kx:kx + sw * (wo - 1) + 1:sw]
    return (out * np.float32(1.0 / (kh * kw))).astype(np.float32)


def sppf(x: Tensor, cv1_weight, cv1_bias, cv2_weight, cv2_bias, pool_kernel: int = 5, act: str = "silu") -> Tensor:
    """Fast spatial pyramid pooling with already-folded 1x1 convolutions.

    1x1 conv to half width, three chained stride-1 max-pools, concat of the
    four maps, 1x1 conv to ``cv2_weight.shape[0]`` channels.
    """
    _check4(x)
    if x.shape[1] % 2:
        raise ParamError(f"sppf needs an even channel count, got {x.shape[1]}")
    pad = pool_kernel // 2
    y = activation(act, conv2d(x, cv1_weight, cv1_bias))
    p1 = maxpool2d(y, pool_kernel, 1, pad)
    p2 = maxpool2d(p1, pool_kernel, 1, pad)
    p3 = maxpool2d(p2, pool_kernel, 1, pad)
    return activation(act, conv2d(concat_channels([y, p1, p2, p3]), cv2_weight, cv2_bias))


def focus_slice(x: Tensor) -> Tensor:
    """2x2 space-to-depth.

    Channel blocks are ordered (even row, even col), (even row, odd col),
    (odd row, even col), (odd row, odd col).
    """
    _check4(x)
    h, w = x.shape[2], x.shape[3]
    if h % 2 or w % 2:
        raise ParamError(f"focus_slice needs even spatial extents, got {h}x{w}")
    return np.concatenate(
        [x[:, :, 0::2, 0::2], x[:, :, 0::2, 1::2], x[:, :, 1::2, 0::2], x[:, :, 1::2, 1::2]], axis=1
    ).astype(np.float32, copy=False)


def focus_unslice(x: Tensor) -> Tensor:
    """Inverse of :func:`focus_slice`."""
    _check4(x)
    n, c4, h, w = x.shape
    if c4 % 4:
        raise ParamError(f"focus_unslice needs a channel count divisible by 4, got {c4}")
    c = c4 // 4
    out = np.empty((n, c, 2 * h, 2 * w), dtype=np.float32)
    out[:, :, 0::2, 0::2] = x[:, 0:c]
    out[:, :, 0::2, 1::2] = x[:, c:2 * c]
    out[:, :, 1::2, 0::2] = x[:, 2 * c:3 * c]
    out[:, :, 1::2, 1::2] = x[:, 3 * c:]
    return out


def upsample_nearest2x(x: Tensor) -> Tensor:
    _check4(x)
    return np.repeat(np.repeat(x, 2, axis=2), 2, axis=3).astype(np.float32, copy=False)


def weighted_fusion(features: Sequence[Tensor], weights: Sequence[float], eps: float = 1e-4) -> Tensor:
    """Fast normalised fusion: ``sum(w_i * F_i) / (sum(w_i) + eps)`` with ``w_i`` clamped at 0."""
    if len(features) < 2:
        raise ShapeError("weighted_fusion needs at least two feature maps")
    if len(weights) != len(features):
        raise ShapeError(f"{len(features)} features but {len(weights)} fusion weights")
    shape = features[0].shape
    for f in features[1:]:
        if f.shape != shape:
            raise ShapeError(f"weighted_fusion: shape mismatch {shape} vs {f.shape}")
    w = np.maximum(np.asarray(weights, dtype=np.float32), np.float32(0))
    denom = np.float32(w.sum(dtype=np.float32) + np.float32(eps))
    acc = np.zeros(shape, dtype=np.float32)
    for wi, f in zip(w, features):
        acc += wi * f
    return acc / denom
