"""Building blocks expressed as layer records.

Each ``add_*`` function appends the records of one block to a
:class:`GraphBuilder` and returns the name of the block's output tensor.
The ``shuffle_unit_v1``/``shuffle_unit_v2`` functions run a single unit on
an array, reading weights under ``prefix`` from a store.
"""

from __future__ import annotations

from typing import Mapping

import numpy as np

from ..errors import ParamError
from .graph import GraphBuilder, execute


def add_shuffle_unit_v2(b: GraphBuilder, prefix: str, x: str, out_channels: int, stride: int) -> str:
    in_c = b.shape(x)[1]
    if stride == 1:
        if in_c % 2:
            raise ParamError(f"{prefix}: stride-1 unit needs an even channel count, got {in_c}")
        if out_channels != in_c:
            raise ParamError(f"{prefix}: stride-1 unit keeps the channel count ({in_c} != {out_channels})")
        left, right = b.split(prefix, x)
        half = in_c // 2
        r = b.conv(f"{prefix}.branch2.pw1", right, half, 1, act="relu")
        r = b.dwconv(f"{prefix}.branch2.dw", r, 3, 1)
        r = b.conv(f"{prefix}.branch2.pw2", r, half, 1, act="relu")
    elif stride == 2:
        if out_channels % 2:
            raise ParamError(f"{prefix}: stride-2 unit needs an even output channel count")
        half = out_channels // 2
        left = b.dwconv(f"{prefix}.branch1.dw", x, 3, 2)
        left = b.conv(f"{prefix}.branch1.pw", left, half, 1, act="relu")
        r = b.conv(f"{prefix}.branch2.pw1", x, half, 1, act="relu")
        r = b.dwconv(f"{prefix}.branch2.dw", r, 3, 2)
        r = b.conv(f"{prefix}.branch2.pw2", r, half, 1, act="relu")
    else:
        raise ParamError(f"{prefix}: stride must be 1 or 2, got {stride}")
    y = b.concat(f"{prefix}.concat", [left, r])
    return b.shuffle(f"{prefix}.shuffle", y, 2)


def bottleneck_channels(branch_out: int, groups: int) -> int:
    """Quarter-width bottleneck rounded up to a multiple of ``groups``."""
    mid = max(1, branch_out // 4)
    return -(-mid // groups) * groups


def add_shuffle_unit_v1(b: GraphBuilder, prefix: str, x: str, out_channels: int, stride: int, groups: int) -> str:
    in_c = b.shape(x)[1]
    if in_c % groups:
        raise ParamError(f"{prefix}: {groups} groups do not divide {in_c} input channels")
    if stride == 1:
        if out_channels != in_c:
            raise ParamError(f"{prefix}: stride-1 unit keeps the channel count ({in_c} != {out_channels})")
        branch_out = out_channels
    elif stride == 2:
        branch_out = out_channels - in_c
        if branch_out < 1:
            raise ParamError(f"{prefix}: stride-2 unit must widen {in_c} -> {out_channels}")
    else:
        raise ParamError(f"{prefix}: stride must be 1 or 2, got {stride}")
    if branch_out % groups:
        raise ParamError(f"{prefix}: {groups} groups do not divide {branch_out} branch channels")
    mid = bottleneck_channels(branch_out, groups)
    r = b.conv(f"{prefix}.gconv1", x, mid, 1, groups=groups, act="relu")
    r = b.shuffle(f"{prefix}.shuffle", r, groups)
    r = b.dwconv(f"{prefix}.dw", r, 3, stride)
    r = b.conv(f"{prefix}.gconv2", r, branch_out, 1, groups=groups, act="identity")
    if stride == 1:
        y = b.add(f"{prefix}.add", x, r)
    else:
        shortcut = b.avgpool(f"{prefix}.shortcut", x, 3, 2, 1)
        y = b.concat(f"{prefix}.concat", [shortcut, r])
    return b.act(f"{prefix}.relu", y, "relu")


def add_sppf(b: GraphBuilder, prefix: str, x: str, out_channels: int, pool_kernel: int = 5) -> str:
    c = b.shape(x)[1]
    if c % 2:
        raise ParamError(f"{prefix}: sppf needs an even channel count, got {c}")
    pad = pool_kernel // 2
    y = b.conv(f"{prefix}.cv1", x, c // 2, 1)
    p1 = b.maxpool(f"{prefix}.pool1", y, pool_kernel, 1, pad)
    p2 = b.maxpool(f"{prefix}.pool2", p1, pool_kernel, 1, pad)
    p3 = b.maxpool(f"{prefix}.pool3", p2, pool_kernel, 1, pad)
    cat = b.concat(f"{prefix}.concat", [y, p1, p2, p3])
    return b.conv(f"{prefix}.cv2", cat, out_channels, 1)


def add_spp(b: GraphBuilder, prefix: str, x: str, out_channels: int, kernels=(5, 9, 13)) -> str:
    c = b.shape(x)[1]
    y = b.conv(f"{prefix}.cv1", x, c // 2, 1)
    pools = [b.maxpool(f"{prefix}.pool{k}", y, k, 1, k // 2) for k in kernels]
    cat = b.concat(f"{prefix}.concat", [y, *pools])
    return b.conv(f"{prefix}.cv2", cat, out_channels, 1)


def add_c3(b: GraphBuilder, prefix: str, x: str, out_channels: int, repeats: int, shortcut: bool = True) -> str:
    """CSP bottleneck with three convolutions (the YOLOv5 C3 block)."""
    hidden = out_channels // 2
    y = b.conv(f"{prefix}.cv1", x, hidden, 1)
    for i in range(repeats):
        t = b.conv(f"{prefix}.m{i}.cv1", y, hidden, 1)
        t = b.conv(f"{prefix}.m{i}.cv2", t, hidden, 3)
        y = b.add(f"{prefix}.m{i}.add", y, t) if shortcut else t
    z = b.conv(f"{prefix}.cv2", x, hidden, 1)
    cat = b.concat(f"{prefix}.concat", [y, z])
    return b.conv(f"{prefix}.cv3", cat, out_channels, 1)


def _run_unit(add, x: np.ndarray, store: Mapping[str, np.ndarray], prefix: str, *args) -> np.ndarray:
    b = GraphBuilder({"x": x.shape})
    out = add(b, prefix, "x", *args)
    return execute(b.records, store, {"x": x}, [out])[out]


def shuffle_unit_v2(x: np.ndarray, store: Mapping[str, np.ndarray], prefix: str, stride: int,
                    out_channels: int | None = None) -> np.ndarray:
    """Run one ShuffleNetV2 unit whose weights live under ``prefix`` in ``store``."""
    if out_channels is None:
        out_channels = x.shape[1] if stride == 1 else 2 * x.shape[1]
    return _run_unit(add_shuffle_unit_v2, x, store, prefix, out_channels, stride)


def shuffle_unit_v1(x: np.ndarray, store: Mapping[str, np.ndarray], prefix: str, stride: int, groups: int,
                    out_channels: int | None = None) -> np.ndarray:
    """Run one grouped (ShuffleNet v1 style) residual unit."""
    if out_channels is None:
        out_channels = x.shape[1] if stride == 1 else 2 * x.shape[1]
    return _run_unit(add_shuffle_unit_v1, x, store, prefix, out_channels, stride, groups)
