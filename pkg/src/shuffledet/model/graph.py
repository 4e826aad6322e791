"""Declarative layer graph: shape-annotated records, a builder, and an executor.

The network is described once as a list of :class:`LayerRecord` objects in
topological order.  The same list drives weight initialisation, FLOPs
counting (no execution needed) and inference, and the executor checks every
produced tensor against the annotated shape.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .. import ops
from ..errors import ParamError, ShapeError, StoreError
from ..ops import BnParams, ConvParams

Shape = tuple[int, int, int, int]

KINDS = ("conv", "maxpool", "avgpool", "focus", "shuffle", "slice", "concat", "upsample", "fuse", "add", "act")
BN_FIELDS = ("gamma", "beta", "running_mean", "running_var")
BN_EPS = 1e-5


@dataclass
class LayerRecord:
    name: str
    kind: str
    inputs: tuple[str, ...]
    in_shapes: tuple[Shape, ...]
    out_shape: Shape
    conv: ConvParams | None = None
    act: str = "identity"
    bn: bool = False
    bias: bool = False
    attrs: dict = field(default_factory=dict)

    def weight_shapes(self) -> dict[str, tuple[int, ...]]:
        """Names and shapes of the store entries this layer reads."""
        if self.kind == "conv":
            shapes = {f"{self.name}.weight": self.conv.weight_shape}
            if self.bias:
                shapes[f"{self.name}.bias"] = (self.conv.out_channels,)
            if self.bn:
                for f in BN_FIELDS:
                    shapes[f"{self.name}.bn.{f}"] = (self.conv.out_channels,)
            return shapes
        if self.kind == "fuse":
            return {f"{self.name}.weight": (len(self.inputs),)}
        return {}


class GraphBuilder:
    """Appends records while tracking the shape of every named tensor.

    Graph inputs are declared up front; every method returns the name of the
    tensor it produces, which is also the record name.
    """

    def __init__(self, inputs: Mapping[str, Sequence[int]]):
        self.records: list[LayerRecord] = []
        self.inputs = {k: tuple(int(s) for s in v) for k, v in inputs.items()}
        self.shapes: dict[str, Shape] = dict(self.inputs)

    def shape(self, name: str) -> Shape:
        try:
            return self.shapes[name]
        except KeyError:
            raise ShapeError(f"unknown tensor {name!r}") from None

    def _add(self, name: str, kind: str, inputs: Sequence[str], out_shape: Shape, **kw) -> str:
        if name in self.shapes:
            raise ParamError(f"duplicate layer name {name!r}")
        rec = LayerRecord(name, kind, tuple(inputs), tuple(self.shape(i) for i in inputs), tuple(out_shape), **kw)
        self.records.append(rec)
        self.shapes[name] = rec.out_shape
        return name

    def conv(self, name: str, x: str, out_channels: int, kernel: int = 1, stride: int = 1,
             padding: int | None = None, groups: int = 1, act: str = "silu",
             bn: bool = True, bias: bool = False) -> str:
        n, c, h, w = self.shape(x)
        if padding is None:
            padding = kernel // 2
        p = ConvParams(c, out_channels, (kernel, kernel), (stride, stride), (padding, padding), groups)
        ho, wo = p.output_size(h, w)
        return self._add(name, "conv", [x], (n, out_channels, ho, wo), conv=p, act=act, bn=bn, bias=bias)

    def dwconv(self, name: str, x: str, kernel: int = 3, stride: int = 1, act: str = "identity") -> str:
        c = self.shape(x)[1]
        return self.conv(name, x, c, kernel, stride, groups=c, act=act)

    def _pool(self, kind: str, name: str, x: str, kernel: int, stride: int, padding: int) -> str:
        n, c, h, w = self.shape(x)
        if padding > kernel // 2 or stride < 1:
            raise ParamError(f"{name}: invalid pooling geometry k={kernel} s={stride} p={padding}")
        ho = (h + 2 * padding - kernel) // stride + 1
        wo = (w + 2 * padding - kernel) // stride + 1
        if ho < 1 or wo < 1:
            raise ParamError(f"{name}: pooling leaves an empty output")
        return self._add(name, kind, [x], (n, c, ho, wo), attrs=dict(kernel=kernel, stride=stride, padding=padding))

    def maxpool(self, name: str, x: str, kernel: int, stride: int, padding: int = 0) -> str:
        return self._pool("maxpool", name, x, kernel, stride, padding)

    def avgpool(self, name: str, x: str, kernel: int, stride: int, padding: int = 0) -> str:
        return self._pool("avgpool", name, x, kernel, stride, padding)

    def focus(self, name: str, x: str) -> str:
        n, c, h, w = self.shape(x)
        if h % 2 or w % 2:
            raise ParamError(f"{name}: focus needs even spatial extents, got {h}x{w}")
        return self._add(name, "focus", [x], (n, 4 * c, h // 2, w // 2))

    def shuffle(self, name: str, x: str, groups: int) -> str:
        shape = self.shape(x)
        if shape[1] % groups:
            raise ParamError(f"{name}: {groups} groups do not divide {shape[1]} channels")
        return self._add(name, "shuffle", [x], shape, attrs=dict(groups=groups))

    def slice(self, name: str, x: str, start: int, stop: int) -> str:
        n, c, h, w = self.shape(x)
        if not 0 <= start < stop <= c:
            raise ShapeError(f"{name}: channel slice [{start}, {stop}) outside {c} channels")
        return self._add(name, "slice", [x], (n, stop - start, h, w), attrs=dict(start=start, stop=stop))

    def split(self, prefix: str, x: str) -> tuple[str, str]:
        c = self.shape(x)[1]
        if c % 2:
            raise ParamError(f"{prefix}: channel split needs an even channel count, got {c}")
        return self.slice(f"{prefix}.split0", x, 0, c // 2), self.slice(f"{prefix}.split1", x, c // 2, c)

    def concat(self, name: str, xs: Sequence[str]) -> str:
        shapes = [self.shape(x) for x in xs]
        n, _, h, w = shapes[0]
        if any((s[0], s[2], s[3]) != (n, h, w) for s in shapes):
            raise ShapeError(f"{name}: cannot concatenate shapes {shapes}")
        return self._add(name, "concat", xs, (n, sum(s[1] for s in shapes), h, w))

    def upsample(self, name: str, x: str) -> str:
        n, c, h, w = self.shape(x)
        return self._add(name, "upsample", [x], (n, c, 2 * h, 2 * w))

    def fuse(self, name: str, xs: Sequence[str], eps: float = 1e-4) -> str:
        shapes = {self.shape(x) for x in xs}
        if len(xs) < 2 or len(shapes) != 1:
            raise ShapeError(f"{name}: weighted fusion needs >= 2 equal shapes, got {shapes}")
        return self._add(name, "fuse", xs, shapes.pop(), attrs=dict(eps=eps))

    def add(self, name: str, a: str, b: str) -> str:
        if self.shape(a) != self.shape(b):
            raise ShapeError(f"{name}: cannot add {self.shape(a)} and {self.shape(b)}")
        return self._add(name, "add", [a, b], self.shape(a))

    def act(self, name: str, x: str, kind: str) -> str:
        if kind not in ops.ACTIVATIONS:
            raise ParamError(f"{name}: unknown activation {kind!r}")
        return self._add(name, "act", [x], self.shape(x), act=kind)


def expected_weights(records: Iterable[LayerRecord]) -> dict[str, tuple[int, ...]]:
    shapes: dict[str, tuple[int, ...]] = {}
    for rec in records:
        shapes.update(rec.weight_shapes())
    return shapes


def _get(store: Mapping[str, np.ndarray], name: str, shape: tuple[int, ...]) -> np.ndarray:
    try:
        arr = store[name]
    except KeyError:
        raise StoreError(f"weight {name!r} missing from store") from None
    if tuple(arr.shape) != tuple(shape):
        raise StoreError(f"weight {name!r} has shape {tuple(arr.shape)}, expected {tuple(shape)}")
    return arr


def fold_weights(records: Iterable[LayerRecord], store: Mapping[str, np.ndarray]) -> dict[str, tuple]:
    """Per-conv (weight, bias) with batch norm folded in; fusion weights passed through."""
    folded: dict[str, tuple] = {}
    for rec in records:
        shapes = rec.weight_shapes()
        if rec.kind == "conv":
            w = _get(store, f"{rec.name}.weight", shapes[f"{rec.name}.weight"])
            b = _get(store, f"{rec.name}.bias", shapes[f"{rec.name}.bias"]) if rec.bias else None
            if rec.bn:
                bn = BnParams(*(_get(store, f"{rec.name}.bn.{f}", (rec.conv.out_channels,)) for f in BN_FIELDS), eps=BN_EPS)
                w, b = ops.batchnorm_fold(w, b, bn)
            folded[rec.name] = (np.asarray(w, np.float32), None if b is None else np.asarray(b, np.float32))
        elif rec.kind == "fuse":
            folded[rec.name] = (_get(store, f"{rec.name}.weight", shapes[f"{rec.name}.weight"]),)
    return folded


def _run_one(rec: LayerRecord, args: list[np.ndarray], folded: Mapping[str, tuple]) -> np.ndarray:
    k = rec.kind
    if k == "conv":
        w, b = folded[rec.name]
        p = rec.conv
        return ops.activation(rec.act, ops.conv2d(args[0], w, b, p.stride, p.padding, p.groups))
    if k == "maxpool":
        return ops.maxpool2d(args[0], rec.attrs["kernel"], rec.attrs["stride"], rec.attrs["padding"])
    if k == "avgpool":
        return ops.avgpool2d(args[0], rec.attrs["kernel"], rec.attrs["stride"], rec.attrs["padding"])
    if k == "focus":
        return ops.focus_slice(args[0])
    if k == "shuffle":
        return ops.channel_shuffle(args[0], rec.attrs["groups"])
    if k == "slice":
        return np.ascontiguousarray(args[0][:, rec.attrs["start"]:rec.attrs["stop"]])
    if k == "concat":
        return ops.concat_channels(args)
    if k == "upsample":
        return ops.upsample_nearest2x(args[0])
    if k == "fuse":
        return ops.weighted_fusion(args, folded[rec.name][0], rec.attrs["eps"])
    if k == "add":
        return args[0] + args[1]
    if k == "act":
        return ops.activation(rec.act, args[0])
    raise ParamError(f"unknown layer kind {k!r}")


def execute(records: Sequence[LayerRecord], store: Mapping[str, np.ndarray] | None,
            inputs: Mapping[str, np.ndarray], outputs: Sequence[str],
            folded: Mapping[str, tuple] | None = None) -> dict[str, np.ndarray]:
    """Run ``records`` on ``inputs`` and return the tensors named in ``outputs``.

    Intermediate tensors are released after their last consumer.  Raises
    ``ShapeError`` if any layer produces a shape other than its annotation.
    """
    if folded is None:
        folded = fold_weights(records, store or {})
    last_use: dict[str, int] = {}
    for i, rec in enumerate(records):
        for name in rec.inputs:
            last_use[name] = i
    keep = set(outputs)
    env: dict[str, np.ndarray] = {}
    for name, arr in inputs.items():
        env[name] = arr
    for i, rec in enumerate(records):
        try:
            args = [env[n] for n in rec.inputs]
        except KeyError as exc:
            raise ShapeError(f"layer {rec.name!r} consumes {exc.args[0]!r}, which is not available") from None
        for n, a, expected in zip(rec.inputs, args, rec.in_shapes):
            if tuple(a.shape) != expected:
                raise ShapeError(f"layer {rec.name!r}: input {n!r} has shape {a.shape}, annotated {expected}")
        out = _run_one(rec, args, folded)
        if tuple(out.shape) != rec.out_shape:
            raise ShapeError(f"layer {rec.name!r} produced {out.shape}, annotated {rec.out_shape}")
        env[rec.name] = out
        for n in rec.inputs:
            if last_use.get(n) == i and n not in keep:
                env.pop(n, None)
    missing = [o for o in outputs if o not in env]
    if missing:
        raise ShapeError(f"requested outputs never produced: {missing}")
    return {o: env[o] for o in outputs}
