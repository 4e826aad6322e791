"""Parameter and multiply-accumulate counting over shape-annotated layer records.

Only convolutions contribute MACs: ``C_out * (C_in/g) * kh * kw * H_out * W_out``
per sample.  Bias adds, batch-norm scale/shift, pooling comparisons, fusion
products and elementwise adds are reported separately as ``other_ops``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Iterable

from ..errors import AnalysisError
from .config import ModelConfig
from .graph import LayerRecord
from .network import build_network


@dataclass
class LayerCost:
    name: str
    kind: str
    out_shape: tuple[int, int, int, int]
    params: int
    macs: int
    other_ops: int


@dataclass
class FlopsReport:
    input_size: tuple[int, int]
    layers: list[LayerCost] = field(default_factory=list)

    @property
    def total_params(self) -> int:
        return sum(l.params for l in self.layers)

    @property
    def total_macs(self) -> int:
        return sum(l.macs for l in self.layers)

    @property
    def total_other_ops(self) -> int:
        return sum(l.other_ops for l in self.layers)

    def subtotal(self, prefix: str) -> dict[str, int]:
        chosen = [l for l in self.layers if l.name.startswith(prefix)]
        return {"params": sum(l.params for l in chosen), "macs": sum(l.macs for l in chosen)}

    def to_dict(self, layers: bool = True) -> dict:
        out = {
            "input_size": list(self.input_size),
            "total_params": self.total_params,
            "total_macs": self.total_macs,
            "total_other_ops": self.total_other_ops,
            "backbone": self.subtotal("backbone."),
        }
        if layers:
            out["layers"] = [dict(asdict(l), out_shape=list(l.out_shape)) for l in self.layers]
        return out


def layer_cost(rec: LayerRecord) -> LayerCost:
    if rec.out_shape is None or any(s is None for s in rec.out_shape):
        raise AnalysisError(f"layer {rec.name!r} has no shape annotation")
    n, c, h, w = rec.out_shape
    out_elems = n * c * h * w
    params = macs = other = 0
    if rec.kind == "conv":
        p = rec.conv
        if p is None:
            raise AnalysisError(f"conv layer {rec.name!r} lacks convolution parameters")
        weights = p.out_channels * (p.in_channels // p.groups) * p.kernel[0] * p.kernel[1]
        params = weights
        macs = weights * h * w * n
        if rec.bias:
            params += p.out_channels
            other += out_elems
        if rec.bn:
            params += 2 * p.out_channels
            other += 2 * out_elems
    elif rec.kind in ("maxpool", "avgpool"):
        k = rec.attrs["kernel"]
        other = out_elems * k * k
    elif rec.kind == "fuse":
        params = len(rec.inputs)
        other = 2 * len(rec.inputs) * out_elems
    elif rec.kind in ("add", "act"):
        other = out_elems
    return LayerCost(rec.name, rec.kind, tuple(rec.out_shape), params, macs, other)


def count_params_flops(records: Iterable[LayerRecord], input_size: tuple[int, int]) -> FlopsReport:
    return FlopsReport(tuple(input_size), [layer_cost(r) for r in records])


def compare_with_baseline(cfg: ModelConfig, input_size: tuple[int, int] | None = None) -> dict:
    """Counts for the proposed network and the CSP/SPP baseline with the same neck and head."""
    size = tuple(input_size or cfg.input_size)
    proposed = count_params_flops(build_network(cfg, size).records, size)
    baseline = count_params_flops(build_network(cfg, size, baseline=True).records, size)
    return {
        "proposed": proposed,
        "baseline": baseline,
        "summary": {
            "input_size": list(size),
            "classes": cfg.class_count,
            "proposed_backbone_macs": proposed.subtotal("backbone.")["macs"],
            "baseline_backbone_macs": baseline.subtotal("backbone.")["macs"],
            "proposed_backbone_params": proposed.subtotal("backbone.")["params"],
            "baseline_backbone_params": baseline.subtotal("backbone.")["params"],
            "proposed_macs": proposed.total_macs,
            "baseline_macs": baseline.total_macs,
            "proposed_params": proposed.total_params,
            "baseline_params": baseline.total_params,
        },
    }
