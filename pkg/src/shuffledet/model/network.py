"""Detector assembly: shuffle-unit backbone, weighted-fusion FPN/PAN neck, three-scale head."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from ..errors import ParamError, ShapeError
from ..tensor import Prng
from .config import ModelConfig
from .graph import GraphBuilder, LayerRecord, execute, fold_weights
from .units import add_c3, add_shuffle_unit_v1, add_shuffle_unit_v2, add_spp, add_sppf

WeightStore = dict  # ordered name -> float32 ndarray

BASELINE_WIDTHS = (64, 128, 256, 512, 1024)
BASELINE_DEPTHS = (3, 9, 9, 3)


def add_backbone(b: GraphBuilder, cfg: ModelConfig, image: str = "image") -> tuple[str, str, str]:
    """Stem conv + max-pool, then three shuffle stages; returns the stride 8/16/32 outputs."""
    _, c, h, w = b.shape(image)
    if h % 32 or w % 32:
        raise ParamError(f"input {h}x{w} is not divisible by 32")
    x = b.conv("backbone.stem.conv", image, cfg.stage_channels[0], 3, 2, act="relu")
    x = b.maxpool("backbone.stem.pool", x, 3, 2, 1)
    taps = []
    for s, (out_c, repeats) in enumerate(zip(cfg.stage_channels[1:], cfg.stage_repeats)):
        for u in range(repeats):
            prefix = f"backbone.stage{s + 2}.unit{u}"
            stride = 2 if u == 0 else 1
            if cfg.unit_style == "v2_split":
                x = add_shuffle_unit_v2(b, prefix, x, out_c, stride)
            else:
                x = add_shuffle_unit_v1(b, prefix, x, out_c, stride, cfg.group_count)
        taps.append(x)
    if cfg.sppf_enabled:
        taps[-1] = add_sppf(b, "backbone.sppf", taps[-1], cfg.stage_channels[-1])
    return taps[0], taps[1], taps[2]


def add_baseline_backbone(b: GraphBuilder, image: str = "image") -> tuple[str, str, str]:
    """YOLOv5-style CSP backbone (Focus stem, C3 stages, 1024-wide conv, SPP) used only for counting."""
    w = BASELINE_WIDTHS
    x = b.focus("backbone.focus", image)
    x = b.conv("backbone.stem.conv", x, w[0], 3)
    taps = []
    for s in range(4):
        x = b.conv(f"backbone.down{s + 1}", x, w[s + 1], 3, 2)
        if s == 3:
            x = add_spp(b, "backbone.spp", x, w[4])
        x = add_c3(b, f"backbone.c3_{s + 1}", x, w[s + 1], BASELINE_DEPTHS[s], shortcut=s < 3)
        taps.append(x)
    return taps[1], taps[2], taps[3]


def add_neck_head(b: GraphBuilder, cfg: ModelConfig, c3: str, c4: str, c5: str) -> tuple[str, str, str]:
    """Top-down then bottom-up weighted fusion, followed by per-scale 1x1 prediction convs."""
    width, eps = cfg.neck_width, cfg.fusion_epsilon
    l3 = b.conv("neck.lateral3", c3, width, 1)
    l4 = b.conv("neck.lateral4", c4, width, 1)
    l5 = b.conv("neck.lateral5", c5, width, 1)

    up5 = b.upsample("neck.td4.up", l5)
    td4 = b.conv("neck.td4.conv", b.fuse("neck.td4.fuse", [l4, up5], eps), width, 3)
    up4 = b.upsample("neck.td3.up", td4)
    out3 = b.conv("neck.td3.conv", b.fuse("neck.td3.fuse", [l3, up4], eps), width, 3)

    d3 = b.conv("neck.bu4.down", out3, width, 3, 2)
    out4 = b.conv("neck.bu4.conv", b.fuse("neck.bu4.fuse", [td4, d3], eps), width, 3)
    d4 = b.conv("neck.bu5.down", out4, width, 3, 2)
    out5 = b.conv("neck.bu5.conv", b.fuse("neck.bu5.fuse", [l5, d4], eps), width, 3)

    heads = tuple(
        b.conv(f"head.p{k}", feat, cfg.head_channels, 1, act="identity", bn=False, bias=True)
        for k, feat in zip((3, 4, 5), (out3, out4, out5))
    )
    return heads  # type: ignore[return-value]


@dataclass
class Network:
    records: list[LayerRecord]
    inputs: dict[str, tuple[int, int, int, int]]
    taps: dict[str, str]  # role (C3..P5) -> tensor name

    def weight_shapes(self) -> dict[str, tuple[int, ...]]:
        shapes: dict[str, tuple[int, ...]] = {}
        for rec in self.records:
            shapes.update(rec.weight_shapes())
        return shapes


def build_network(cfg: ModelConfig, input_size: tuple[int, int] | None = None, baseline: bool = False) -> Network:
    h, w = input_size or cfg.input_size
    b = GraphBuilder({"image": (1, 3, h, w)})
    c3, c4, c5 = (add_baseline_backbone(b) if baseline else add_backbone(b, cfg))
    p3, p4, p5 = add_neck_head(b, cfg, c3, c4, c5)
    return Network(b.records, b.inputs, dict(C3=c3, C4=c4, C5=c5, P3=p3, P4=p4, P5=p5))


def backbone_network(cfg: ModelConfig, input_size: tuple[int, int]) -> Network:
    b = GraphBuilder({"image": (1, 3, *input_size)})
    c3, c4, c5 = add_backbone(b, cfg)
    return Network(b.records, b.inputs, dict(C3=c3, C4=c4, C5=c5))


def neck_head_network(cfg: ModelConfig, shapes: Mapping[str, tuple[int, ...]]) -> Network:
    b = GraphBuilder({k: shapes[k] for k in ("C3", "C4", "C5")})
    p3, p4, p5 = add_neck_head(b, cfg, "C3", "C4", "C5")
    return Network(b.records, b.inputs, dict(P3=p3, P4=p4, P5=p5))


def init_weights(cfg: ModelConfig, seed: int = 0, network: Network | None = None) -> WeightStore:
    """Deterministic stand-in weights drawn from :class:`Prng`.

    Convolutions get He-normal weights; batch-norm statistics are drawn close
    to the identity; fusion weights start at 1; head biases use the usual
    YOLO objectness/class priors so an untrained model stays quiet.
    """
    network = network or build_network(cfg)
    prng = Prng(seed)
    head_strides = dict(zip(("head.p3", "head.p4", "head.p5"), cfg.anchors.strides))
    store: WeightStore = {}
    for rec in network.records:
        if rec.kind == "fuse":
            store[f"{rec.name}.weight"] = np.ones(len(rec.inputs), np.float32)
            continue
        if rec.kind != "conv":
            continue
        p = rec.conv
        fan_in = (p.in_channels // p.groups) * p.kernel[0] * p.kernel[1]
        if rec.name in head_strides:
            store[f"{rec.name}.weight"] = prng.normal(p.weight_shape, 0.0, 0.01)
        else:
            store[f"{rec.name}.weight"] = prng.normal(p.weight_shape, 0.0, math.sqrt(2.0 / fan_in))
        if rec.bias:
            bias = np.zeros(p.out_channels, np.float32)
            if rec.name in head_strides:
                no = 5 + cfg.class_count
                cells = (cfg.input_size[0] / head_strides[rec.name]) * (cfg.input_size[1] / head_strides[rec.name])
                per_anchor = bias.reshape(-1, no)
                per_anchor[:, 4] = math.log(8.0 / cells)
                per_anchor[:, 5:] = math.log(0.6 / (cfg.class_count - 0.99)) if cfg.class_count > 1 else 0.0
            store[f"{rec.name}.bias"] = bias
        if rec.bn:
            c = p.out_channels
            store[f"{rec.name}.bn.gamma"] = prng.normal((c,), 1.0, 0.05)
            store[f"{rec.name}.bn.beta"] = prng.normal((c,), 0.0, 0.05)
            store[f"{rec.name}.bn.running_mean"] = prng.normal((c,), 0.0, 0.05)
            store[f"{rec.name}.bn.running_var"] = (1.0 + np.abs(prng.normal((c,), 0.0, 0.1))).astype(np.float32)
    return store


def build_backbone(cfg: ModelConfig, store: Mapping[str, np.ndarray], image: np.ndarray):
    """Run the backbone on a (1, 3, h, w) image; returns (C3, C4, C5)."""
    if image.ndim != 4 or image.shape[0] != 1 or image.shape[1] != 3:
        raise ShapeError(f"backbone expects a (1, 3, h, w) image, got {image.shape}")
    net = backbone_network(cfg, image.shape[2:])
    out = execute(net.records, store, {"image": image}, [net.taps[k] for k in ("C3", "C4", "C5")])
    return tuple(out[net.taps[k]] for k in ("C3", "C4", "C5"))


def build_neck_head(cfg: ModelConfig, store: Mapping[str, np.ndarray], c3, c4, c5):
    """Run neck and head on backbone features; returns raw (pre-sigmoid) P3, P4, P5."""
    net = neck_head_network(cfg, {"C3": c3.shape, "C4": c4.shape, "C5": c5.shape})
    out = execute(net.records, store, {"C3": c3, "C4": c4, "C5": c5}, [net.taps[k] for k in ("P3", "P4", "P5")])
    return tuple(out[net.taps[k]] for k in ("P3", "P4", "P5"))


class Model:
    """A built network bound to a weight store, with batch norm folded once."""

    def __init__(self, cfg: ModelConfig, store: Mapping[str, np.ndarray]):
        self.cfg = cfg
        self.network = build_network(cfg)
        self.store = store
        self.folded = fold_weights(self.network.records, store)

    def forward(self, image: np.ndarray, features: bool = False) -> dict[str, np.ndarray]:
        expected = self.network.inputs["image"]
        if tuple(image.shape) != expected:
            raise ShapeError(f"model expects input {expected}, got {image.shape}")
        roles = ("C3", "C4", "C5", "P3", "P4", "P5") if features else ("P3", "P4", "P5")
        out = execute(self.network.records, self.store, {"image": image},
                      [self.network.taps[r] for r in roles], self.folded)
        return {r: out[self.network.taps[r]] for r in roles}
