"""Model configuration and dataset class-name presets."""

from __future__ import annotations

from dataclasses import dataclass, field

from ..errors import ParamError
from ..postprocess import AnchorSet

NEU_DET_CLASSES = ("rolled-in_scale", "patches", "crazing", "inclusion", "pitted_surface", "scratches")
GC10_DET_CLASSES = (
    "punching", "weld_line", "crescent_gap", "inclusion", "water_spot",
    "oil_spot", "silk_spot", "rolled_pit", "crease", "waist_folding",
)


def class_names(count: int) -> tuple[str, ...]:
    """Preset names for 6 (NEU-DET) or 10 (GC10-DET) classes, else ``class0..``."""
    if count == len(NEU_DET_CLASSES):
        return NEU_DET_CLASSES
    if count == len(GC10_DET_CLASSES):
        return GC10_DET_CLASSES
    return tuple(f"class{i}" for i in range(count))


@dataclass(frozen=True)
class ModelConfig:
    input_size: tuple[int, int] = (640, 640)
    class_count: int = 6
    stage_channels: tuple[int, ...] = (24, 116, 232, 464)
    stage_repeats: tuple[int, ...] = (4, 8, 4)
    unit_style: str = "v2_split"
    group_count: int = 2
    sppf_enabled: bool = False
    anchors: AnchorSet = field(default_factory=AnchorSet)
    fusion_epsilon: float = 1e-4
    neck_width: int = 128

    def __post_init__(self):
        object.__setattr__(self, "input_size", tuple(int(v) for v in self.input_size))
        object.__setattr__(self, "stage_channels", tuple(int(v) for v in self.stage_channels))
        object.__setattr__(self, "stage_repeats", tuple(int(v) for v in self.stage_repeats))
        if len(self.stage_channels) != len(self.stage_repeats) + 1:
            raise ParamError("stage_channels must have exactly one more entry than stage_repeats")
        if len(self.stage_repeats) != 3:
            raise ParamError("the detector taps exactly three backbone stages")
        if any(c <= 0 or c % 2 for c in self.stage_channels):
            raise ParamError(f"stage channels must be positive and even: {self.stage_channels}")
        if any(r < 1 for r in self.stage_repeats):
            raise ParamError(f"stage repeats must be >= 1: {self.stage_repeats}")
        if self.class_count < 1:
            raise ParamError("class_count must be >= 1")
        if self.unit_style not in ("v2_split", "v1_grouped"):
            raise ParamError(f"unknown unit_style {self.unit_style!r}")
        if self.group_count < 1:
            raise ParamError("group_count must be >= 1")
        if len(self.anchors.strides) != 3:
            raise ParamError("anchors must cover exactly 3 scales")
        h, w = self.input_size
        if h <= 0 or w <= 0 or h % 32 or w % 32:
            raise ParamError(f"input size {self.input_size} must be positive and divisible by 32")

    @property
    def head_channels(self) -> int:
        return self.anchors.num_anchors * (5 + self.class_count)

    @property
    def class_names(self) -> tuple[str, ...]:
        return class_names(self.class_count)
