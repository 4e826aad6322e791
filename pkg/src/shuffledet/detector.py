"""Single-image detection: letterbox, forward, decode, suppress, map back."""

from __future__ import annotations

from dataclasses import replace

import numpy as np

from .model.network import Model
from .postprocess import (
    DEFAULT_CONF,
    DEFAULT_IOU,
    Detection,
    apply_inverse,
    decode_predictions,
    letterbox_image,
    letterbox_map,
    nms,
)


def detect(model: Model, image: np.ndarray, conf_threshold: float = DEFAULT_CONF,
           iou_threshold: float = DEFAULT_IOU, image_id: str = "") -> list[Detection]:
    """Detections for a (1, 3, h, w) image, in that image's pixel frame."""
    transform = letterbox_map(image.shape[2:], model.cfg.input_size)
    raw = model.forward(letterbox_image(image, transform))
    dets = decode_predictions([raw["P3"], raw["P4"], raw["P5"]], model.cfg.anchors, conf_threshold)
    return [replace(apply_inverse(transform, d), image_id=image_id) for d in nms(dets, iou_threshold)]
