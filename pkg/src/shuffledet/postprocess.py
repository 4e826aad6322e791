"""Head decoding, non-maximum suppression and letterbox coordinate mapping."""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .errors import ParamError, ShapeError
from .ops import sigmoid

DEFAULT_CONF = 0.25
DEFAULT_IOU = 0.45
PAD_VALUE = 114.0 / 255.0

Box = tuple[float, float, float, float]


@dataclass(frozen=True)
class AnchorSet:
    """Per-scale stride and three (w, h) prior boxes, in input pixels."""

    strides: tuple[int, ...] = (8, 16, 32)
    anchors: tuple[tuple[tuple[float, float], ...], ...] = (
        ((10, 13), (16, 30), (33, 23)),
        ((30, 61), (62, 45), (59, 119)),
        ((116, 90), (156, 198), (373, 326)),
    )

    def __post_init__(self):
        if len(self.strides) != len(self.anchors):
            raise ParamError("AnchorSet needs one anchor list per stride")
        if any(b <= a for a, b in zip(self.strides, self.strides[1:])):
            raise ParamError(f"anchor strides must be strictly increasing: {self.strides}")
        if not self.anchors or len({len(scale) for scale in self.anchors}) != 1 or not self.anchors[0]:
            raise ParamError("every scale needs the same, non-zero number of anchors")
        for scale in self.anchors:
            if any(w <= 0 or h <= 0 for w, h in scale):
                raise ParamError(f"anchor sizes must be positive: {scale}")

    @property
    def num_anchors(self) -> int:
        return len(self.anchors[0])


@dataclass(frozen=True)
class Detection:
    class_id: int
    score: float
    box: Box
    image_id: str = ""

    def to_json(self, class_names: Sequence[str] | None = None) -> dict:
        name = class_names[self.class_id] if class_names and self.class_id < len(class_names) else str(self.class_id)
        return {"class_id": int(self.class_id), "class_name": name, "score": float(self.score),
                "box": [float(v) for v in self.box]}


def decode_predictions(raw: Sequence[np.ndarray], anchors: AnchorSet, conf_threshold: float = DEFAULT_CONF,
                       batch_index: int = 0) -> list[Detection]:
    """Decode raw head maps into detections in the network input frame.

    ``raw[s]`` has shape (n, na*(5+nc), h, w), channel ``a*(5+nc) + k`` holding
    (tx, ty, tw, th, obj, cls_0..). Output order: scale, anchor, row, column.
    """
    if len(raw) != len(anchors.strides):
        raise ShapeError(f"{len(raw)} head outputs for {len(anchors.strides)} anchor scales")
    na = anchors.num_anchors
    dets: list[Detection] = []
    for r, stride, scale_anchors in zip(raw, anchors.strides, anchors.anchors):
        if r.ndim != 4 or r.shape[1] % na or r.shape[1] // na < 6:
            raise ShapeError(f"head output of shape {r.shape} does not hold {na} anchors x (5 + classes)")
        _, ch, h, w = r.shape
        no = ch // na
        p = sigmoid(np.asarray(r[batch_index], np.float64).reshape(na, no, h, w))
        gy, gx = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64), indexing="ij")
        for a, (aw, ah) in enumerate(scale_anchors):
            cls = p[a, 5:]
            cls_id = np.argmax(cls, axis=0)
            score = p[a, 4] * np.max(cls, axis=0)
            keep = np.nonzero(score >= conf_threshold)
            if not keep[0].size:
                continue
            bx = (2.0 * p[a, 0] - 0.5 + gx) * stride
            by = (2.0 * p[a, 1] - 0.5 + gy) * stride
            bw = (2.0 * p[a, 2]) ** 2 * aw
            bh = (2.0 * p[a, 3]) ** 2 * ah
            for y, x in zip(*keep):
                cx, cy, hw, hh = bx[y, x], by[y, x], bw[y, x] / 2.0, bh[y, x] / 2.0
                dets.append(Detection(int(cls_id[y, x]), float(score[y, x]),
                                      (float(cx - hw), float(cy - hh), float(cx + hw), float(cy + hh))))
    return dets


def iou_xyxy(a: Box, b: Box) -> float:
    """Intersection over union of two corner-format boxes (0 when disjoint or both degenerate)."""
    iw = min(a[2], b[2]) - max(a[0], b[0])
    ih = min(a[3], b[3]) - max(a[1], b[1])
    inter = iw * ih if iw > 0 and ih > 0 else 0.0
    union = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter
    if union <= 0:
        return 0.0
    return inter / union


def _iou_one_to_many(box: np.ndarray, boxes: np.ndarray) -> np.ndarray:
    # same float64 operation order as iou_xyxy, so results are bitwise equal
    iw = np.minimum(box[2], boxes[:, 2]) - np.maximum(box[0], boxes[:, 0])
    ih = np.minimum(box[3], boxes[:, 3]) - np.maximum(box[1], boxes[:, 1])
    inter = np.where((iw > 0) & (ih > 0), iw * ih, 0.0)
    union = (box[2] - box[0]) * (box[3] - box[1]) + (boxes[:, 2] - boxes[:, 0]) * (boxes[:, 3] - boxes[:, 1]) - inter
    out = np.zeros(len(boxes))
    ok = union > 0
    out[ok] = inter[ok] / union[ok]
    return out


def nms(dets: Sequence[Detection], iou_threshold: float = DEFAULT_IOU) -> list[Detection]:
    """Greedy per-class suppression.

    Within a class, boxes are visited by descending score (lower input index
    first on ties); a box is dropped if its IoU with an already kept box
    exceeds ``iou_threshold``.  The result is ordered by descending score,
    then input index.
    """
    order = sorted(range(len(dets)), key=lambda i: (-dets[i].score, i))
    by_class: dict[int, list[int]] = {}
    for i in order:
        by_class.setdefault(dets[i].class_id, []).append(i)
    kept: list[int] = []
    for idx in by_class.values():
        boxes = np.array([dets[i].box for i in idx], dtype=np.float64).reshape(-1, 4)
        removed = np.zeros(len(idx), dtype=bool)
        for pos in range(len(idx)):
            if removed[pos]:
                continue
            kept.append(idx[pos])
            if pos + 1 < len(idx):
                removed[pos + 1:] |= _iou_one_to_many(boxes[pos], boxes[pos + 1:]) > iou_threshold
    kept.sort(key=lambda i: (-dets[i].score, i))
    return [dets[i] for i in kept]


@dataclass(frozen=True)
class Letterbox:
    """Uniform resize plus centred padding from an image frame into the model frame.

    Sizes are (height, width).  ``pad_top``/``pad_left`` are whole pixels so
    the mapping agrees exactly with where :func:`letterbox_image` places
    the resized picture.
    """

    image_size: tuple[int, int]
    model_size: tuple[int, int]
    scale: float
    resized: tuple[int, int]
    pad_top: int
    pad_left: int

    def forward_box(self, box: Box) -> Box:
        s = self.scale
        return (box[0] * s + self.pad_left, box[1] * s + self.pad_top,
                box[2] * s + self.pad_left, box[3] * s + self.pad_top)

    def inverse_box(self, box: Box) -> Box:
        ih, iw = self.image_size
        s = self.scale

        def cx(v: float) -> float:
            return min(max((v - self.pad_left) / s, 0.0), float(iw))

        def cy(v: float) -> float:
            return min(max((v - self.pad_top) / s, 0.0), float(ih))

        return (cx(box[0]), cy(box[1]), cx(box[2]), cy(box[3]))


def letterbox_map(image_size: tuple[int, int], model_size: tuple[int, int]) -> Letterbox:
    ih, iw = image_size
    mh, mw = model_size
    if min(ih, iw, mh, mw) <= 0:
        raise ParamError(f"sizes must be positive: image {image_size}, model {model_size}")
    scale = min(mh / ih, mw / iw)
    nh, nw = min(mh, int(round(ih * scale))), min(mw, int(round(iw * scale)))
    return Letterbox((ih, iw), (mh, mw), scale, (nh, nw), (mh - nh) // 2, (mw - nw) // 2)


def apply_inverse(transform: Letterbox, det: Detection) -> Detection:
    return replace(det, box=transform.inverse_box(det.box))


def resize_bilinear(img: np.ndarray, size: tuple[int, int]) -> np.ndarray:
    """Half-pixel-centre bilinear resize of an NCHW array to (height, width)."""
    n, c, h, w = img.shape
    oh, ow = size
    if (oh, ow) == (h, w):
        return np.array(img, dtype=np.float32, copy=True)

    def axis(out_len: int, in_len: int):
        src = (np.arange(out_len, dtype=np.float64) + 0.5) * (in_len / out_len) - 0.5
        src = np.clip(src, 0.0, in_len - 1)
        i0 = np.floor(src).astype(np.intp)
        i1 = np.minimum(i0 + 1, in_len - 1)
        return i0, i1, src - i0

    y0, y1, fy = axis(oh, h)
    x0, x1, fx = axis(ow, w)
    src = np.asarray(img, np.float64)
    top = src[:, :, y0][:, :, :, x0] * (1 - fx) + src[:, :, y0][:, :, :, x1] * fx
    bot = src[:, :, y1][:, :, :, x0] * (1 - fx) + src[:, :, y1][:, :, :, x1] * fx
    return (top * (1 - fy)[:, None] + bot * fy[:, None]).astype(np.float32)


def letterbox_image(img: np.ndarray, transform: Letterbox) -> np.ndarray:
    n, c = img.shape[:2]
    mh, mw = transform.model_size
    nh, nw = transform.resized
    out = np.full((n, c, mh, mw), PAD_VALUE, dtype=np.float32)
    out[:, :, transform.pad_top:transform.pad_top + nh, transform.pad_left:transform.pad_left + nw] = \
        resize_bilinear(img, (nh, nw))
    return out
