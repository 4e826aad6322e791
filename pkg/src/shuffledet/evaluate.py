"""Detection metrics: greedy IoU matching, average precision, mAP@0.5 and recall.

Two recalls are reported.  Box recall is TP / (TP + FN) per class.  Image
recall is the fraction of images (with at least one ground truth) in which
every ground-truth class present was detected at least once.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import DataError
from .postprocess import Box, Detection, iou_xyxy


@dataclass(frozen=True)
class GroundTruth:
    image_id: str
    class_id: int
    box: Box


def match_detections(dets: Sequence[Detection], gts: Sequence[GroundTruth],
                     iou_threshold: float = 0.5) -> tuple[list[bool], list[bool]]:
    """Label each detection TP/FP and each ground truth matched/unmatched.

    Matching is done independently per (image, class).  Detections are taken
    by descending score (input order on ties); each claims the still
    unmatched ground truth with the highest IoU >= ``iou_threshold``, the
    lowest ground-truth index winning ties.
    """
    gt_groups: dict[tuple[str, int], list[int]] = {}
    for j, g in enumerate(gts):
        gt_groups.setdefault((g.image_id, g.class_id), []).append(j)
    is_tp = [False] * len(dets)
    matched = [False] * len(gts)
    order = sorted(range(len(dets)), key=lambda i: (-dets[i].score, i))
    for i in order:
        d = dets[i]
        best, best_iou = -1, -1.0
        for j in gt_groups.get((d.image_id, d.class_id), ()):
            if matched[j]:
                continue
            iou = iou_xyxy(d.box, gts[j].box)
            if iou >= iou_threshold and iou > best_iou:
                best, best_iou = j, iou
        if best >= 0:
            matched[best] = True
            is_tp[i] = True
    return is_tp, matched


def pr_curve(scores: Sequence[float], is_tp: Sequence[bool], gt_count: int) -> tuple[np.ndarray, np.ndarray]:
    """Cumulative recall and precision after each detection, best score first."""
    order = sorted(range(len(scores)), key=lambda i: (-scores[i], i))
    tp = np.array([bool(is_tp[i]) for i in order], dtype=np.float64)
    ctp = np.cumsum(tp)
    cfp = np.cumsum(1.0 - tp)
    recall = ctp / gt_count if gt_count > 0 else np.zeros_like(ctp)
    precision = ctp / np.maximum(ctp + cfp, np.finfo(np.float64).eps)
    return recall, precision


def average_precision(scores: Sequence[float], is_tp: Sequence[bool], gt_count: int,
                      eleven_point: bool = False) -> float:
    """Area under the precision envelope (all-point), or the 11-point VOC07 variant.

    Returns 0.0 when ``gt_count`` is 0; callers flag that case as undefined.
    """
    if gt_count < 0:
        raise DataError(f"gt_count must be >= 0, got {gt_count}")
    if gt_count == 0 or len(scores) == 0:
        return 0.0
    recall, precision = pr_curve(scores, is_tp, gt_count)
    if eleven_point:
        ap = 0.0
        for t in np.linspace(0.0, 1.0, 11):
            above = precision[recall >= t]
            ap += (above.max() if above.size else 0.0) / 11.0
        return float(ap)
    mrec = np.concatenate(([0.0], recall, [1.0]))
    mpre = np.concatenate(([0.0], precision, [0.0]))
    mpre = np.maximum.accumulate(mpre[::-1])[::-1]
    steps = np.nonzero(mrec[1:] != mrec[:-1])[0]
    return float(np.sum((mrec[steps + 1] - mrec[steps]) * mpre[steps + 1]))


@dataclass
class ClassResult:
    class_id: int
    name: str
    ap: float
    recall: float
    precision: float
    tp: int
    fp: int
    fn: int
    gt_count: int
    undefined: bool = False


@dataclass
class EvalReport:
    classes: list[ClassResult]
    map50: float
    image_recall: float
    images: int
    iou_threshold: float = 0.5
    interpolation: str = "all-point"
    extra: dict = field(default_factory=dict)

    @property
    def ap(self) -> list[float]:
        return [c.ap for c in self.classes]

    @property
    def recall(self) -> list[float]:
        return [c.recall for c in self.classes]

    def to_json(self) -> dict:
        return {
            "classes": [asdict(c) for c in self.classes],
            "map50": self.map50,
            "image_recall": self.image_recall,
            "images": self.images,
            "iou_threshold": self.iou_threshold,
            "interpolation": self.interpolation,
            **self.extra,
        }


def _check_classes(items: Iterable, num_classes: int, what: str) -> None:
    for k, item in enumerate(items):
        if not 0 <= item.class_id < num_classes:
            raise DataError(
                f"{what} #{k} (image {item.image_id!r}) has class_id {item.class_id}, "
                f"outside 0..{num_classes - 1}"
            )


def evaluate_dataset(dets: Sequence[Detection], gts: Sequence[GroundTruth], num_classes: int,
                     class_names: Sequence[str] | None = None, iou_threshold: float = 0.5,
                     eleven_point: bool = False, include_empty: bool = True) -> EvalReport:
    """Pool matches over all images and summarise per class.

    Classes without ground truth get AP 0 with ``undefined=True``; they count
    towards mAP unless ``include_empty`` is false.
    """
    _check_classes(dets, num_classes, "detection")
    _check_classes(gts, num_classes, "ground truth")
    names = list(class_names) if class_names else [str(c) for c in range(num_classes)]
    is_tp, matched = match_detections(dets, gts, iou_threshold)

    results = []
    for c in range(num_classes):
        idx = [i for i, d in enumerate(dets) if d.class_id == c]
        scores = [dets[i].score for i in idx]
        tps = [is_tp[i] for i in idx]
        gt_count = sum(1 for g in gts if g.class_id == c)
        tp = sum(tps)
        fp = len(tps) - tp
        fn = sum(1 for j, g in enumerate(gts) if g.class_id == c and not matched[j])
        results.append(ClassResult(
            class_id=c,
            name=names[c],
            ap=average_precision(scores, tps, gt_count, eleven_point),
            recall=tp / gt_count if gt_count else 0.0,
            precision=tp / len(tps) if tps else 0.0,
            tp=tp, fp=fp, fn=fn, gt_count=gt_count,
            undefined=gt_count == 0,
        ))

    counted = [r.ap for r in results if include_empty or not r.undefined]
    map50 = float(np.mean(counted)) if counted else 0.0

    needed: dict[str, set[int]] = {}
    for g in gts:
        needed.setdefault(g.image_id, set()).add(g.class_id)
    found: dict[str, set[int]] = {}
    for d, ok in zip(dets, is_tp):
        if ok:
            found.setdefault(d.image_id, set()).add(d.class_id)
    hits = sum(1 for img, cls in needed.items() if cls <= found.get(img, set()))
    image_recall = hits / len(needed) if needed else 0.0

    return EvalReport(results, map50, image_recall, len(needed), iou_threshold,
                      "11-point" if eleven_point else "all-point")
