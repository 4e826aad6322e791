"""Slow, independent reference implementations used as test oracles.

Nothing here shares code with the fast paths it checks: convolution and
pooling handle borders by explicit bounds checks in float64 instead of
padding, decoding runs scalar ``math`` loops, suppression repeatedly scans
for the best remaining box, matching enumerates every assignment, and AP is
summed point by point.
"""

from __future__ import annotations

import itertools
import math
from typing import Sequence

import numpy as np


def conv2d_loops(x, weight, bias=None, stride=(1, 1), padding=(0, 0), groups=1) -> np.ndarray:
    """Seven nested scalar loops; only practical for tiny inputs."""
    n, c, h, w = x.shape
    cout, cig, kh, kw = weight.shape
    sh, sw = stride
    ph, pw = padding
    ho = (h + 2 * ph - kh) // sh + 1
    wo = (w + 2 * pw - kw) // sw + 1
    cog = cout // groups
    out = np.zeros((n, cout, ho, wo))
    for b in range(n):
        for o in range(cout):
            q = o // cog
            for oy in range(ho):
                for ox in range(wo):
                    acc = 0.0 if bias is None else float(bias[o])
                    for ci in range(cig):
                        for ky in range(kh):
                            for kx in range(kw):
                                iy, ix = oy * sh - ph + ky, ox * sw - pw + kx
                                if 0 <= iy < h and 0 <= ix < w:
                                    acc += float(x[b, q * cig + ci, iy, ix]) * float(weight[o, ci, ky, kx])
                    out[b, o, oy, ox] = acc
    return out


def conv2d_reference(x, weight, bias=None, stride=(1, 1), padding=(0, 0), groups=1) -> np.ndarray:
    """Direct convolution: Python loops over output pixel and kernel tap, float64 dot over channels."""
    n, c, h, w = x.shape
    cout, cig, kh, kw = weight.shape
    sh, sw = stride
    ph, pw = padding
    ho = (h + 2 * ph - kh) // sh + 1
    wo = (w + 2 * pw - kw) // sw + 1
    cog = cout // groups
    xg = np.asarray(x, np.float64).reshape(n, groups, cig, h, w)
    wg = np.asarray(weight, np.float64).reshape(groups, cog, cig, kh, kw)
    out = np.zeros((n, groups, cog, ho, wo))
    for oy in range(ho):
        for ox in range(wo):
            for ky in range(kh):
                iy = oy * sh - ph + ky
                if not 0 <= iy < h:
                    continue
                for kx in range(kw):
                    ix = ox * sw - pw + kx
                    if not 0 <= ix < w:
                        continue
                    out[:, :, :, oy, ox] += np.einsum("ngc,goc->ngo", xg[:, :, :, iy, ix], wg[:, :, :, ky, kx])
    out = out.reshape(n, cout, ho, wo)
    if bias is not None:
        out += np.asarray(bias, np.float64).reshape(1, -1, 1, 1)
    return out


def maxpool2d_reference(x, kernel, stride, padding) -> np.ndarray:
    n, c, h, w = x.shape
    ho = (h + 2 * padding - kernel) // stride + 1
    wo = (w + 2 * padding - kernel) // stride + 1
    out = np.empty((n, c, ho, wo), dtype=np.float64)
    for oy in range(ho):
        for ox in range(wo):
            y0, x0 = oy * stride - padding, ox * stride - padding
            ys = range(max(y0, 0), min(y0 + kernel, h))
            xs = range(max(x0, 0), min(x0 + kernel, w))
            best = None
            for iy in ys:
                for ix in xs:
                    v = x[:, :, iy, ix]
                    best = v.astype(np.float64) if best is None else np.maximum(best, v)
            out[:, :, oy, ox] = best
    return out


def _silu64(v: np.ndarray) -> np.ndarray:
    return v / (1.0 + np.exp(-v))


def sppf_reference(x, cv1_weight, cv1_bias, cv2_weight, cv2_bias, pool_kernel=5) -> np.ndarray:
    pad = pool_kernel // 2
    y = _silu64(conv2d_reference(x, cv1_weight, cv1_bias))
    p1 = maxpool2d_reference(y, pool_kernel, 1, pad)
    p2 = maxpool2d_reference(p1, pool_kernel, 1, pad)
    p3 = maxpool2d_reference(p2, pool_kernel, 1, pad)
    return _silu64(conv2d_reference(np.concatenate([y, p1, p2, p3], axis=1), cv2_weight, cv2_bias))


def _sig(v: float) -> float:
    return 1.0 / (1.0 + math.exp(-v)) if v >= 0 else math.exp(v) / (1.0 + math.exp(v))


def decode_reference(raw, strides, anchors, conf_threshold) -> list[tuple[int, float, tuple]]:
    """Scalar decoder returning (class_id, score, box) in scale/anchor/row/column order."""
    out = []
    for r, stride, scale in zip(raw, strides, anchors):
        na = len(scale)
        no = r.shape[1] // na
        for a, (aw, ah) in enumerate(scale):
            for y in range(r.shape[2]):
                for x in range(r.shape[3]):
                    v = [float(r[0, a * no + k, y, x]) for k in range(no)]
                    probs = [_sig(t) for t in v[5:]]
                    best = max(range(len(probs)), key=lambda k: (probs[k], -k))
                    score = _sig(v[4]) * probs[best]
                    if score < conf_threshold:
                        continue
                    cx = (2 * _sig(v[0]) - 0.5 + x) * stride
                    cy = (2 * _sig(v[1]) - 0.5 + y) * stride
                    bw = (2 * _sig(v[2])) ** 2 * aw
                    bh = (2 * _sig(v[3])) ** 2 * ah
                    out.append((best, score, (cx - bw / 2, cy - bh / 2, cx + bw / 2, cy + bh / 2)))
    return out


def iou_reference(a, b) -> float:
    iw = min(a[2], b[2]) - max(a[0], b[0])
    ih = min(a[3], b[3]) - max(a[1], b[1])
    inter = iw * ih if iw > 0 and ih > 0 else 0.0
    union = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter
    return inter / union if union > 0 else 0.0


def nms_reference(items: Sequence[tuple[int, float, tuple]], iou_threshold: float) -> list[int]:
    """Brute-force suppression over (class_id, score, box); returns kept input indices in output order."""
    remaining = list(range(len(items)))
    kept = []
    while remaining:
        best = min(remaining, key=lambda i: (-items[i][1], i))
        kept.append(best)
        remaining = [
            j for j in remaining
            if j != best and not (items[j][0] == items[best][0]
                                  and iou_reference(items[best][2], items[j][2]) > iou_threshold)
        ]
    return sorted(kept, key=lambda i: (-items[i][1], i))


def match_reference(dets, gts, iou_threshold=0.5) -> list[bool]:
    """Exhaustive matcher for tiny scenes.

    Enumerates every injective assignment of detections to same-image,
    same-class ground truths with IoU >= threshold, and picks the one whose
    per-detection (matched, IoU, -gt index) sequence in score order is
    lexicographically largest -- the outcome greedy matching must produce.
    """
    order = sorted(range(len(dets)), key=lambda i: (-dets[i].score, i))
    options = []
    for i in order:
        d = dets[i]
        opts = [None] + [j for j, g in enumerate(gts)
                         if g.image_id == d.image_id and g.class_id == d.class_id
                         and iou_reference(d.box, g.box) >= iou_threshold]
        options.append(opts)
    best_key, best_assign = None, None
    for assign in itertools.product(*options):
        used = [j for j in assign if j is not None]
        if len(used) != len(set(used)):
            continue
        key = tuple(
            (0, 0.0, 0) if j is None else (1, iou_reference(dets[i].box, gts[j].box), -j)
            for i, j in zip(order, assign)
        )
        if best_key is None or key > best_key:
            best_key, best_assign = key, assign
    labels = [False] * len(dets)
    for i, j in zip(order, best_assign or ()):
        labels[i] = j is not None
    return labels


def average_precision_reference(scores, is_tp, gt_count) -> float:
    """All-point AP summed over the detections where recall increases."""
    if gt_count == 0 or not scores:
        return 0.0
    order = sorted(range(len(scores)), key=lambda i: (-scores[i], i))
    tp = fp = 0
    points = []
    for i in order:
        if is_tp[i]:
            tp += 1
        else:
            fp += 1
        points.append((tp / gt_count, tp / (tp + fp)))
    ap, prev_recall = 0.0, 0.0
    for k, (r, _) in enumerate(points):
        if r > prev_recall:
            ap += (r - prev_recall) * max(p for _, p in points[k:])
            prev_recall = r
    return ap


def map_reference(dets, gts, num_classes, iou_threshold=0.5) -> tuple[float, list[float]]:
    """Slow reference evaluator: exhaustive-free greedy matching written out per group, then AP per class."""
    labels = [False] * len(dets)
    taken = set()
    for i in sorted(range(len(dets)), key=lambda i: (-dets[i].score, i)):
        d = dets[i]
        cands = [(iou_reference(d.box, g.box), -j, j) for j, g in enumerate(gts)
                 if j not in taken and g.image_id == d.image_id and g.class_id == d.class_id]
        cands = [c for c in cands if c[0] >= iou_threshold]
        if cands:
            taken.add(max(cands)[2])
            labels[i] = True
    aps = []
    for c in range(num_classes):
        idx = [i for i, d in enumerate(dets) if d.class_id == c]
        n_gt = sum(1 for g in gts if g.class_id == c)
        aps.append(average_precision_reference([dets[i].score for i in idx], [labels[i] for i in idx], n_gt))
    return sum(aps) / num_classes, aps
