"""Bundled 12-image synthetic defect set with known boxes.

Images are 128x128 gray-scale PGMs: a noisy steel-like background with one
to three hand-placed rectangular defects drawn in a class-specific texture.
Two detection files accompany it: ``oracle_detections.json`` reproduces every
ground-truth box at score 1.0, and ``corrupted_detections.json`` applies a
fixed list of mistakes (shifted, dropped, relabelled, duplicated and
spurious boxes) with graded scores.

Regenerate with ``python -m shuffledet.synthetic OUTDIR``; the output is
byte-identical to the bundled copy.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import numpy as np

from .dataio import encode_pgm, format_annotations
from .evaluate import GroundTruth
from .model.config import NEU_DET_CLASSES
from .tensor import Prng

SIZE = 128
SEED = 2023
DATA_DIR = Path(__file__).parent / "data" / "synthetic"

# image id -> [(class_id, (x1, y1, x2, y2)), ...] in pixels
GROUND_TRUTH: dict[str, list[tuple[int, tuple[int, int, int, int]]]] = {
    "syn00": [(0, (8, 8, 40, 40)), (2, (70, 60, 120, 100))],
    "syn01": [(1, (20, 20, 60, 70))],
    "syn02": [(5, (10, 90, 110, 100)), (3, (50, 10, 60, 40))],
    "syn03": [(4, (30, 30, 50, 50)), (4, (80, 80, 100, 104))],
    "syn04": [(0, (60, 8, 120, 40))],
    "syn05": [(2, (10, 60, 50, 120)), (1, (70, 10, 118, 50))],
    "syn06": [(3, (40, 40, 56, 90))],
    "syn07": [(5, (20, 10, 28, 118)), (0, (60, 60, 100, 100))],
    "syn08": [(1, (8, 80, 48, 120)), (4, (90, 20, 110, 44)), (2, (50, 20, 80, 50))],
    "syn09": [(3, (100, 60, 112, 120))],
    "syn10": [(5, (10, 40, 120, 48)), (1, (30, 60, 80, 110))],
    "syn11": [(4, (20, 20, 36, 36)), (0, (70, 70, 118, 118))],
}

# (image id, class id, box, score) produced by the deliberately flawed detector
CORRUPTED: list[tuple[str, int, tuple[int, int, int, int], float]] = [
    ("syn00", 0, (8, 8, 40, 40), 0.92),
    ("syn00", 2, (70, 60, 120, 100), 0.88),
    ("syn01", 1, (50, 20, 90, 70), 0.90),            # shifted 30 px: FP and a missed box
    ("syn02", 5, (10, 90, 110, 100), 0.85),
    ("syn02", 3, (50, 10, 60, 40), 0.40),
    ("syn03", 4, (30, 30, 50, 50), 0.75),            # second pitted box is dropped
    ("syn04", 0, (62, 10, 118, 40), 0.81),           # slightly off, still IoU >= 0.5
    ("syn05", 0, (10, 60, 50, 120), 0.70),           # crazing box labelled rolled-in scale
    ("syn05", 1, (70, 10, 118, 50), 0.66),
    ("syn06", 3, (40, 40, 56, 90), 0.95),
    ("syn07", 5, (20, 10, 28, 118), 0.55),
    ("syn07", 0, (60, 60, 100, 100), 0.60),
    ("syn08", 4, (10, 10, 30, 30), 0.97),            # spurious, most confident box in its class
    ("syn08", 1, (8, 80, 48, 120), 0.64),
    ("syn08", 4, (90, 20, 110, 44), 0.58),
    ("syn08", 2, (50, 20, 80, 50), 0.52),
    ("syn09", 3, (100, 60, 112, 120), 0.35),
    ("syn10", 5, (10, 40, 120, 48), 0.78),
    ("syn10", 5, (12, 40, 118, 48), 0.61),           # duplicate of the scratch above
    ("syn10", 1, (30, 60, 80, 110), 0.45),
    ("syn11", 4, (20, 20, 36, 36), 0.30),
    ("syn11", 0, (70, 70, 118, 118), 0.25),
]


def ground_truths() -> list[GroundTruth]:
    return [GroundTruth(img, c, tuple(float(v) for v in box))
            for img, boxes in GROUND_TRUTH.items() for c, box in boxes]


def _texture(class_id: int, h: int, w: int, noise: np.ndarray) -> np.ndarray:
    yy, xx = np.mgrid[0:h, 0:w]
    if class_id == 0:    # rolled-in scale: dark mottled blotch
        return 0.25 + 0.15 * noise
    if class_id == 1:    # patches: bright flat area
        return 0.85 + 0.05 * noise
    if class_id == 2:    # crazing: cross-hatch
        return np.where(((xx + yy) % 6 < 2) | ((xx - yy) % 6 < 2), 0.2, 0.6)
    if class_id == 3:    # inclusion: dark streak with a lighter core
        return np.where(np.abs(xx - w / 2) < max(w / 6, 1), 0.45, 0.15)
    if class_id == 4:    # pitted surface: dots
        return np.where((xx % 4 < 2) & (yy % 4 < 2), 0.1, 0.55)
    return np.where(yy % 3 == 0, 0.95, 0.7)  # scratches: bright lines


def render_image(image_id: str, prng: Prng) -> np.ndarray:
    base = 0.5 + 0.08 * (prng.uniform(SIZE * SIZE).reshape(SIZE, SIZE) - 0.5)
    for class_id, (x1, y1, x2, y2) in GROUND_TRUTH[image_id]:
        h, w = y2 - y1, x2 - x1
        noise = prng.uniform(h * w).reshape(h, w)
        base[y1:y2, x1:x2] = _texture(class_id, h, w, noise)
    return np.clip(np.rint(base * 255.0), 0, 255).astype(np.uint8)


def oracle_detections() -> list[dict]:
    return [{"image_id": g.image_id, "class_id": g.class_id, "class_name": NEU_DET_CLASSES[g.class_id],
             "score": 1.0, "box": list(g.box)} for g in ground_truths()]


def corrupted_detections() -> list[dict]:
    return [{"image_id": img, "class_id": c, "class_name": NEU_DET_CLASSES[c],
             "score": s, "box": [float(v) for v in box]} for img, c, box, s in CORRUPTED]


def _dump(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


def generate(outdir) -> Path:
    outdir = Path(outdir)
    (outdir / "images").mkdir(parents=True, exist_ok=True)
    (outdir / "labels").mkdir(parents=True, exist_ok=True)
    prng = Prng(SEED)
    gts = ground_truths()
    for image_id in GROUND_TRUTH:
        (outdir / "images" / f"{image_id}.pgm").write_bytes(encode_pgm(render_image(image_id, prng)))
        mine = [g for g in gts if g.image_id == image_id]
        (outdir / "labels" / f"{image_id}.txt").write_text(format_annotations(mine, SIZE, SIZE), encoding="utf-8")
    (outdir / "oracle_detections.json").write_text(_dump({"detections": oracle_detections()}), encoding="utf-8")
    (outdir / "corrupted_detections.json").write_text(_dump({"detections": corrupted_detections()}), encoding="utf-8")
    return outdir


if __name__ == "__main__":
    print(generate(sys.argv[1] if len(sys.argv) > 1 else DATA_DIR))
