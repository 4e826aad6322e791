"""Command-line entry point: init-weights, detect, eval, flops, bench, selftest."""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from .dataio import atomic_write, parse_annotations, read_image, render_detections
from .detector import detect
from .errors import ShuffleDetError
from .evaluate import evaluate_dataset
from .model import ModelConfig, Model, build_network, compare_with_baseline, init_weights, load_weights, save_weights
from .postprocess import DEFAULT_CONF, DEFAULT_IOU, Detection

IMAGE_SUFFIXES = (".pgm", ".ppm", ".pnm")


def _dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


def _emit(obj, path: str | None) -> None:
    text = _dumps(obj)
    if path:
        atomic_write(path, text)
    else:
        sys.stdout.write(text)


def _model_options(p: argparse.ArgumentParser, classes_required: bool = False) -> None:
    p.add_argument("--classes", type=int, required=classes_required, default=None,
                   help="number of classes (6 = NEU-DET names, 10 = GC10-DET names)")
    p.add_argument("--size", type=int, default=640, help="square network input size, multiple of 32")
    p.add_argument("--unit-style", choices=("v2_split", "v1_grouped"), default="v2_split")
    p.add_argument("--groups", type=int, default=2, help="group count for v1_grouped units")
    p.add_argument("--sppf", action="store_true", help="append SPPF after the last backbone stage")


def _config(args, classes: int) -> ModelConfig:
    return ModelConfig(input_size=(args.size, args.size), class_count=classes, unit_style=args.unit_style,
                       group_count=args.groups, sppf_enabled=args.sppf)


def _load_model(args) -> Model:
    data = Path(args.weights).read_bytes()
    classes = args.classes
    if classes is None:
        # infer from the head bias: 3 * (5 + classes) entries
        raw = load_weights(data)
        if "head.p3.bias" not in raw:
            raise ShuffleDetError("cannot infer --classes: weight file has no head.p3.bias")
        classes = raw["head.p3.bias"].shape[0] // 3 - 5
    cfg = _config(args, classes)
    store = load_weights(data, build_network(cfg).weight_shapes())
    return Model(cfg, store)


def cmd_init_weights(args) -> int:
    cfg = _config(args, args.classes)
    atomic_write(args.out, save_weights(init_weights(cfg, args.seed)))
    return 0


def cmd_detect(args) -> int:
    model = _load_model(args)
    image = read_image(args.image)
    dets = detect(model, image, args.conf, args.iou, image_id=Path(args.image).stem)
    names = model.cfg.class_names
    result = {
        "image": Path(args.image).name,
        "image_size": [int(image.shape[2]), int(image.shape[3])],
        "conf_threshold": args.conf,
        "iou_threshold": args.iou,
        "detections": [d.to_json(names) for d in dets],
    }
    if args.out:
        atomic_write(args.out, render_detections(image, dets))
    _emit(result, args.json)
    return 0


def _read_detection_file(path) -> list[Detection]:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    return [Detection(int(d["class_id"]), float(d["score"]), tuple(float(v) for v in d["box"]), str(d["image_id"]))
            for d in doc["detections"]]


def cmd_eval(args) -> int:
    images = sorted(p for p in Path(args.images).iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
    if not images:
        raise ShuffleDetError(f"no .pgm/.ppm images in {args.images}")
    model = None if args.detections else _load_model(args)
    if args.classes is not None:
        classes = args.classes
    elif model is not None:
        classes = model.cfg.class_count
    else:
        raise ShuffleDetError("eval --detections needs --classes")
    names = ModelConfig(class_count=classes).class_names
    gts, dets = [], []
    for path in images:
        image = read_image(path)
        label = Path(args.labels) / f"{path.stem}.txt"
        if label.exists():
            gts += parse_annotations(label, image.shape[3], image.shape[2], image_id=path.stem)
        if model is not None:
            dets += detect(model, image, args.conf, args.iou, image_id=path.stem)
    if args.detections:
        wanted = {p.stem for p in images}
        dets = [d for d in _read_detection_file(args.detections) if d.image_id in wanted]
    report = evaluate_dataset(dets, gts, classes, names, eleven_point=args.eleven_point,
                              include_empty=not args.exclude_empty)
    _emit(report.to_json(), args.json)
    return 0


def cmd_flops(args) -> int:
    cfg = _config(args, args.classes)
    result = compare_with_baseline(cfg)
    out = {"summary": result["summary"], "proposed": result["proposed"].to_dict(layers=True)}
    out["baseline"] = result["baseline"].to_dict(layers=args.baseline)
    _emit(out, args.json)
    return 0


def cmd_bench(args) -> int:
    model = _load_model(args)
    image = read_image(args.image)
    for _ in range(args.warmup):
        detect(model, image, args.conf, args.iou)
    times = []
    for _ in range(args.iters):
        t0 = time.perf_counter()
        detect(model, image, args.conf, args.iou)
        times.append((time.perf_counter() - t0) * 1e3)
    ms = np.array(times)
    _emit({
        "test_type": "single image",
        "iters": args.iters,
        "input_size": list(model.cfg.input_size),
        "mean_ms": float(ms.mean()),
        "p50_ms": float(np.percentile(ms, 50)),
        "p95_ms": float(np.percentile(ms, 95)),
        "min_ms": float(ms.min()),
    }, args.json)
    return 0


def cmd_selftest(args) -> int:
    from .selftest import run_selftest

    results = run_selftest(seed=args.seed, quick=args.quick)
    for name, ok, detail in results:
        print(f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}")
    failed = [r for r in results if not r[1]]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed")
    return 1 if failed else 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="shuffledet", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("init-weights", help="write deterministic demo weights")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    _model_options(p, classes_required=True)
    p.set_defaults(func=cmd_init_weights)

    p = sub.add_parser("detect", help="detect defects in one PGM/PPM image")
    p.add_argument("--weights", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--conf", type=float, default=DEFAULT_CONF)
    p.add_argument("--iou", type=float, default=DEFAULT_IOU)
    p.add_argument("--out", help="write a P6 rendering with box outlines")
    p.add_argument("--json", help="write detections JSON here instead of stdout")
    _model_options(p)
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("eval", help="mAP@0.5 and recall over a labelled image directory")
    p.add_argument("--weights")
    p.add_argument("--images", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--detections", help="evaluate a detections JSON file instead of running the model")
    p.add_argument("--conf", type=float, default=0.001)
    p.add_argument("--iou", type=float, default=DEFAULT_IOU)
    p.add_argument("--eleven-point", action="store_true", help="11-point interpolated AP")
    p.add_argument("--exclude-empty", action="store_true", help="leave classes without ground truth out of mAP")
    p.add_argument("--json")
    _model_options(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("flops", help="parameter and MAC counts, proposed vs baseline")
    p.add_argument("--baseline", action="store_true", help="include the baseline's per-layer breakdown")
    p.add_argument("--json")
    _model_options(p, classes_required=True)
    p.set_defaults(func=cmd_flops)

    p = sub.add_parser("bench", help="single-image latency statistics")
    p.add_argument("--weights", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--iters", type=int, default=10)
    p.add_argument("--warmup", type=int, default=1)
    p.add_argument("--conf", type=float, default=DEFAULT_CONF)
    p.add_argument("--iou", type=float, default=DEFAULT_IOU)
    p.add_argument("--json")
    _model_options(p)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("selftest", help="run the built-in oracle checks")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--quick", action="store_true")
    p.set_defaults(func=cmd_selftest)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.command == "eval" and not (args.weights or args.detections):
        print("error: eval needs --weights or --detections", file=sys.stderr)
        return 2
    try:
        return args.func(args)
    except (ShuffleDetError, OSError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
