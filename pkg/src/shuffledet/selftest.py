"""Randomised oracle checks runnable from an installed package (``shuffledet selftest``)."""

from __future__ import annotations

import time
from fractions import Fraction

import numpy as np

from . import ops, reference
from .evaluate import average_precision, match_detections
from .evaluate import GroundTruth
from .model import ModelConfig, build_network, count_params_flops, init_weights, load_weights, save_weights
from .model.graph import GraphBuilder
from .postprocess import AnchorSet, Detection, decode_predictions, nms

CONV_TOL = 1e-5


def random_conv_case(rng: np.random.Generator, max_hw: int = 12):
    """Random grouped-conv geometry covering point-wise, depth-wise, grouped, strided and padded cases."""
    kind = rng.integers(4)
    groups = int(rng.choice([1, 2, 4]))
    cin = groups * int(rng.integers(1, 4))
    cout = groups * int(rng.integers(1, 4))
    if kind == 0:  # depth-wise
        groups = cin = cout = int(rng.integers(1, 9))
    k = 1 if kind == 1 else int(rng.choice([1, 2, 3, 5]))
    kh, kw = k, (k if rng.random() < 0.8 else int(rng.choice([1, 3])))
    stride = (int(rng.integers(1, 4)), int(rng.integers(1, 4)))
    padding = (int(rng.integers(0, kh)), int(rng.integers(0, kw)))
    h = int(rng.integers(max(1, kh - 2 * padding[0]), max_hw + 1))
    w = int(rng.integers(max(1, kw - 2 * padding[1]), max_hw + 1))
    n = int(rng.integers(1, 3))
    x = rng.standard_normal((n, cin, h, w)).astype(np.float32)
    weight = rng.standard_normal((cout, cin // groups, kh, kw)).astype(np.float32)
    bias = rng.standard_normal(cout).astype(np.float32) if rng.random() < 0.5 else None
    return x, weight, bias, stride, padding, groups


def check_conv(rng, cases: int) -> tuple[bool, str]:
    worst = 0.0
    for _ in range(cases):
        x, w, b, s, p, g = random_conv_case(rng)
        got = ops.conv2d(x, w, b, s, p, g)
        want = reference.conv2d_reference(x, w, b, s, p, g)
        worst = max(worst, float(np.max(np.abs(got - want))) if got.size else 0.0)
    return worst <= CONV_TOL, f"{cases} cases, max abs err {worst:.2e}"


def check_maxpool(rng, cases: int) -> tuple[bool, str]:
    for _ in range(cases):
        k = int(rng.integers(1, 6))
        s = int(rng.integers(1, 4))
        p = int(rng.integers(0, k // 2 + 1))
        h, w = (int(v) for v in rng.integers(k, 14, size=2))
        x = rng.standard_normal((2, 3, h, w)).astype(np.float32)
        if not np.array_equal(ops.maxpool2d(x, k, s, p), reference.maxpool2d_reference(x, k, s, p)):
            return False, f"mismatch at k={k} s={s} p={p} {h}x{w}"
    return True, f"{cases} cases, exact"


def check_sppf(rng, cases: int) -> tuple[bool, str]:
    worst = 0.0
    for _ in range(cases):
        c = 2 * int(rng.integers(1, 5))
        x = rng.standard_normal((1, c, int(rng.integers(3, 12)), int(rng.integers(3, 12)))).astype(np.float32)
        w1 = rng.standard_normal((c // 2, c, 1, 1)).astype(np.float32) * 0.5
        b1 = rng.standard_normal(c // 2).astype(np.float32)
        w2 = rng.standard_normal((c, 2 * c, 1, 1)).astype(np.float32) * 0.5
        b2 = rng.standard_normal(c).astype(np.float32)
        got = ops.sppf(x, w1, b1, w2, b2)
        worst = max(worst, float(np.max(np.abs(got - reference.sppf_reference(x, w1, b1, w2, b2)))))
    return worst <= CONV_TOL, f"{cases} cases, max abs err {worst:.2e}"


def check_shuffle() -> tuple[bool, str]:
    for c in range(1, 65):
        x = np.arange(c, dtype=np.float32).reshape(1, c, 1, 1)
        for g in (d for d in range(1, c + 1) if c % d == 0):
            y = ops.channel_shuffle(x, g)
            perm = y.reshape(-1).astype(int)
            if sorted(perm) != list(range(c)):
                return False, f"not a bijection for c={c} g={g}"
            if not np.array_equal(ops.channel_shuffle(y, c // g), x):
                return False, f"shuffle(g) then shuffle(c/g) is not identity for c={c} g={g}"
    return True, "all c <= 64 and divisors g"


def check_separable_identity() -> tuple[bool, str]:
    count = 0
    for k in (1, 3, 5, 7):
        for cin in (1, 3, 16, 24):
            for cout in (1, 8, 32, 116):
                for hw in (4, 9):
                    def macs(build) -> int:
                        b = GraphBuilder({"x": (1, cin, hw, hw)})
                        build(b)
                        return count_params_flops(b.records, (hw, hw)).total_macs

                    std = macs(lambda b: b.conv("std", "x", cout, k, bn=False))
                    sep = macs(lambda b: b.conv("pw", b.dwconv("dw", "x", k), cout, 1, bn=False))
                    if Fraction(sep, std) != Fraction(1, cout) + Fraction(1, k * k):
                        return False, f"ratio wrong for k={k} cin={cin} cout={cout}"
                    count += 1
    return True, f"{count} (k, C_in, C_out, HW) combinations exact"


def check_nms(rng, scenes: int) -> tuple[bool, str]:
    for _ in range(scenes):
        n = int(rng.integers(0, 60))
        xy = rng.uniform(0, 100, size=(n, 2))
        wh = rng.uniform(1, 40, size=(n, 2))
        scores = np.round(rng.uniform(0, 1, n), 2)  # rounding forces score ties
        classes = rng.integers(0, 3, n)
        dets = [Detection(int(c), float(s), (float(a), float(b), float(a + w), float(b + h)))
                for c, s, (a, b), (w, h) in zip(classes, scores, xy, wh)]
        got = [id(d) for d in nms(dets, 0.45)]
        want = [id(dets[i]) for i in reference.nms_reference([(d.class_id, d.score, d.box) for d in dets], 0.45)]
        if got != want:
            return False, f"mismatch on a scene with {n} boxes"
    return True, f"{scenes} scenes identical"


def check_decode(rng, cases: int) -> tuple[bool, str]:
    anchors = AnchorSet()
    worst = 0.0
    for _ in range(cases):
        nc = int(rng.integers(1, 5))
        raw = [rng.standard_normal((1, 3 * (5 + nc), s, s)) * 2 for s in (4, 2, 1)]
        got = decode_predictions(raw, anchors, 0.1)
        want = reference.decode_reference(raw, anchors.strides, anchors.anchors, 0.1)
        if len(got) != len(want) or any(d.class_id != c for d, (c, _, _) in zip(got, want)):
            return False, "different detections"
        for d, (_, s, box) in zip(got, want):
            worst = max(worst, abs(d.score - s), *(abs(a - b) for a, b in zip(d.box, box)))
    return worst <= 1e-6, f"{cases} cases, max abs err {worst:.2e}"


def check_ap_examples() -> tuple[bool, str]:
    ap = average_precision([0.9, 0.8, 0.7], [True, False, True], 2)
    ok = abs(ap - 5 / 6) < 1e-12 and average_precision([0.9], [True], 1) == 1.0
    return ok, f"TP/FP/TP over 2 GT -> {ap:.4f}"


def check_matching(rng, scenes: int) -> tuple[bool, str]:
    for _ in range(scenes):
        gts = [GroundTruth("a", int(rng.integers(2)), tuple(_rand_box(rng))) for _ in range(rng.integers(0, 4))]
        dets = [Detection(int(rng.integers(2)), float(rng.uniform()), tuple(_rand_box(rng)), "a")
                for _ in range(rng.integers(0, 4))]
        if match_detections(dets, gts)[0] != reference.match_reference(dets, gts):
            return False, "greedy matching differs from exhaustive oracle"
    return True, f"{scenes} scenes identical"


def _rand_box(rng) -> list[float]:
    x, y = rng.uniform(0, 10, 2)
    w, h = rng.uniform(2, 8, 2)
    return [float(x), float(y), float(x + w), float(y + h)]


def check_weights_roundtrip() -> tuple[bool, str]:
    cfg = ModelConfig(input_size=(64, 64))
    data = save_weights(init_weights(cfg, seed=1))
    again = save_weights(load_weights(data, build_network(cfg).weight_shapes()))
    return data == again, f"{len(data)} bytes"


def check_shapes() -> tuple[bool, str]:
    cfg = ModelConfig()
    net = build_network(cfg)
    shapes = {role: next(r.out_shape for r in net.records if r.name == name) for role, name in net.taps.items()}
    want = {"C3": (1, 116, 80, 80), "C4": (1, 232, 40, 40), "C5": (1, 464, 20, 20),
            "P3": (1, 33, 80, 80), "P4": (1, 33, 40, 40), "P5": (1, 33, 20, 20)}
    return shapes == want, ", ".join(f"{k}={v[1:]}" for k, v in shapes.items())


def run_selftest(seed: int = 0, quick: bool = False) -> list[tuple[str, bool, str]]:
    rng = np.random.default_rng(seed)
    scale = 1 if quick else 4
    checks = [
        ("conv2d vs direct oracle", lambda: check_conv(rng, 50 * scale)),
        ("maxpool2d vs window scan", lambda: check_maxpool(rng, 25 * scale)),
        ("sppf vs composed oracle", lambda: check_sppf(rng, 5 * scale)),
        ("channel shuffle laws", check_shuffle),
        ("separable MAC identity", check_separable_identity),
        ("nms vs brute force", lambda: check_nms(rng, 50 * scale)),
        ("decode vs scalar decoder", lambda: check_decode(rng, 5 * scale)),
        ("average precision examples", check_ap_examples),
        ("matching vs exhaustive", lambda: check_matching(rng, 50 * scale)),
        ("weight file round trip", check_weights_roundtrip),
        ("default shape contract", check_shapes),
    ]
    results = []
    for name, fn in checks:
        t0 = time.perf_counter()
        try:
            ok, detail = fn()
        except Exception as exc:  # report, do not abort the suite
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        results.append((name, ok, f"{detail} ({time.perf_counter() - t0:.2f}s)"))
    return results
