"""Acceptance criteria 1-10, one test each.

Every test is tagged with ``@pytest.mark.criterion``; the conftest hook
prints one PASS/FAIL line per criterion at the end of the run.
"""

import itertools
import json
import re
import subprocess
import sys
import time
from fractions import Fraction
from pathlib import Path

import numpy as np
import pytest

from shuffledet import ops, reference
from shuffledet.evaluate import GroundTruth, average_precision, evaluate_dataset, match_detections
from shuffledet.model import (
    GraphBuilder,
    Model,
    ModelConfig,
    build_neck_head,
    compare_with_baseline,
    count_params_flops,
    init_weights,
    load_weights,
    save_weights,
)
from shuffledet.model.network import build_network
from shuffledet.postprocess import Detection, nms
from shuffledet.synthetic import DATA_DIR

ROOT = Path(__file__).resolve().parents[1]
CLI = [sys.executable, "-m", "shuffledet"]


def _max_err(a, b):
    return float(np.max(np.abs(np.asarray(a, np.float64) - b))) if np.size(b) else 0.0


@pytest.mark.criterion(1, "conv2d/maxpool2d/sppf match brute-force oracles within 1e-5 in < 60 s")
def test_criterion_1_operator_oracles(record_property):
    rng = np.random.default_rng(1)
    t0 = time.perf_counter()
    x = rng.standard_normal((8, 16, 32, 32)).astype(np.float32)
    grid = itertools.product(
        [(1, 1), (3, 3), (5, 5), (1, 3)],   # kernel
        [(1, 1), (2, 2), (1, 2)],           # stride
        [(0, 0), (1, 1), (2, 1)],           # padding
        [1, 2, 4, 16],                      # groups; 16 = depth-wise
        [16, 32],                           # output channels
    )
    conv_cases, conv_err = 0, 0.0
    for kernel, stride, padding, groups, cout in grid:
        w = rng.standard_normal((cout, 16 // groups, *kernel)).astype(np.float32)
        b = rng.standard_normal(cout).astype(np.float32)
        got = ops.conv2d(x, w, b, stride, padding, groups)
        conv_err = max(conv_err, _max_err(got, reference.conv2d_reference(x, w, b, stride, padding, groups)))
        conv_cases += 1

    pool_err = 0.0
    for _ in range(100):
        k = int(rng.integers(1, 8))
        s, p = int(rng.integers(1, 4)), int(rng.integers(0, k // 2 + 1))
        xp = rng.standard_normal((2, 4, int(rng.integers(k, 24)), int(rng.integers(k, 24)))).astype(np.float32)
        pool_err = max(pool_err, _max_err(ops.maxpool2d(xp, k, s, p), reference.maxpool2d_reference(xp, k, s, p)))

    sppf_err = 0.0
    for _ in range(20):
        c = 2 * int(rng.integers(1, 9))
        xs = rng.standard_normal((1, c, int(rng.integers(3, 20)), int(rng.integers(3, 20)))).astype(np.float32)
        w1, b1 = rng.standard_normal((c // 2, c, 1, 1)).astype(np.float32) * 0.5, rng.standard_normal(c // 2).astype(np.float32)
        w2, b2 = rng.standard_normal((c, 2 * c, 1, 1)).astype(np.float32) * 0.5, rng.standard_normal(c).astype(np.float32)
        sppf_err = max(sppf_err, _max_err(ops.sppf(xs, w1, b1, w2, b2), reference.sppf_reference(xs, w1, b1, w2, b2)))
    elapsed = time.perf_counter() - t0

    record_property("detail", f"{conv_cases} conv combos err {conv_err:.1e}, maxpool err {pool_err:.1e}, "
                              f"sppf err {sppf_err:.1e}, {elapsed:.1f}s")
    assert conv_cases >= 200
    assert conv_err <= 1e-5 and pool_err <= 1e-5 and sppf_err <= 1e-5
    assert elapsed < 60.0


@pytest.mark.criterion(2, "channel shuffle laws for all c <= 64, g | c (exact)")
def test_criterion_2_shuffle_laws(record_property):
    rng = np.random.default_rng(2)
    pairs = 0
    for c in range(1, 65):
        x = rng.standard_normal((2, c, 3, 2)).astype(np.float32)
        labels = np.arange(c, dtype=np.float32).reshape(1, c, 1, 1)
        for g in (d for d in range(1, c + 1) if c % d == 0):
            y = ops.channel_shuffle(x, g)
            assert np.array_equal(np.sort(y, axis=1), np.sort(x, axis=1))            # multiset per (n, h, w)
            perm = ops.channel_shuffle(labels, g).ravel().astype(int)
            assert sorted(perm.tolist()) == list(range(c))                            # bijection
            assert np.array_equal(ops.channel_shuffle(y, c // g), x)                  # shuffle(c/g) inverts
            pairs += 1
    record_property("detail", f"{pairs} (c, g) pairs")


def _macs(build, shape):
    b = GraphBuilder({"x": shape})
    build(b)
    return count_params_flops(b.records, shape[2:]).total_macs


@pytest.mark.criterion(3, "separable MAC ratio = 1/C_out + 1/(kh*kw) exactly; 41,984 vs 294,912")
def test_criterion_3_separable_identity(record_property):
    std = _macs(lambda b: b.conv("c", "x", 32, 3, bn=False), (1, 16, 8, 8))
    sep = _macs(lambda b: b.conv("pw", b.dwconv("dw", "x", 3), 32, 1, bn=False), (1, 16, 8, 8))
    assert (sep, std) == (41_984, 294_912)
    checked = 0
    for k, cin, cout, hw in itertools.product((1, 3, 5, 7), (1, 3, 16, 24, 64), (1, 8, 32, 116), (4, 9)):
        shape = (1, cin, hw, hw)
        s = _macs(lambda b: b.conv("c", "x", cout, k, bn=False), shape)
        d = _macs(lambda b: b.conv("pw", b.dwconv("dw", "x", k), cout, 1, bn=False), shape)
        assert Fraction(d, s) == Fraction(1, cout) + Fraction(1, k * k)
        checked += 1
    record_property("detail", f"worked case {sep:,} / {std:,}; {checked} grid points exact")


@pytest.mark.criterion(4, "proposed backbone MACs < baseline C3/SPP MACs at 640x640; README records both")
def test_criterion_4_lightweight_backbone(record_property):
    res = subprocess.run([*CLI, "flops", "--classes", "6"], capture_output=True, text=True, check=True)
    s = json.loads(res.stdout)["summary"]
    assert s["input_size"] == [640, 640]
    proposed, baseline = s["proposed_backbone_macs"], s["baseline_backbone_macs"]
    record_property("detail", f"backbone {proposed:,} vs {baseline:,} MACs "
                              f"(full model {s['proposed_macs']:,} vs {s['baseline_macs']:,})")
    assert proposed < baseline
    assert s["proposed_macs"] < s["baseline_macs"]
    readme = (ROOT / "README.md").read_text(encoding="utf-8")
    for n in (proposed, baseline):
        assert f"{n:,}" in readme, f"README does not record {n:,}"


@pytest.mark.criterion(5, "640x640 shape contract: C3/C4/C5 and 33 (nc=6) / 45 (nc=10) head channels")
def test_criterion_5_shape_contract(record_property):
    cfg = ModelConfig()
    model = Model(cfg, init_weights(cfg, seed=0))
    image = np.random.default_rng(5).uniform(0, 1, (1, 3, 640, 640)).astype(np.float32)
    out = model.forward(image, features=True)
    shapes = {k: v.shape[1:] for k, v in out.items()}
    assert shapes == {"C3": (116, 80, 80), "C4": (232, 40, 40), "C5": (464, 20, 20),
                      "P3": (33, 80, 80), "P4": (33, 40, 40), "P5": (33, 20, 20)}
    cfg10 = ModelConfig(class_count=10)
    p = build_neck_head(cfg10, init_weights(cfg10, seed=0), out["C3"], out["C4"], out["C5"])
    assert [t.shape[1:] for t in p] == [(45, 80, 80), (45, 40, 40), (45, 20, 20)]
    record_property("detail", ", ".join(f"{k}={v}" for k, v in shapes.items()) + ", nc=10 heads 45")


@pytest.mark.criterion(6, "NMS equals brute-force suppressor on 1,000 scenes of <= 200 boxes")
def test_criterion_6_nms(record_property):
    rng = np.random.default_rng(6)
    total = 0
    for scene in range(1000):
        n = int(rng.integers(0, 201))
        xy = rng.uniform(0, 200, (n, 2))
        wh = rng.uniform(2, 60, (n, 2))
        scores = np.round(rng.uniform(0, 1, n), 2)      # coarse scores force ties
        dup = rng.random(n) < 0.1                         # some exact duplicate boxes
        for i in np.nonzero(dup)[0]:
            j = int(rng.integers(n))
            xy[i], wh[i] = xy[j], wh[j]
        cls = rng.integers(0, 4, n)
        thr = float(rng.choice([0.3, 0.45, 0.5, 0.7]))
        dets = [Detection(int(c), float(s), (float(x), float(y), float(x + w), float(y + h)))
                for c, s, (x, y), (w, h) in zip(cls, scores, xy, wh)]
        got = [id(d) for d in nms(dets, thr)]
        want = [id(dets[i]) for i in reference.nms_reference([(d.class_id, d.score, d.box) for d in dets], thr)]
        assert got == want, f"scene {scene}"
        total += n
    record_property("detail", f"1000 scenes, {total} boxes, identical order")


def _random_dataset(r):
    def box():
        x, y = r.uniform(0, 20, 2)
        w, h = r.uniform(2, 10, 2)
        return (float(x), float(y), float(x + w), float(y + h))

    gts, dets = [], []
    for k in range(int(r.integers(1, 5))):
        img = f"im{k}"
        for _ in range(int(r.integers(0, 4))):
            g = GroundTruth(img, int(r.integers(3)), box())
            gts.append(g)
            for _ in range(int(r.integers(0, 3))):  # hits and near-duplicates
                j = r.uniform(-1.5, 1.5, 4)
                dets.append((g.class_id, tuple(a + b for a, b in zip(g.box, j)), img))
        for _ in range(int(r.integers(0, 3))):
            dets.append((int(r.integers(3)), box(), img))
    scores = (r.permutation(len(dets)) + 1) / (len(dets) + 1)
    return [Detection(c, float(s), b, img) for (c, b, img), s in zip(dets, scores)], gts


@pytest.mark.criterion(7, "AP 0.8333 and perfect = 1.0; permutation/FP-monotonicity over 500 datasets vs reference")
def test_criterion_7_map_evaluator(record_property):
    assert abs(average_precision([0.9, 0.8, 0.7], [True, False, True], 2) - 0.8333) < 1e-4
    assert average_precision([0.9, 0.8, 0.7], [True, False, True], 2) == pytest.approx(5 / 6, abs=1e-12)
    perfect_gts = [GroundTruth("a", 0, (0, 0, 4, 4)), GroundTruth("b", 1, (1, 1, 5, 5))]
    perfect = evaluate_dataset([Detection(g.class_id, 1.0, g.box, g.image_id) for g in perfect_gts], perfect_gts, 2)
    assert perfect.map50 == 1.0 and perfect.image_recall == 1.0 and perfect.recall == [1.0, 1.0]

    rng = np.random.default_rng(7)
    fp_checks = 0
    for _ in range(500):
        dets, gts = _random_dataset(rng)
        rep = evaluate_dataset(dets, gts, 3)
        ref_map, ref_aps = reference.map_reference(dets, gts, 3)
        assert rep.ap == pytest.approx(ref_aps, abs=1e-12) and rep.map50 == pytest.approx(ref_map, abs=1e-12)
        assert abs(rep.map50 - float(np.mean(rep.ap))) <= 1e-12
        shuffled = [dets[i] for i in rng.permutation(len(dets))]
        assert evaluate_dataset(shuffled, gts, 3).to_json() == rep.to_json()
        is_tp, _ = match_detections(dets, gts)
        for i in [i for i, t in enumerate(is_tp) if not t]:
            fewer = dets[:i] + dets[i + 1:]
            assert all(b >= a - 1e-12 for a, b in zip(rep.ap, evaluate_dataset(fewer, gts, 3).ap))
            assert all(b >= a - 1e-12 for a, b in zip(ref_aps, reference.map_reference(fewer, gts, 3)[1]))
            fp_checks += 1
    record_property("detail", f"500 datasets, {fp_checks} FP deletions")


CORRUPTED_MAP50 = Fraction(553, 720)  # frozen from the reference evaluator


def _eval_file(name):
    res = subprocess.run([*CLI, "eval", "--detections", str(DATA_DIR / f"{name}_detections.json"), "--classes", "6",
                          "--images", str(DATA_DIR / "images"), "--labels", str(DATA_DIR / "labels")],
                         capture_output=True, text=True, check=True)
    return json.loads(res.stdout)


@pytest.mark.criterion(8, "synthetic set: oracle detector mAP50 = 1.0, corrupted detector = 553/720")
def test_criterion_8_synthetic_eval(record_property):
    oracle, corrupted = _eval_file("oracle"), _eval_file("corrupted")
    record_property("detail", f"oracle {oracle['map50']}, corrupted {corrupted['map50']:.6f}")
    assert oracle["map50"] == 1.0 and oracle["image_recall"] == 1.0
    assert corrupted["map50"] == pytest.approx(float(CORRUPTED_MAP50), abs=1e-12)


@pytest.mark.criterion(9, "detect twice gives byte-identical JSON; weight save/load round trip is byte-identical")
def test_criterion_9_determinism(tmp_path, record_property):
    weights = tmp_path / "w.syw"
    subprocess.run([*CLI, "init-weights", "--seed", "7", "--classes", "6", "--out", str(weights)], check=True)
    runs = []
    for k in range(2):
        dest = tmp_path / f"d{k}.json"
        subprocess.run([*CLI, "detect", "--weights", str(weights), "--image", str(DATA_DIR / "images" / "syn03.pgm"),
                        "--conf", "0.0001", "--json", str(dest)], check=True)
        runs.append(dest.read_bytes())
    count = len(json.loads(runs[0])["detections"])
    data = weights.read_bytes()
    cfg = ModelConfig()
    again = save_weights(load_weights(data, build_network(cfg).weight_shapes()))
    record_property("detail", f"{count} detections, {len(runs[0])} JSON bytes; {len(data)} weight bytes")
    assert count > 0
    assert runs[0] == runs[1]
    assert again == data
    assert save_weights(init_weights(cfg, seed=7)) == data


@pytest.mark.criterion(10, "init-weights && detect && eval && flops && selftest exit 0 in < 2 min")
def test_criterion_10_smoke(tmp_path, record_property):
    weights = tmp_path / "w.syw"
    image = DATA_DIR / "images" / "syn00.pgm"
    steps = [
        ["init-weights", "--seed", "0", "--classes", "6", "--out", str(weights)],
        ["detect", "--weights", str(weights), "--image", str(image), "--out", str(tmp_path / "r.ppm")],
        ["eval", "--weights", str(weights), "--images", str(DATA_DIR / "images"), "--labels", str(DATA_DIR / "labels")],
        ["flops", "--classes", "6"],
        ["selftest"],
    ]
    t0 = time.perf_counter()
    timings = []
    for argv in steps:
        s = time.perf_counter()
        res = subprocess.run([*CLI, *argv], capture_output=True, text=True)
        timings.append(f"{argv[0]} {time.perf_counter() - s:.1f}s")
        assert res.returncode == 0, f"{argv[0]} failed: {res.stderr}"
    elapsed = time.perf_counter() - t0
    record_property("detail", f"{elapsed:.1f}s total ({', '.join(timings)})")
    assert re.search(r"11/11 checks passed", res.stdout)
    assert elapsed < 120.0
