import json

import numpy as np
import pytest

from shuffledet.cli import main
from shuffledet.dataio import decode_pnm, encode_pgm
from shuffledet.synthetic import DATA_DIR

SMALL = ["--size", "64"]


@pytest.fixture
def weights(tmp_path):
    path = tmp_path / "w.syw"
    assert main(["init-weights", "--seed", "3", "--classes", "6", "--out", str(path), *SMALL]) == 0
    return path


@pytest.fixture
def image(tmp_path):
    path = tmp_path / "img.pgm"
    px = np.random.default_rng(0).integers(0, 256, (48, 80, 1), dtype=np.uint8)
    path.write_bytes(encode_pgm(px))
    return path


def _run(argv, capsys):
    code = main(argv)
    out, err = capsys.readouterr()
    return code, out, err


def test_detect_writes_json_and_render(weights, image, tmp_path, capsys):
    render = tmp_path / "r.ppm"
    code, out, _ = _run(["detect", "--weights", str(weights), "--image", str(image), "--conf", "0.0001",
                         "--out", str(render), *SMALL], capsys)
    assert code == 0
    doc = json.loads(out)
    assert doc["image"] == "img.pgm" and doc["image_size"] == [48, 80]
    for d in doc["detections"]:
        assert set(d) == {"class_id", "class_name", "score", "box"}
        x1, y1, x2, y2 = d["box"]
        assert 0 <= x1 <= x2 <= 80 and 0 <= y1 <= y2 <= 48
    assert decode_pnm(render.read_bytes()).shape == (48, 80, 3)


def test_detect_is_deterministic(weights, image, capsys):
    argv = ["detect", "--weights", str(weights), "--image", str(image), "--conf", "0.0001", *SMALL]
    first = _run(argv, capsys)[1]
    assert first == _run(argv, capsys)[1]
    assert json.loads(first)["detections"]  # non-trivial output compared


def test_detect_conf_above_one_is_empty(weights, image, capsys):
    code, out, _ = _run(["detect", "--weights", str(weights), "--image", str(image), "--conf", "1.1", *SMALL], capsys)
    assert code == 0 and json.loads(out)["detections"] == []


def test_json_output_is_key_sorted(weights, image, tmp_path, capsys):
    dest = tmp_path / "d.json"
    assert _run(["detect", "--weights", str(weights), "--image", str(image), "--json", str(dest), *SMALL], capsys)[0] == 0
    text = dest.read_text()
    assert text == json.dumps(json.loads(text), sort_keys=True, indent=2) + "\n"


def test_flops_proposed_below_baseline(capsys):
    code, out, _ = _run(["flops", "--classes", "6"], capsys)
    s = json.loads(out)["summary"]
    assert code == 0
    assert s["proposed_macs"] < s["baseline_macs"]
    assert s["proposed_backbone_macs"] < s["baseline_backbone_macs"]


def test_eval_with_model(weights, capsys):
    code, out, _ = _run(["eval", "--weights", str(weights), "--images", str(DATA_DIR / "images"),
                         "--labels", str(DATA_DIR / "labels"), *SMALL], capsys)
    rep = json.loads(out)
    assert code == 0 and rep["images"] == 12 and len(rep["classes"]) == 6
    assert 0.0 <= rep["map50"] <= 1.0


@pytest.mark.parametrize("name,expected", [("oracle", 1.0), ("corrupted", 553 / 720)])
def test_eval_detection_files(name, expected, capsys):
    code, out, _ = _run(["eval", "--detections", str(DATA_DIR / f"{name}_detections.json"), "--classes", "6",
                         "--images", str(DATA_DIR / "images"), "--labels", str(DATA_DIR / "labels")], capsys)
    assert code == 0
    assert json.loads(out)["map50"] == pytest.approx(expected, abs=1e-12)


def test_bench_reports_latency(weights, image, capsys):
    code, out, _ = _run(["bench", "--weights", str(weights), "--image", str(image), "--iters", "2", "--warmup", "0",
                         *SMALL], capsys)
    doc = json.loads(out)
    assert code == 0 and doc["test_type"] == "single image" and doc["iters"] == 2
    assert 0 < doc["min_ms"] <= doc["p50_ms"] <= doc["p95_ms"]


def test_selftest_quick_passes(capsys):
    code, out, _ = _run(["selftest", "--quick"], capsys)
    assert code == 0 and "11/11 checks passed" in out


def test_unknown_flag_fails(capsys):
    code, _, err = _run(["detect", "--bogus"], capsys)
    assert code != 0 and err


def test_missing_file_fails_without_partial_output(tmp_path, weights, capsys):
    dest = tmp_path / "never.json"
    code, out, err = _run(["detect", "--weights", str(weights), "--image", str(tmp_path / "nope.pgm"),
                           "--json", str(dest), *SMALL], capsys)
    assert code != 0 and "error" in err and out == ""
    assert sorted(p.name for p in tmp_path.iterdir()) == ["w.syw"]


def test_corrupt_weights_fail(tmp_path, image, capsys):
    bad = tmp_path / "bad.syw"
    bad.write_bytes(b"SYW1\x01\x00\x00\x00\x05")
    code, _, err = _run(["detect", "--weights", str(bad), "--image", str(image), "--classes", "6", *SMALL], capsys)
    assert code == 2 and "truncated" in err


def test_wrong_class_count_fails(weights, image, capsys):
    code, _, err = _run(["detect", "--weights", str(weights), "--image", str(image), "--classes", "10", *SMALL], capsys)
    assert code == 2 and "head.p3" in err


def test_eval_needs_a_source(capsys):
    code, _, err = _run(["eval", "--images", ".", "--labels", "."], capsys)
    assert code == 2 and "--weights or --detections" in err
