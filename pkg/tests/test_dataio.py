import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from shuffledet.dataio import (
    PALETTE,
    atomic_write,
    decode_pnm,
    encode_pgm,
    encode_ppm,
    format_annotations,
    parse_annotation_text,
    parse_annotations,
    read_image,
    render_detections,
    write_image,
)
from shuffledet.errors import FormatError
from shuffledet.postprocess import Detection


def test_read_pgm_single_white_pixel(tmp_path):
    path = tmp_path / "w.pgm"
    path.write_bytes(b"P5\n1 1\n255\n\xff")
    img = read_image(path)
    assert img.shape == (1, 3, 1, 1) and img.dtype == np.float32
    assert img.ravel().tolist() == [1.0, 1.0, 1.0]


def test_read_ppm_layout(tmp_path):
    path = tmp_path / "rb.ppm"
    path.write_bytes(b"P6 2 1 255\n" + bytes([255, 0, 0, 0, 0, 255]))
    img = read_image(path)
    assert img[0, 0, 0].tolist() == [1.0, 0.0]
    assert img[0, 2, 0].tolist() == [0.0, 1.0]


def test_header_comments_are_skipped():
    px = decode_pnm(b"P5\n# made by hand\n2 # width\n1\n255\n\x01\x02")
    assert px.ravel().tolist() == [1, 2]


def test_pnm_errors_carry_offsets():
    with pytest.raises(FormatError, match="byte offset 0"):
        decode_pnm(b"P3\n1 1\n255\n0")
    with pytest.raises(FormatError, match="short pixel data"):
        decode_pnm(b"P6\n2 2\n255\n" + b"\x00" * 11)
    with pytest.raises(FormatError, match="bad width"):
        decode_pnm(b"P5\nx 1\n255\n\x00")
    with pytest.raises(FormatError, match="dimensions"):
        decode_pnm(b"P5\n0 1\n255\n")
    with pytest.raises(FormatError, match="8-bit"):
        decode_pnm(b"P5\n1 1\n65535\n\x00\x00")
    with pytest.raises(FormatError, match="end of header"):
        decode_pnm(b"P5\n1")


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 9), st.integers(1, 9), st.integers(0, 2**32 - 1))
def test_image_round_trip(h, w, seed):
    px = np.random.default_rng(seed).integers(0, 256, (h, w, 3), dtype=np.uint8)
    data = encode_ppm(px)
    assert np.array_equal(decode_pnm(data), px)
    img = (px.transpose(2, 0, 1)[None].astype(np.float32) / np.float32(255.0))
    assert write_image(img) == data
    gray = px[:, :, :1]
    assert np.array_equal(decode_pnm(encode_pgm(gray)), gray)


def test_annotation_examples(tmp_path):
    (g,) = parse_annotation_text("0 0.5 0.5 1.0 1.0", 100, 100)
    assert g.box == (0.0, 0.0, 100.0, 100.0) and g.class_id == 0
    (g,) = parse_annotation_text("2 0.25 0.25 0.5 0.5\n", 200, 100)
    assert g.box == (0.0, 0.0, 100.0, 50.0) and g.class_id == 2
    empty = tmp_path / "e.txt"
    empty.write_text("")
    assert parse_annotations(empty, 10, 10) == []


def test_annotation_image_id_from_file_name(tmp_path):
    path = tmp_path / "img7.txt"
    path.write_text("1 0.5 0.5 0.2 0.2\n\n")
    (g,) = parse_annotations(path, 50, 50)
    assert g.image_id == "img7"


def test_annotation_errors_name_the_line():
    with pytest.raises(FormatError, match=":2"):
        parse_annotation_text("0 0.5 0.5 0.1 0.1\n0 0.5 0.5\n", 10, 10)
    with pytest.raises(FormatError, match=":1"):
        parse_annotation_text("a 0.5 0.5 0.1 0.1", 10, 10)
    with pytest.raises(FormatError, match="\\[0, 1\\]"):
        parse_annotation_text("0 1.5 0.5 0.1 0.1", 10, 10)
    with pytest.raises(FormatError, match="negative"):
        parse_annotation_text("-1 0.5 0.5 0.1 0.1", 10, 10)


def test_annotation_format_round_trip():
    gts = parse_annotation_text("3 0.3 0.6 0.2 0.4\n1 0.5 0.5 1 1\n", 128, 64, "x")
    again = parse_annotation_text(format_annotations(gts, 128, 64), 128, 64, "x")
    assert again == gts
    assert format_annotations([], 1, 1) == ""


def _image(rng, h=12, w=16):
    return (rng.integers(0, 256, (1, 3, h, w)).astype(np.float32) / np.float32(255.0))


def _pixels(ppm: bytes, h, w):
    return decode_pnm(ppm).reshape(h, w, 3)


def test_render_no_detections_is_plain_image(rng):
    img = _image(rng)
    assert render_detections(img, []) == write_image(img)


def test_render_one_box_recolours_exactly_its_perimeter(rng):
    img = _image(rng)
    before = _pixels(write_image(img), 12, 16)
    after = _pixels(render_detections(img, [Detection(1, 0.5, (2.0, 3.0, 9.0, 8.0))]), 12, 16)
    changed = np.any(before != after, axis=2)
    want = np.zeros((12, 16), bool)
    want[3, 2:10] = want[8, 2:10] = True
    want[3:9, 2] = want[3:9, 9] = True
    # a pixel that already had the outline colour would not show up as a change
    already = np.all(before == PALETTE[1], axis=2)
    assert np.array_equal(changed | (want & already), want)
    assert np.all(after[want] == PALETTE[1])


def test_render_highest_score_on_top(rng):
    img = _image(rng)
    low = Detection(0, 0.3, (2.0, 2.0, 10.0, 10.0))
    high = Detection(2, 0.9, (2.0, 2.0, 6.0, 6.0))
    for order in ([low, high], [high, low]):
        px = _pixels(render_detections(img, order), 12, 16)
        assert tuple(px[2, 2]) == PALETTE[2]  # shared corner
        assert tuple(px[2, 8]) == PALETTE[0]


def test_render_clamps_boxes_outside_the_image(rng):
    img = _image(rng)
    px = _pixels(render_detections(img, [Detection(0, 0.5, (-5.0, -5.0, 100.0, 100.0))]), 12, 16)
    assert tuple(px[0, 0]) == PALETTE[0] and tuple(px[11, 15]) == PALETTE[0]


def test_atomic_write_replaces_and_leaves_no_temp_files(tmp_path):
    path = tmp_path / "out.json"
    atomic_write(path, "one")
    atomic_write(path, b"two")
    assert path.read_bytes() == b"two"
    assert [p.name for p in tmp_path.iterdir()] == ["out.json"]


def test_atomic_write_failure_keeps_old_file(tmp_path):
    path = tmp_path / "out.txt"
    path.write_text("old")
    with pytest.raises(TypeError):
        atomic_write(path, 123)  # not bytes or str
    assert path.read_text() == "old"
    assert [p.name for p in tmp_path.iterdir()] == ["out.txt"]
