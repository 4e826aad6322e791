"""Binary PGM/PPM images, YOLO-format label files, box rendering and atomic writes.

Images become (1, 3, h, w) float32 tensors in [0, 1]; gray-scale (P5)
sources are replicated across the three channels.
"""

from __future__ import annotations

import os
import tempfile
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import FormatError
from .evaluate import GroundTruth
from .postprocess import Detection

PALETTE = (
    (255, 56, 56), (255, 157, 151), (255, 112, 31), (255, 178, 29), (207, 210, 49),
    (72, 249, 10), (146, 204, 23), (61, 219, 134), (26, 147, 52), (0, 212, 187),
    (44, 153, 168), (0, 194, 255), (52, 69, 147), (100, 115, 255), (0, 24, 236),
    (132, 56, 255), (82, 0, 133), (203, 56, 255), (255, 149, 200), (255, 55, 199),
)
_WS = b" \t\n\r\v\f"


def _header_token(data: bytes, pos: int) -> tuple[bytes, int]:
    """Next whitespace-separated header token, skipping ``#`` comments."""
    n = len(data)
    while pos < n:
        if data[pos] in _WS:
            pos += 1
        elif data[pos:pos + 1] == b"#":
            while pos < n and data[pos] not in b"\r\n":
                pos += 1
        else:
            break
    start = pos
    while pos < n and data[pos] not in _WS and data[pos:pos + 1] != b"#":
        pos += 1
    if start == pos:
        raise FormatError("unexpected end of header", offset=start)
    return data[start:pos], pos


def decode_pnm(data: bytes) -> np.ndarray:
    """Parse binary P5/P6 bytes into a (h, w, channels) uint8 array."""
    if len(data) < 2 or data[:2] not in (b"P5", b"P6"):
        raise FormatError("not a binary PGM/PPM file (expected magic P5 or P6)", offset=0)
    channels = 1 if data[:2] == b"P5" else 3
    pos = 2
    values = []
    for field in ("width", "height", "maxval"):
        start = pos
        tok, pos = _header_token(data, pos)
        if not tok.isdigit():
            raise FormatError(f"bad {field} {tok!r}", offset=start)
        values.append(int(tok))
    width, height, maxval = values
    if width < 1 or height < 1:
        raise FormatError(f"bad dimensions {width}x{height}", offset=2)
    if not 1 <= maxval <= 255:
        raise FormatError(f"only 8-bit images are supported, maxval={maxval}", offset=pos)
    if pos >= len(data) or data[pos] not in _WS:
        raise FormatError("missing whitespace after maxval", offset=pos)
    pos += 1
    need = width * height * channels
    if len(data) - pos < need:
        raise FormatError(f"short pixel data: need {need} bytes, have {len(data) - pos}", offset=len(data))
    return np.frombuffer(data, np.uint8, count=need, offset=pos).reshape(height, width, channels)


def read_image(path) -> np.ndarray:
    pixels = decode_pnm(Path(path).read_bytes())
    if pixels.shape[2] == 1:
        pixels = np.repeat(pixels, 3, axis=2)
    return (pixels.transpose(2, 0, 1)[None].astype(np.float32) / np.float32(255.0))


def to_pixels(image: np.ndarray) -> np.ndarray:
    """(1, 3, h, w) tensor in [0, 1] -> (h, w, 3) uint8, rounding to nearest."""
    if image.ndim != 4 or image.shape[0] != 1 or image.shape[1] not in (1, 3):
        raise FormatError(f"cannot encode tensor of shape {image.shape} as an image")
    px = np.clip(np.rint(np.asarray(image[0], np.float64) * 255.0), 0, 255).astype(np.uint8)
    if px.shape[0] == 1:
        px = np.repeat(px, 3, axis=0)
    return px.transpose(1, 2, 0)


def encode_ppm(pixels: np.ndarray) -> bytes:
    h, w = pixels.shape[:2]
    return b"P6\n%d %d\n255\n" % (w, h) + np.ascontiguousarray(pixels, np.uint8).tobytes()


def encode_pgm(pixels: np.ndarray) -> bytes:
    h, w = pixels.shape[:2]
    return b"P5\n%d %d\n255\n" % (w, h) + np.ascontiguousarray(pixels, np.uint8).tobytes()


def write_image(image: np.ndarray) -> bytes:
    """Encode a (1, 3, h, w) tensor as P6 bytes."""
    return encode_ppm(to_pixels(image))


def parse_annotations(path, width: int, height: int, image_id: str | None = None) -> list[GroundTruth]:
    """Read ``class cx cy w h`` lines (normalised to [0, 1]) into pixel corner boxes."""
    text = Path(path).read_text(encoding="utf-8")
    image_id = Path(path).stem if image_id is None else image_id
    return parse_annotation_text(text, width, height, image_id, source=str(path))


def parse_annotation_text(text: str, width: int, height: int, image_id: str = "", source: str = "<text>") -> list[GroundTruth]:
    out = []
    for lineno, line in enumerate(text.splitlines(), 1):
        fields = line.split()
        if not fields:
            continue
        where = f"{source}:{lineno}"
        if len(fields) != 5:
            raise FormatError(f"expected 5 fields, got {len(fields)}", record=where)
        try:
            cls = int(fields[0])
            cx, cy, w, h = (float(v) for v in fields[1:])
        except ValueError:
            raise FormatError(f"unparsable line {line.strip()!r}", record=where) from None
        if cls < 0:
            raise FormatError(f"negative class id {cls}", record=where)
        if not all(0.0 <= v <= 1.0 for v in (cx, cy, w, h)):
            raise FormatError("normalised coordinates must lie in [0, 1]", record=where)
        x1, y1 = (cx - w / 2) * width, (cy - h / 2) * height
        x2, y2 = (cx + w / 2) * width, (cy + h / 2) * height
        out.append(GroundTruth(image_id, cls, (max(x1, 0.0), max(y1, 0.0), min(x2, float(width)), min(y2, float(height)))))
    return out


def format_annotations(gts: Sequence[GroundTruth], width: int, height: int) -> str:
    lines = []
    for g in gts:
        x1, y1, x2, y2 = g.box
        lines.append(f"{g.class_id} {(x1 + x2) / 2 / width:.10g} {(y1 + y2) / 2 / height:.10g} "
                     f"{(x2 - x1) / width:.10g} {(y2 - y1) / height:.10g}")
    return "\n".join(lines) + ("\n" if lines else "")


def box_pixels(box, width: int, height: int) -> tuple[int, int, int, int]:
    """Integer, in-bounds pixel corners of a float box."""
    x1, y1, x2, y2 = (int(round(v)) for v in box)
    x1, x2 = sorted((min(max(x1, 0), width - 1), min(max(x2, 0), width - 1)))
    y1, y2 = sorted((min(max(y1, 0), height - 1), min(max(y2, 0), height - 1)))
    return x1, y1, x2, y2


def render_detections(image: np.ndarray, dets: Sequence[Detection]) -> bytes:
    """P6 bytes of ``image`` with a one-pixel outline per detection.

    Boxes are drawn lowest score first so the most confident ends up on top.
    """
    px = to_pixels(image).copy()
    h, w = px.shape[:2]
    for d in sorted(dets, key=lambda d: d.score):
        color = PALETTE[d.class_id % len(PALETTE)]
        x1, y1, x2, y2 = box_pixels(d.box, w, h)
        px[y1, x1:x2 + 1] = color
        px[y2, x1:x2 + 1] = color
        px[y1:y2 + 1, x1] = color
        px[y1:y2 + 1, x2] = color
    return encode_ppm(px)


def atomic_write(path, data: bytes | str) -> None:
    """Write via a temporary file in the same directory, then rename over ``path``."""
    path = Path(path)
    if isinstance(data, str):
        data = data.encode("utf-8")
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent or ".")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise
