"""Binary weight file.

Layout (little-endian)::

    b"SYW1"  u32 record_count
    per record: u16 name_len, name (UTF-8), u8 ndim, ndim x u32 dims,
                prod(dims) x float32

Round trips are bit exact: values are copied as raw float32 words.
"""

from __future__ import annotations

import struct
from typing import Mapping

import numpy as np

from ..errors import FormatError

MAGIC = b"SYW1"


def save_weights(store: Mapping[str, np.ndarray]) -> bytes:
    parts = [MAGIC, struct.pack("<I", len(store))]
    for name, arr in store.items():
        raw = name.encode("utf-8")
        if len(raw) > 0xFFFF:
            raise FormatError("tensor name too long", record=name)
        arr = np.asarray(arr)
        if arr.ndim > 0xFF:
            raise FormatError("too many dimensions", record=name)
        parts.append(struct.pack("<H", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return b"".join(parts)


def load_weights(data: bytes, expected: Mapping[str, tuple[int, ...]] | None = None) -> dict[str, np.ndarray]:
    """Parse a weight file; if ``expected`` is given, names and shapes must match it exactly."""
    view = memoryview(data)
    if len(data) < 8 or bytes(view[:4]) != MAGIC:
        raise FormatError(f"bad magic, expected {MAGIC!r}", offset=0)
    (count,) = struct.unpack_from("<I", data, 4)
    pos = 8
    store: dict[str, np.ndarray] = {}

    def need(n: int, what: str, record: str | None) -> None:
        if pos + n > len(data):
            raise FormatError(f"truncated file while reading {what}", offset=pos, record=record)

    for index in range(count):
        label = f"#{index}"
        need(2, "name length", label)
        (nlen,) = struct.unpack_from("<H", data, pos)
        pos += 2
        need(nlen, "name", label)
        try:
            name = bytes(view[pos:pos + nlen]).decode("utf-8")
        except UnicodeDecodeError:
            raise FormatError("name is not valid UTF-8", offset=pos, record=label) from None
        pos += nlen
        need(1, "rank", name)
        ndim = data[pos]
        pos += 1
        need(4 * ndim, "dimensions", name)
        dims = struct.unpack_from(f"<{ndim}I", data, pos)
        pos += 4 * ndim
        size = int(np.prod(dims, dtype=np.int64)) if ndim else 1
        need(4 * size, "values", name)
        if name in store:
            raise FormatError("duplicate tensor name", offset=pos, record=name)
        store[name] = np.frombuffer(data, dtype="<f4", count=size, offset=pos).astype(np.float32).reshape(dims)
        pos += 4 * size
    if pos != len(data):
        raise FormatError(f"{len(data) - pos} trailing bytes after last record", offset=pos)
    if expected is not None:
        check_store(store, expected)
    return store


def check_store(store: Mapping[str, np.ndarray], expected: Mapping[str, tuple[int, ...]]) -> None:
    for name, shape in expected.items():
        if name not in store:
            raise FormatError("weight required by the model is missing", record=name)
        if tuple(store[name].shape) != tuple(shape):
            raise FormatError(f"shape {tuple(store[name].shape)} does not match model shape {tuple(shape)}", record=name)
    extra = [n for n in store if n not in expected]
    if extra:
        raise FormatError("weight not used by the model", record=extra[0])
