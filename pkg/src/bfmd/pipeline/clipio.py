"""Raw pixel clip container: b"BFMDCLIP", four little-endian u32 dims (T, H, W, C), u8 pixels."""

from __future__ import annotations

import struct

import numpy as np

from bfmd.errors import MalformedDocument

MAGIC = b"BFMDCLIP"
_HEADER = struct.Struct("<8s4I")


def encode_clip(clip: np.ndarray) -> bytes:
    if clip.dtype != np.uint8 or clip.ndim != 4:
        raise ValueError("clip must be a 4-d uint8 array (T, H, W, C)")
    return _HEADER.pack(MAGIC, *clip.shape) + np.ascontiguousarray(clip).tobytes()


def decode_clip(data: bytes) -> np.ndarray:
    if len(data) < _HEADER.size:
        raise MalformedDocument("clip file truncated before header end")
    magic, t, h, w, c = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise MalformedDocument(f"bad clip magic {magic!r}")
    n = t * h * w * c
    body = data[_HEADER.size :]
    if len(body) != n:
        raise MalformedDocument(f"clip body has {len(body)} bytes, header promises {n}")
    return np.frombuffer(body, dtype=np.uint8).reshape(t, h, w, c)


def write_clip(path, clip: np.ndarray) -> None:
    with open(path, "wb") as fh:
        fh.write(encode_clip(clip))


def read_clip(path) -> np.ndarray:
    with open(path, "rb") as fh:
        return decode_clip(fh.read())
