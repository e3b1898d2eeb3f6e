"""Raw little-endian float32 array files with a 16-byte header.

Layout: 4-byte magic ``TVSL`` then uint32 K, H, W, then K*H*W float32 values.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"TVSL"
_HEADER = struct.Struct("<4sIII")


def write_raw(path, array) -> None:
    a = np.asarray(array)
    if a.ndim == 2:
        a = a[None]
    if a.ndim != 3:
        raise ValueError(f"expected a (K, H, W) or (H, W) array, got shape {a.shape}")
    k, h, w = a.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, k, h, w))
        fh.write(np.ascontiguousarray(a, dtype="<f4").tobytes())


def read_raw(path) -> np.ndarray:
    data = Path(path).read_bytes()
    magic, k, h, w = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise ValueError(f"{path}: bad magic {magic!r}")
    body = np.frombuffer(data, dtype="<f4", offset=_HEADER.size)
    if body.size != k * h * w:
        raise ValueError(f"{path}: expected {k * h * w} values, found {body.size}")
    return body.reshape(k, h, w).astype(np.float32)
