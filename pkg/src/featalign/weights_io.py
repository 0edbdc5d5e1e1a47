"""Versioned binary container for named float64 parameter arrays.

Layout, all little-endian:

    magic "GNNW" | format version (u32) | parameter count (u32)
    then per parameter, in insertion order:
    name length (u32) | name bytes (utf-8) | rank (u32) | extents (u32 each)
    | payload (float64, C order)

Round-trips are bit-exact; dict insertion order is preserved.
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import Mapping

import numpy as np

from .errors import FormatVersionFault, TruncatedFileFault

MAGIC = b"GNNW"
FORMAT_VERSION = 1


def save_weights(path, params: Mapping[str, np.ndarray]) -> None:
    path = Path(path)
    chunks = [MAGIC, struct.pack("<II", FORMAT_VERSION, len(params))]
    for name, arr in params.items():
        arr = np.asarray(arr, dtype=np.float64)
        encoded = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack("<I", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape) if arr.ndim else b"")
        chunks.append(arr.astype("<f8", copy=False).tobytes(order="C"))
    path.write_bytes(b"".join(chunks))


class _Reader:
    def __init__(self, blob: bytes, path):
        self.blob = blob
        self.off = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.off + n > len(self.blob):
            raise TruncatedFileFault(f"{self.path}: file ends {self.off + n - len(self.blob)} bytes early")
        out = self.blob[self.off : self.off + n]
        self.off += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]


def load_weights(path) -> dict[str, np.ndarray]:
    path = Path(path)
    reader = _Reader(path.read_bytes(), path)
    magic = reader.take(4)
    if magic != MAGIC:
        raise FormatVersionFault(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
    version = reader.u32()
    if version != FORMAT_VERSION:
        raise FormatVersionFault(f"{path}: unsupported format version {version}")
    count = reader.u32()
    params: dict[str, np.ndarray] = {}
    for _ in range(count):
        name_len = reader.u32()
        name = reader.take(name_len).decode("utf-8")
        rank = reader.u32()
        shape = struct.unpack(f"<{rank}I", reader.take(4 * rank)) if rank else ()
        size = int(np.prod(shape)) if rank else 1
        payload = reader.take(8 * size)
        params[name] = np.frombuffer(payload, dtype="<f8").reshape(shape).copy()
    return params
