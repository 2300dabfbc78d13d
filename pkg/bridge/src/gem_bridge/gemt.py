"""Standalone codec for the GEMT tensor format used on the wire.

Layout: magic "GEMT", u32 little-endian header length, UTF-8 JSON header
{"dtype": "f32", "shape": [...]}, row-major little-endian float32 payload.
"""

from __future__ import annotations

import json
import struct

import numpy as np

MAGIC = b"GEMT"


class GemtError(ValueError):
    pass


def to_bytes(arr: np.ndarray) -> bytes:
    a = np.ascontiguousarray(np.asarray(arr, dtype=np.float32))
    header = json.dumps({"dtype": "f32", "shape": list(a.shape)}).encode("utf-8")
    return MAGIC + struct.pack("<I", len(header)) + header + a.astype("<f4", copy=False).tobytes()


def from_bytes(raw: bytes) -> np.ndarray:
    if len(raw) < 8 or raw[:4] != MAGIC:
        raise GemtError("not a GEMT blob")
    (hlen,) = struct.unpack("<I", raw[4:8])
    header = json.loads(raw[8 : 8 + hlen].decode("utf-8"))
    if header.get("dtype") != "f32":
        raise GemtError(f"unsupported dtype {header.get('dtype')!r}")
    shape = header["shape"]
    count = int(np.prod(shape, dtype=np.int64)) if shape else 1
    payload = raw[8 + hlen :]
    if len(payload) != 4 * count:
        raise GemtError("payload length mismatch")
    return np.frombuffer(payload, dtype="<f4").astype(np.float32, copy=True).reshape(shape)


def read_file(path: str) -> np.ndarray:
    with open(path, "rb") as fh:
        return from_bytes(fh.read())
