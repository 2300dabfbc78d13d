"""Minimal dense-tensor substrate and the GEMT binary file format.

Tensors are plain numpy arrays. On disk a tensor is:

    magic "GEMT" | u32 little-endian header length | UTF-8 JSON header | payload

with header ``{"dtype": "f32", "shape": [...]}`` and a row-major little-endian
float32 payload. Write/read round-trips are bit-exact for finite values.
Tensors are immutable by convention once written; nothing here locks.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from gemkit.errors import ValidationError

MAGIC = b"GEMT"

LATENT_KINDS = ("rgb-latent", "depth-latent", "pixel")


class GemtError(ValidationError):
    """Malformed or inconsistent GEMT file."""


def tensor_write(t: np.ndarray, path: str | Path, allow_nonfinite: bool = False) -> None:
    """Write ``t`` to ``path`` in the GEMT format (float32, little-endian).

    Raises ValidationError on non-finite values unless ``allow_nonfinite``;
    mask channels carrying sentinels <= 0 are finite and always fine.
    """
    arr = np.asarray(t, dtype=np.float32)
    if not allow_nonfinite and arr.size and not np.isfinite(arr).all():
        raise ValidationError("tensor contains NaN/Inf; pass allow_nonfinite=True to force")
    header = json.dumps({"dtype": "f32", "shape": list(arr.shape)}).encode("utf-8")
    payload = np.ascontiguousarray(arr).astype("<f4", copy=False).tobytes()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        fh.write(payload)


def tensor_read(path: str | Path) -> np.ndarray:
    """Read a GEMT file back into a float32 array (inverse of tensor_write)."""
    with open(path, "rb") as fh:
        raw = fh.read()
    return tensor_from_bytes(raw)


def tensor_to_bytes(t: np.ndarray, allow_nonfinite: bool = False) -> bytes:
    """Serialize a tensor to GEMT bytes (same layout as the file format)."""
    arr = np.asarray(t, dtype=np.float32)
    if not allow_nonfinite and arr.size and not np.isfinite(arr).all():
        raise ValidationError("tensor contains NaN/Inf")
    header = json.dumps({"dtype": "f32", "shape": list(arr.shape)}).encode("utf-8")
    return MAGIC + struct.pack("<I", len(header)) + header + np.ascontiguousarray(arr).astype("<f4", copy=False).tobytes()


def tensor_from_bytes(raw: bytes) -> np.ndarray:
    """Parse GEMT bytes. Raises GemtError on bad magic/header or length mismatch."""
    if len(raw) < 8:
        raise GemtError("truncated: missing magic/header length")
    if raw[:4] != MAGIC:
        raise GemtError("not a GEMT file")
    (hlen,) = struct.unpack("<I", raw[4:8])
    if len(raw) < 8 + hlen:
        raise GemtError("truncated: incomplete header")
    try:
        header = json.loads(raw[8 : 8 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise GemtError(f"malformed header: {exc}") from exc
    if not isinstance(header, dict) or header.get("dtype") != "f32" or "shape" not in header:
        raise GemtError("malformed header: expected {'dtype': 'f32', 'shape': [...]}")
    shape = header["shape"]
    if not isinstance(shape, list) or any((not isinstance(d, int)) or d < 0 for d in shape):
        raise GemtError("malformed header: bad shape")
    count = int(np.prod(shape, dtype=np.int64)) if shape else 1
    payload = raw[8 + hlen :]
    if len(payload) != 4 * count:
        raise GemtError(f"payload length mismatch: expected {4 * count} bytes, got {len(payload)}")
    return np.frombuffer(payload, dtype="<f4").astype(np.float32, copy=True).reshape(shape)


@dataclass(frozen=True)
class VideoLatent:
    """A stack of per-frame feature maps, shape [N, C, H, W].

    ``kind`` tags the channel semantics: one of rgb-latent / depth-latent / pixel.
    """

    frames: np.ndarray
    kind: str = "rgb-latent"

    def __post_init__(self):
        arr = np.asarray(self.frames)
        if arr.ndim != 4:
            raise ValidationError(f"VideoLatent expects [N, C, H, W], got shape {arr.shape}")
        if min(arr.shape) < 1:
            raise ValidationError(f"VideoLatent extents must be >= 1, got {arr.shape}")
        if self.kind not in LATENT_KINDS:
            raise ValidationError(f"unknown latent kind {self.kind!r}")
        object.__setattr__(self, "frames", arr)

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]


def frame_l2(a: VideoLatent | np.ndarray, b: VideoLatent | np.ndarray) -> np.ndarray:
    """Per-frame Euclidean distance between two equally shaped frame stacks.

    Returns a length-N vector; frame axis is the leading one.
    """
    xa = a.frames if isinstance(a, VideoLatent) else np.asarray(a)
    xb = b.frames if isinstance(b, VideoLatent) else np.asarray(b)
    if xa.shape != xb.shape:
        raise ValidationError(f"shape mismatch: {xa.shape} vs {xb.shape}")
    diff = (xa.astype(np.float64) - xb.astype(np.float64)).reshape(xa.shape[0], -1)
    return np.sqrt((diff * diff).sum(axis=1))
