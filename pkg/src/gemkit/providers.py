"""Deterministic synthetic providers: desk-scale stand-ins for the neural
feature/flow/depth/aesthetic/detection/pose models consumed by the pipeline.

Every provider is a pure function of (input, seed): features hash patch
content into unit vectors, flow and depth are analytic fields, aesthetic
scores derive from an image hash, and detections/poses play back fixture
records.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Optional

import numpy as np

from gemkit.control import FeatureMap, FlowField
from gemkit.errors import ProviderError, ValidationError


def _hash_rng(seed: int, *parts: bytes) -> np.random.Generator:
    h = hashlib.sha256()
    h.update(str(seed).encode())
    for p in parts:
        h.update(p)
    return np.random.default_rng(int.from_bytes(h.digest()[:8], "little"))


def _image_2d(image: np.ndarray) -> np.ndarray:
    img = np.asarray(image, dtype=np.float64)
    if img.ndim == 3:
        img = img.mean(axis=0)
    if img.ndim != 2:
        raise ValidationError(f"expected [H, W] or [C, H, W] image, got {img.shape}")
    return img


class SyntheticProviderSet:
    """Bundle of all six provider methods with one seed.

    ``flow_mode`` is one of zero / constant / affine, ``depth_mode`` plane or
    ramp; detections and poses come from an optional fixture file (JSON list
    per frame index)."""

    def __init__(
        self,
        seed: int = 0,
        feature_dim: int = 16,
        patch_stride: int = 16,
        flow_mode: str = "zero",
        flow_params: Optional[dict] = None,
        depth_mode: str = "plane",
        depth_params: Optional[dict] = None,
        fixtures: Optional[dict] = None,
    ):
        self.seed = seed
        self.feature_dim = feature_dim
        self.patch_stride = patch_stride
        self.flow_mode = flow_mode
        self.flow_params = dict(flow_params or {})
        self.depth_mode = depth_mode
        self.depth_params = dict(depth_params or {})
        self.fixtures = fixtures or {}

    @classmethod
    def from_config(cls, config: dict) -> "SyntheticProviderSet":
        fixtures = config.get("fixtures")
        if isinstance(fixtures, str):
            path = Path(fixtures)
            if not path.exists():
                raise ProviderError(f"fixture file not found: {fixtures}")
            fixtures = json.loads(path.read_text())
        return cls(
            seed=config.get("seed", 0),
            feature_dim=config.get("feature_dim", 16),
            patch_stride=config.get("patch_stride", 16),
            flow_mode=config.get("flow_mode", "zero"),
            flow_params=config.get("flow_params"),
            depth_mode=config.get("depth_mode", "plane"),
            depth_params=config.get("depth_params"),
            fixtures=fixtures,
        )

    # -- features ---------------------------------------------------------
    def features(self, image: np.ndarray, dim: Optional[int] = None, patch_stride: Optional[int] = None) -> FeatureMap:
        """Unit feature vector per patch, derived from a hash of the patch
        content; identical images give identical maps."""
        img = _image_2d(image)
        ps = patch_stride or self.patch_stride
        d = dim or self.feature_dim
        h, w = img.shape[0] // ps, img.shape[1] // ps
        if h < 1 or w < 1:
            raise ValidationError(f"image {img.shape} smaller than one {ps}px patch")
        grid = np.zeros((d, h, w))
        for cy in range(h):
            for cx in range(w):
                patch = img[cy * ps : (cy + 1) * ps, cx * ps : (cx + 1) * ps]
                rng = _hash_rng(self.seed, patch.astype(np.float32).tobytes())
                v = rng.standard_normal(d)
                grid[:, cy, cx] = v / np.linalg.norm(v)
        return FeatureMap(grid, patch_stride=ps)

    # -- flow ---------------------------------------------------------------
    def flow(self, frame_a: np.ndarray, frame_b: np.ndarray) -> FlowField:
        """Analytic displacement field shaped like frame_a."""
        img = _image_2d(frame_a)
        h, w = img.shape
        if self.flow_mode == "zero":
            grid = np.zeros((2, h, w))
        elif self.flow_mode == "constant":
            dx = float(self.flow_params.get("dx", 0.0))
            dy = float(self.flow_params.get("dy", 0.0))
            grid = np.stack([np.full((h, w), dx), np.full((h, w), dy)])
        elif self.flow_mode == "affine":
            # [dx, dy] = A @ [x, y] + b
            a = np.asarray(self.flow_params.get("A", np.zeros((2, 2))), dtype=np.float64)
            b = np.asarray(self.flow_params.get("b", np.zeros(2)), dtype=np.float64)
            ys, xs = np.mgrid[0:h, 0:w]
            grid = np.stack(
                [a[0, 0] * xs + a[0, 1] * ys + b[0], a[1, 0] * xs + a[1, 1] * ys + b[1]]
            )
        else:
            raise ProviderError(f"unknown flow mode {self.flow_mode!r}")
        return FlowField(grid)

    # -- depth --------------------------------------------------------------
    def depth(self, image: np.ndarray) -> np.ndarray:
        """Analytic strictly positive depth surface in meters."""
        img = _image_2d(image)
        h, w = img.shape
        if self.depth_mode == "plane":
            z = float(self.depth_params.get("z", 10.0))
            out = np.full((h, w), z)
        elif self.depth_mode == "ramp":
            ax = float(self.depth_params.get("ax", 0.0))
            ay = float(self.depth_params.get("ay", 0.05))
            c = float(self.depth_params.get("c", 5.0))
            ys, xs = np.mgrid[0:h, 0:w]
            out = ax * xs + ay * ys + c
        else:
            raise ProviderError(f"unknown depth mode {self.depth_mode!r}")
        if np.any(out <= 0):
            raise ProviderError("configured depth surface is not strictly positive")
        return out

    # -- aesthetic ------------------------------------------------------------
    def aesthetic(self, image: np.ndarray) -> float:
        """Hash-derived score in [0, 10], stable for identical images."""
        img = _image_2d(image)
        rng = _hash_rng(self.seed, b"aesthetic", img.astype(np.float32).tobytes())
        return float(rng.uniform(0.0, 10.0))

    # -- fixture playback -------------------------------------------------------
    def detections(self, frame_index: int) -> list:
        return self._fixture("detections", frame_index)

    def pose(self, frame_index: int) -> list:
        return self._fixture("pose", frame_index)

    def _fixture(self, method: str, frame_index: int) -> list:
        table = self.fixtures.get(method)
        if table is None:
            raise ProviderError(f"no {method} fixture configured")
        key = str(int(frame_index))
        if isinstance(table, dict):
            if key not in table:
                raise ProviderError(f"{method} fixture has no frame {frame_index}")
            return table[key]
        if not (0 <= int(frame_index) < len(table)):
            raise ProviderError(f"{method} fixture has no frame {frame_index}")
        return table[int(frame_index)]
