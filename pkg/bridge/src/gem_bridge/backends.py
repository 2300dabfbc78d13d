"""Model backends for the six provider methods.

Neural backends are small torch networks whose weights come from a
configured checkpoint when one is given; without a checkpoint they fall back
to a deterministic seeded initialization so the bridge stays usable (and
byte-reproducible) on machines without model zoos. Flow and detection use
classical algorithms. Every backend carries an identifier that is echoed in
responses.
"""

from __future__ import annotations

import numpy as np

import cv2
import torch
import torch.nn as nn


class BackendError(RuntimeError):
    """Raised at startup when a backend cannot be constructed/loaded."""


def _as_chw(image: np.ndarray) -> np.ndarray:
    img = np.asarray(image, dtype=np.float32)
    if img.ndim == 2:
        img = np.stack([img] * 3)
    if img.ndim != 3:
        raise ValueError(f"expected [H, W] or [C, H, W] image, got shape {img.shape}")
    if img.shape[0] == 1:
        img = np.concatenate([img] * 3)
    if img.shape[0] != 3:
        raise ValueError(f"expected 1 or 3 channels, got {img.shape[0]}")
    return img


def _as_gray_u8(image: np.ndarray) -> np.ndarray:
    img = np.asarray(image, dtype=np.float32)
    if img.ndim == 3:
        img = img.mean(axis=0)
    if img.ndim != 2:
        raise ValueError(f"expected an image, got shape {img.shape}")
    return np.clip(img * 255.0, 0.0, 255.0).astype(np.uint8)


def _load_checkpoint(module: nn.Module, checkpoint: str | None, device: str) -> str:
    if checkpoint is None:
        return "seeded-init"
    try:
        state = torch.load(checkpoint, map_location=device)
        if isinstance(state, dict) and "state_dict" in state:
            state = state["state_dict"]
        module.load_state_dict(state)
    except Exception as exc:  # noqa: BLE001
        raise BackendError(f"cannot load checkpoint {checkpoint!r}: {exc}") from exc
    return f"checkpoint:{checkpoint}"


class ConvFeatureExtractor:
    """Patch features on a stride-16 grid, unit-normalized per cell."""

    def __init__(self, dim: int = 32, seed: int = 0, checkpoint: str | None = None, device: str = "cpu"):
        self.dim = dim
        self.patch_stride = 16
        torch.manual_seed(seed)
        self.net = nn.Sequential(
            nn.Conv2d(3, 16, 3, stride=2, padding=1), nn.SiLU(),
            nn.Conv2d(16, 32, 3, stride=2, padding=1), nn.SiLU(),
            nn.Conv2d(32, 64, 3, stride=2, padding=1), nn.SiLU(),
            nn.Conv2d(64, dim, 3, stride=2, padding=1),
        ).to(device).eval()
        self.device = device
        self.identifier = f"conv-features/{_load_checkpoint(self.net, checkpoint, device)}"

    @torch.no_grad()
    def __call__(self, image: np.ndarray) -> np.ndarray:
        chw = _as_chw(image)
        h = (chw.shape[1] // self.patch_stride) * self.patch_stride
        w = (chw.shape[2] // self.patch_stride) * self.patch_stride
        if h < self.patch_stride or w < self.patch_stride:
            raise ValueError(f"image {chw.shape[1:]} smaller than one {self.patch_stride}px patch")
        x = torch.from_numpy(chw[:, :h, :w]).unsqueeze(0).to(self.device)
        grid = self.net(x)[0].cpu().numpy()
        norms = np.linalg.norm(grid, axis=0, keepdims=True)
        return grid / np.maximum(norms, 1e-12)


class FarnebackFlow:
    """Dense optical flow in pixels via the Farneback algorithm."""

    identifier = "farneback-flow/opencv"

    def __call__(self, frame_a: np.ndarray, frame_b: np.ndarray) -> np.ndarray:
        a, b = _as_gray_u8(frame_a), _as_gray_u8(frame_b)
        if a.shape != b.shape:
            raise ValueError(f"frame shapes differ: {a.shape} vs {b.shape}")
        flow = cv2.calcOpticalFlowFarneback(a, b, None, 0.5, 3, 15, 3, 5, 1.2, 0)
        return np.transpose(flow, (2, 0, 1)).astype(np.float32)  # [2, H, W] = (dx, dy)


class ConvDepthEstimator:
    """Monocular depth in meters, strictly positive by construction."""

    def __init__(self, scale: float = 20.0, seed: int = 1, checkpoint: str | None = None, device: str = "cpu"):
        self.scale = float(scale)
        torch.manual_seed(seed)
        self.net = nn.Sequential(
            nn.Conv2d(3, 16, 5, stride=2, padding=2), nn.SiLU(),
            nn.Conv2d(16, 32, 3, stride=2, padding=1), nn.SiLU(),
            nn.Conv2d(32, 16, 3, padding=1), nn.SiLU(),
            nn.Conv2d(16, 1, 3, padding=1),
        ).to(device).eval()
        self.device = device
        self.identifier = f"conv-depth/{_load_checkpoint(self.net, checkpoint, device)}"

    @torch.no_grad()
    def __call__(self, image: np.ndarray) -> np.ndarray:
        chw = _as_chw(image)
        x = torch.from_numpy(chw).unsqueeze(0).to(self.device)
        raw = self.net(x)
        up = torch.nn.functional.interpolate(
            raw, size=chw.shape[1:], mode="bilinear", align_corners=False
        )
        depth = torch.nn.functional.softplus(up)[0, 0] * self.scale + 0.1
        return depth.cpu().numpy().astype(np.float32)


class HeatmapPoseEstimator:
    """17-joint pose from seeded heatmaps: one person per image."""

    def __init__(self, seed: int = 2, checkpoint: str | None = None, device: str = "cpu"):
        torch.manual_seed(seed)
        self.net = nn.Sequential(
            nn.Conv2d(3, 32, 5, stride=2, padding=2), nn.SiLU(),
            nn.Conv2d(32, 32, 3, stride=2, padding=1), nn.SiLU(),
            nn.Conv2d(32, 17, 3, padding=1),
        ).to(device).eval()
        self.device = device
        self.identifier = f"heatmap-pose/{_load_checkpoint(self.net, checkpoint, device)}"

    @torch.no_grad()
    def __call__(self, image: np.ndarray) -> list:
        chw = _as_chw(image)
        x = torch.from_numpy(chw).unsqueeze(0).to(self.device)
        heat = self.net(x)[0]  # [17, H/4, W/4]
        c, hh, ww = heat.shape
        flat = heat.reshape(c, -1)
        idx = flat.argmax(dim=1)
        peak = torch.sigmoid(flat.max(dim=1).values)
        ys = (idx // ww).float() * 4.0 + 2.0
        xs = (idx % ww).float() * 4.0 + 2.0
        kps = [[float(xs[j]), float(ys[j]), 2] for j in range(c)]
        x0, x1 = float(xs.min()), float(xs.max())
        y0, y1 = float(ys.min()), float(ys.max())
        area = max(x1 - x0, 1.0) * max(y1 - y0, 1.0)
        return [{"keypoints": kps, "score": float(peak.mean()), "area": area}]


class BlobDetector:
    """Connected-component boxes over an Otsu threshold, labeled vehicle."""

    identifier = "blob-detector/opencv"

    def __init__(self, min_area: int = 16):
        self.min_area = int(min_area)

    def __call__(self, image: np.ndarray) -> list:
        gray = _as_gray_u8(image)
        _, mask = cv2.threshold(gray, 0, 255, cv2.THRESH_BINARY + cv2.THRESH_OTSU)
        n, _, stats, _ = cv2.connectedComponentsWithStats(mask, connectivity=8)
        out = []
        total = float(gray.size)
        for i in range(1, n):  # 0 is background
            x, y, w, h, area = (int(v) for v in stats[i])
            if area < self.min_area:
                continue
            out.append(
                {
                    "label": "vehicle",
                    "box": [float(x), float(y), float(x + w), float(y + h)],
                    "score": min(1.0, area / total * 10.0),
                }
            )
        out.sort(key=lambda d: (-d["score"], d["box"][1], d["box"][0]))
        return out


class StatsAestheticScorer:
    """Score in [0, 10] from global image statistics through a seeded MLP."""

    def __init__(self, seed: int = 3, checkpoint: str | None = None, device: str = "cpu"):
        torch.manual_seed(seed)
        self.net = nn.Sequential(nn.Linear(6, 16), nn.SiLU(), nn.Linear(16, 1)).to(device).eval()
        self.device = device
        self.identifier = f"stats-aesthetic/{_load_checkpoint(self.net, checkpoint, device)}"

    @torch.no_grad()
    def __call__(self, image: np.ndarray) -> float:
        gray = _as_gray_u8(image).astype(np.float32) / 255.0
        gy, gx = np.gradient(gray)
        stats = torch.tensor(
            [
                gray.mean(), gray.std(), float(np.abs(gx).mean()), float(np.abs(gy).mean()),
                float(np.percentile(gray, 5)), float(np.percentile(gray, 95)),
            ],
            dtype=torch.float32, device=self.device,
        )
        return float(torch.sigmoid(self.net(stats))[0] * 10.0)


_BACKENDS = {
    "features": {"conv": ConvFeatureExtractor},
    "flow": {"farneback": lambda **kw: FarnebackFlow()},
    "depth": {"conv": ConvDepthEstimator},
    "pose": {"heatmap": HeatmapPoseEstimator},
    "detections": {"blob": lambda min_area=16, **kw: BlobDetector(min_area)},
    "aesthetic": {"mlp": StatsAestheticScorer},
}

_DEFAULTS = {
    "features": "conv",
    "flow": "farneback",
    "depth": "conv",
    "pose": "heatmap",
    "detections": "blob",
    "aesthetic": "mlp",
}

_NEURAL = {"conv", "heatmap", "mlp"}


def build_backends(config: dict) -> dict:
    """Instantiate every enabled method's backend; any failure refuses startup."""
    device = config.get("device", "cpu")
    seed = int(config.get("seed", 0))
    if config.get("deterministic", True):
        torch.set_num_threads(1)
        torch.use_deterministic_algorithms(True)
    methods = config.get("methods", {})
    built = {}
    for index, (method, default) in enumerate(_DEFAULTS.items()):
        spec = dict(methods.get(method, {}))
        if not spec.pop("enabled", True):
            continue
        name = spec.pop("backend", default)
        factory = _BACKENDS[method].get(name)
        if factory is None:
            raise BackendError(f"no backend {name!r} for method {method!r}")
        if name in _NEURAL:
            spec.setdefault("device", device)
            spec.setdefault("seed", seed + index)
        try:
            built[method] = factory(**spec)
        except BackendError:
            raise
        except Exception as exc:  # noqa: BLE001
            raise BackendError(f"cannot build {method} backend {name!r}: {exc}") from exc
    return built
