"""Control-signal preparation: sparse feature-token maps with random masking,
identity embeddings, optical-flow token translation, and skeleton rasterization.
"""

from __future__ import annotations

import colorsys
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from gemkit.errors import ValidationError


@dataclass(frozen=True)
class FeatureMap:
    """Dense per-cell feature grid [d, h, w]; each cell covers patch_stride
    pixels per side of the source image."""

    grid: np.ndarray
    patch_stride: int = 16

    def __post_init__(self):
        g = np.asarray(self.grid, dtype=np.float64)
        if g.ndim != 3 or min(g.shape) < 1:
            raise ValidationError(f"feature grid must be [d, h, w] with positive extents, got {g.shape}")
        if self.patch_stride < 1:
            raise ValidationError("patch_stride must be >= 1")
        object.__setattr__(self, "grid", g)

    @property
    def dim(self) -> int:
        return self.grid.shape[0]

    @property
    def cells(self) -> tuple[int, int]:
        return self.grid.shape[1], self.grid.shape[2]


@dataclass(frozen=True)
class Token:
    """One control token: grid cell, feature vector, optional identity id."""

    y: int
    x: int
    vec: np.ndarray
    identity: Optional[int] = None


@dataclass(frozen=True)
class SparseTokenMap:
    """Mostly-empty token grid for one frame; at most one token per cell."""

    frame_index: int
    tokens: tuple
    height: int
    width: int
    dim: int
    patch_stride: int = 16

    def __post_init__(self):
        seen = set()
        for t in self.tokens:
            if not (0 <= t.y < self.height and 0 <= t.x < self.width):
                raise ValidationError(f"token cell ({t.y}, {t.x}) out of bounds")
            if (t.y, t.x) in seen:
                raise ValidationError(f"duplicate token cell ({t.y}, {t.x})")
            seen.add((t.y, t.x))
        object.__setattr__(self, "tokens", tuple(self.tokens))

    def to_dense(self) -> np.ndarray:
        """Zero-initialized [d, h, w] grid with token vectors inserted."""
        out = np.zeros((self.dim, self.height, self.width))
        for t in self.tokens:
            out[:, t.y, t.x] = t.vec
        return out


@dataclass(frozen=True)
class IdentityTable:
    """Fixed lookup of identity embeddings, one unit vector per id."""

    embeddings: np.ndarray

    def __post_init__(self):
        e = np.asarray(self.embeddings, dtype=np.float64)
        if e.ndim != 2:
            raise ValidationError("embeddings must be [L, d]")
        object.__setattr__(self, "embeddings", e)

    @property
    def size(self) -> int:
        return self.embeddings.shape[0]

    @classmethod
    def random(cls, size: int, dim: int, seed: int = 0) -> "IdentityTable":
        rng = np.random.default_rng(seed)
        e = rng.standard_normal((size, dim))
        e /= np.linalg.norm(e, axis=1, keepdims=True)
        return cls(e)


@dataclass(frozen=True)
class FlowField:
    """Per-pixel displacement field [2, H, W]: channel 0 = dx, channel 1 = dy,
    both in pixels."""

    grid: np.ndarray

    def __post_init__(self):
        g = np.asarray(self.grid, dtype=np.float64)
        if g.ndim != 3 or g.shape[0] != 2:
            raise ValidationError(f"flow must be [2, H, W], got {g.shape}")
        if g.size and not np.isfinite(g).all():
            raise ValidationError("flow contains non-finite values")
        object.__setattr__(self, "grid", g)

    @property
    def shape(self) -> tuple[int, int]:
        return self.grid.shape[1], self.grid.shape[2]


def mask_tokens(
    z: FeatureMap, max_tokens: int, rng: np.random.Generator, frame_index: int = 0
) -> SparseTokenMap:
    """Keep m ~ U{0..max_tokens} tokens at distinct uniformly chosen cells,
    zeroing the rest of the map."""
    h, w = z.cells
    if max_tokens > h * w:
        raise ValidationError(f"max_tokens={max_tokens} exceeds {h * w} cells")
    m = int(rng.integers(0, max_tokens + 1))
    cells = rng.choice(h * w, size=m, replace=False)
    cells.sort()
    tokens = tuple(
        Token(y=int(c // w), x=int(c % w), vec=z.grid[:, c // w, c % w].copy()) for c in cells
    )
    return SparseTokenMap(
        frame_index=frame_index, tokens=tokens, height=h, width=w, dim=z.dim, patch_stride=z.patch_stride
    )


def assign_identities(
    token_map: SparseTokenMap, table: IdentityTable, rng: np.random.Generator
) -> SparseTokenMap:
    """Give every token a distinct id (drawn without replacement) and add the
    id's embedding to the token vector."""
    n = len(token_map.tokens)
    if n > table.size:
        raise ValidationError(f"{n} tokens but identity table holds only {table.size}")
    if table.embeddings.shape[1] != token_map.dim:
        raise ValidationError("identity embedding dim does not match token dim")
    ids = rng.choice(table.size, size=n, replace=False)
    tokens = tuple(
        replace(t, vec=t.vec + table.embeddings[i], identity=int(i))
        for t, i in zip(token_map.tokens, ids)
    )
    return replace(token_map, tokens=tokens)


def translate_tokens(src: SparseTokenMap, flow: FlowField, target_frame: int) -> SparseTokenMap:
    """Move each token to the cell its patch center lands in under the mean
    flow over the patch. Out-of-bounds tokens are dropped; when two tokens land
    in one cell the one closest to the cell center wins, ties going to the
    lower source index. Vectors and ids are carried along unchanged."""
    ps = src.patch_stride
    if flow.shape != (src.height * ps, src.width * ps):
        raise ValidationError(
            f"flow resolution {flow.shape} != patch_stride x cells "
            f"({src.height * ps}, {src.width * ps})"
        )
    if target_frame <= src.frame_index:
        raise ValidationError("target_frame must be after the source frame")

    landed: dict[tuple[int, int], tuple[float, int, Token]] = {}
    for order, t in enumerate(src.tokens):
        patch = flow.grid[:, t.y * ps : (t.y + 1) * ps, t.x * ps : (t.x + 1) * ps]
        mean_dx = float(patch[0].mean())
        mean_dy = float(patch[1].mean())
        px = (t.x + 0.5) * ps + mean_dx
        py = (t.y + 0.5) * ps + mean_dy
        ncx = int(np.floor(px / ps))
        ncy = int(np.floor(py / ps))
        if not (0 <= ncx < src.width and 0 <= ncy < src.height):
            continue
        # squared offset of the landing point from the target cell's center
        off = (px / ps - (ncx + 0.5)) ** 2 + (py / ps - (ncy + 0.5)) ** 2
        key = (ncy, ncx)
        if key not in landed or off < landed[key][0]:
            landed[key] = (off, order, replace(t, y=ncy, x=ncx))
    tokens = tuple(tok for _, _, tok in sorted(landed.values(), key=lambda v: v[1]))
    return replace(src, frame_index=target_frame, tokens=tokens)


# COCO 17-keypoint limb list (0-based indices) and a fixed hue-wheel palette.
COCO_SKELETON = (
    (15, 13), (13, 11), (16, 14), (14, 12), (11, 12), (5, 11), (6, 12), (5, 6),
    (5, 7), (6, 8), (7, 9), (8, 10), (1, 2), (0, 1), (0, 2), (1, 3), (2, 4),
    (3, 5), (4, 6),
)
LIMB_COLORS = tuple(colorsys.hsv_to_rgb(k / len(COCO_SKELETON), 1.0, 1.0) for k in range(len(COCO_SKELETON)))
JOINT_COLORS = tuple(colorsys.hsv_to_rgb(k / 17, 1.0, 1.0) for k in range(17))

LIMB_RADIUS = 1.5  # 3 px wide strokes
JOINT_RADIUS = 3.0


def _paint_capsule(canvas: np.ndarray, p0, p1, radius: float, color) -> None:
    """Max-blend an anti-aliased capsule (segment with round caps) onto [3,H,W]."""
    h, w = canvas.shape[1:]
    x0, y0 = p0
    x1, y1 = p1
    lo_x = max(int(np.floor(min(x0, x1) - radius - 1)), 0)
    hi_x = min(int(np.ceil(max(x0, x1) + radius + 1)) + 1, w)
    lo_y = max(int(np.floor(min(y0, y1) - radius - 1)), 0)
    hi_y = min(int(np.ceil(max(y0, y1) + radius + 1)) + 1, h)
    if lo_x >= hi_x or lo_y >= hi_y:
        return
    ys, xs = np.mgrid[lo_y:hi_y, lo_x:hi_x]
    dx, dy = x1 - x0, y1 - y0
    seg_len2 = dx * dx + dy * dy
    if seg_len2 == 0:
        dist = np.hypot(xs - x0, ys - y0)
    else:
        u = np.clip(((xs - x0) * dx + (ys - y0) * dy) / seg_len2, 0.0, 1.0)
        dist = np.hypot(xs - (x0 + u * dx), ys - (y0 + u * dy))
    cov = np.clip(radius + 0.5 - dist, 0.0, 1.0)
    for c in range(3):
        region = canvas[c, lo_y:hi_y, lo_x:hi_x]
        np.maximum(region, cov * color[c], out=region)


def rasterize_skeleton(
    people: Sequence[np.ndarray], canvas_hw: tuple[int, int], min_visibility: int = 2
) -> np.ndarray:
    """Draw COCO skeletons on an empty [3, H, W] plane.

    Each person is a [17, 3] array of (x, y, visibility) in pixels. Limbs are
    anti-aliased 3 px strokes with fixed per-limb colors, joints radius-3
    disks; keypoints below min_visibility are skipped and everything is
    clipped to the canvas. Max blending makes the result independent of
    person order."""
    h, w = canvas_hw
    canvas = np.zeros((3, h, w))
    for person in people:
        kps = np.asarray(person, dtype=np.float64)
        if kps.shape != (17, 3):
            raise ValidationError(f"each person must be [17, 3] (x, y, v), got {kps.shape}")
        vis = kps[:, 2] >= min_visibility
        for limb, (a, b) in enumerate(COCO_SKELETON):
            if vis[a] and vis[b]:
                _paint_capsule(canvas, kps[a, :2], kps[b, :2], LIMB_RADIUS, LIMB_COLORS[limb])
        for j in range(17):
            if vis[j]:
                _paint_capsule(canvas, kps[j, :2], kps[j, :2], JOINT_RADIUS, JOINT_COLORS[j])
    return canvas
