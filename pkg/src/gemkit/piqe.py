"""Block-based no-reference perceptual quality score, higher = worse.

The image is normalized to MSCN coefficients (local mean/variance
normalization with a 7x7 Gaussian window, sigma 7/6), split into 16x16
blocks, and each spatially active block is checked for noticeable artifacts
(low-variance segments along block edges) and Gaussian noise (center vs
surround deviation). The score pools distorted-block scores as
100 * (sum + 1) / (n_active + 1), so a flat image with no active blocks
lands on the 100 sentinel (flagged ``no_activity``) and everything stays
within [0, 100].
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter

from gemkit.errors import ValidationError

BLOCK_SIZE = 16
ACTIVITY_THRESHOLD = 0.1
SEGMENT_STD_THRESHOLD = 0.1
SEGMENT_LENGTH = 6


@dataclass(frozen=True)
class PiqeResult:
    score: float
    n_blocks: int
    n_active: int
    n_artifact: int
    n_noise: int

    @property
    def no_activity(self) -> bool:
        return self.n_active == 0


def mscn_coefficients(image: np.ndarray) -> np.ndarray:
    """Mean-subtracted contrast-normalized coefficients on the 0..255 scale."""
    img = np.asarray(image, dtype=np.float64) * 255.0
    mu = gaussian_filter(img, sigma=7.0 / 6.0, mode="nearest", radius=3)
    var = gaussian_filter(img * img, sigma=7.0 / 6.0, mode="nearest", radius=3) - mu * mu
    sigma = np.sqrt(np.abs(var))
    return (img - mu) / (sigma + 1.0)


def _edge_segments_impaired(block: np.ndarray, seg_len: int, threshold: float) -> bool:
    """True if any sliding segment along the four block edges is near-constant."""
    n = block.shape[0]
    edges = (block[0, :], block[:, -1], block[-1, :], block[:, 0])
    for edge in edges:
        windows = np.lib.stride_tricks.sliding_window_view(edge, seg_len)[: n - seg_len + 1]
        if np.any(windows.std(axis=1, ddof=1) < threshold):
            return True
    return False


def _center_surround_deviation(block: np.ndarray) -> float:
    n = block.shape[1]
    c = (n + 1) // 2  # 1-based center column pair
    center = np.concatenate([block[:, c - 1], block[:, c]])
    surround = np.delete(block, [c - 1, c], axis=1)
    s_c = center.std(ddof=1)
    s_s = surround.std(ddof=1)
    if s_s == 0:
        return 0.0
    ratio = s_c / s_s
    return 0.0 if np.isnan(ratio) else float(ratio)


def piqe_score(
    image: np.ndarray,
    block_size: int = BLOCK_SIZE,
    activity_threshold: float = ACTIVITY_THRESHOLD,
    segment_std_threshold: float = SEGMENT_STD_THRESHOLD,
    segment_length: int = SEGMENT_LENGTH,
) -> PiqeResult:
    """Score a [H, W] luminance image with values in [0, 1].

    Per active block: artifact weight times (1 - v) plus noise weight times v,
    with v the block's MSCN variance clipped to [0, 1] so the pooled score
    stays in [0, 100].
    """
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 2:
        raise ValidationError(f"expected a 2-D luminance image, got shape {img.shape}")
    h, w = img.shape
    if h < block_size or w < block_size:
        raise ValidationError(f"image {img.shape} smaller than one {block_size}x{block_size} block")

    pad_h = (-h) % block_size
    pad_w = (-w) % block_size
    if pad_h or pad_w:
        img = np.pad(img, ((0, pad_h), (0, pad_w)), mode="symmetric")

    mscn = mscn_coefficients(img)

    n_active = n_artifact = n_noise = 0
    dist_sum = 0.0
    rows, cols = mscn.shape[0] // block_size, mscn.shape[1] // block_size
    for bi in range(rows):
        for bj in range(cols):
            block = mscn[
                bi * block_size : (bi + 1) * block_size, bj * block_size : (bj + 1) * block_size
            ]
            block_var = block.var(ddof=1)
            if block_var < activity_threshold:
                continue
            n_active += 1
            impaired = _edge_segments_impaired(block, segment_length, segment_std_threshold)
            block_sigma = np.sqrt(block_var)
            csd = _center_surround_deviation(block)
            denom = max(block_sigma, csd)
            beta = abs(block_sigma - csd) / denom if denom > 0 else 0.0
            noisy = block_sigma > 2.0 * beta
            if impaired:
                n_artifact += 1
            if noisy:
                n_noise += 1
            v = min(block_var, 1.0)
            dist_sum += (1.0 - v) * impaired + v * noisy

    score = 100.0 * (dist_sum + 1.0) / (n_active + 1.0)
    return PiqeResult(
        score=float(score),
        n_blocks=rows * cols,
        n_active=n_active,
        n_artifact=n_artifact,
        n_noise=n_noise,
    )
