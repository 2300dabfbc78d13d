"""Per-frame-sigma Euler denoising and the autoregressive sampling loop.

The loop advances a scheduling row at a time: one denoiser call per row over
the active window. Frames enter staggered (initialization), then each stride
rows a clean frame leaves, becomes the new reference, and a fresh max-noise
frame is appended (autoregressive), until no frames remain to append and the
window drains (termination). An overlap-window baseline sampler is included
for A/B comparisons.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Protocol, Sequence

import numpy as np

from gemkit.errors import ProviderError, ValidationError
from gemkit.gemt import VideoLatent
from gemkit.schedule import NoiseSchedule, ScheduleConfig, total_forward_passes


@dataclass(frozen=True)
class ConditioningSet:
    """Optional control signals; any subset may be absent."""

    reference_frame: Optional[np.ndarray] = None
    trajectory: Optional[np.ndarray] = None
    token_maps: Optional[Sequence] = None
    pose_canvases: Optional[Sequence[np.ndarray]] = None


@dataclass(frozen=True)
class WindowConditioning:
    """What the denoiser sees for one call: the global conditioning restricted
    to the active window, plus the window's first global frame index."""

    reference_frame: Optional[np.ndarray] = None
    trajectory: Optional[np.ndarray] = None
    token_maps: Optional[Sequence] = None
    pose_canvases: Optional[Sequence[np.ndarray]] = None
    frame_offset: int = 0


class DenoiserProvider(Protocol):
    """Predicts the clean window from a noisy one.

    Must be a pure function of its arguments (same inputs, same output) and
    preserve the input shape.
    """

    def denoise(self, frames: np.ndarray, sigmas: np.ndarray, cond: WindowConditioning) -> np.ndarray:
        ...


@dataclass(frozen=True)
class PerfectDenoiser:
    """Analytic oracle: always returns the target frames for the window."""

    target: np.ndarray

    def denoise(self, frames, sigmas, cond):
        lo = cond.frame_offset
        return self.target[lo : lo + frames.shape[0]]


@dataclass(frozen=True)
class ContractionDenoiser:
    """Pulls the window toward the target by a factor lam per call."""

    target: np.ndarray
    lam: float = 0.5

    def denoise(self, frames, sigmas, cond):
        lo = cond.frame_offset
        return self.lam * self.target[lo : lo + frames.shape[0]] + (1.0 - self.lam) * frames


class ZeroDenoiser:
    """Predicts all-zero clean frames; handy for step-algebra tests."""

    def denoise(self, frames, sigmas, cond):
        return np.zeros_like(frames)


@dataclass
class SamplerTrace:
    """Accounting emitted by autoregressive_sample.

    forward_passes always equals rows_executed: one denoiser call per row.
    row_sigmas (kept when record_rows=True) holds (window_offset, sigma
    vector) per executed row, for causality checks.
    """

    rows_executed: int = 0
    forward_passes: int = 0
    completion_row: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    init_end_row: int = 0
    autoregressive_end_row: int = 0
    emitted_order: list = field(default_factory=list)
    row_sigmas: list = field(default_factory=list)


def _call_denoiser(denoiser, frames, sigmas, cond, row=None):
    fn = getattr(denoiser, "denoise", denoiser)
    try:
        out = np.asarray(fn(frames, sigmas, cond))
    except Exception as exc:
        where = "" if row is None else f" at row {row}"
        raise ProviderError(f"denoiser failed{where}: {exc}") from exc
    if out.shape != frames.shape:
        raise ValidationError(f"denoiser output shape {out.shape} != input {frames.shape}")
    return out


def euler_step(
    frames: np.ndarray,
    sigma_cur: np.ndarray,
    sigma_next: np.ndarray,
    denoiser: DenoiserProvider,
    cond: Optional[WindowConditioning] = None,
    _row: Optional[int] = None,
) -> np.ndarray:
    """One probability-flow Euler step with per-frame noise levels.

    x'_t = x_t + (sigma_next - sigma_cur) * (x_t - D(x, sigma_cur)_t) / sigma_cur
    for frames with sigma_cur > 0; frames at 0 pass through unchanged.
    """
    frames = np.asarray(frames, dtype=np.float64)
    sigma_cur = np.asarray(sigma_cur, dtype=np.float64)
    sigma_next = np.asarray(sigma_next, dtype=np.float64)
    n = frames.shape[0]
    if sigma_cur.shape != (n,) or sigma_next.shape != (n,):
        raise ValidationError(f"sigma vectors must have shape ({n},)")
    if np.any(sigma_next > sigma_cur):
        raise ValidationError("sigma_next must be <= sigma_cur per frame")
    if cond is None:
        cond = WindowConditioning()

    denoised = _call_denoiser(denoiser, frames, sigma_cur, cond, row=_row)
    out = frames.copy()
    active = sigma_cur > 0
    if np.any(active):
        coef = (sigma_next[active] - sigma_cur[active]) / sigma_cur[active]
        coef = coef.reshape((-1,) + (1,) * (frames.ndim - 1))
        out[active] = frames[active] + coef * (frames[active] - denoised[active])
    return out


def _window_cond(cond: ConditioningSet, reference, lo: int, hi: int) -> WindowConditioning:
    tokens = cond.token_maps[lo:hi] if cond.token_maps is not None else None
    poses = cond.pose_canvases[lo:hi] if cond.pose_canvases is not None else None
    return WindowConditioning(
        reference_frame=reference,
        trajectory=cond.trajectory,
        token_maps=tokens,
        pose_canvases=poses,
        frame_offset=lo,
    )


def autoregressive_sample(
    total_frames: int,
    cfg: ScheduleConfig,
    ns: NoiseSchedule,
    denoiser: DenoiserProvider,
    cond: Optional[ConditioningSet] = None,
    rng: Optional[np.random.Generator] = None,
    latent_shape: tuple = (4, 8, 8),
    kind: str = "rgb-latent",
    record_rows: bool = False,
) -> tuple[VideoLatent, SamplerTrace]:
    """Generate ``total_frames`` frames with the dynamic per-frame schedule.

    Returns the emitted frames (exactly those whose sigma reached 0, in frame
    order) and a trace whose forward-pass count equals
    total_forward_passes(total_frames, cfg).
    """
    if cond is None:
        cond = ConditioningSet()
    if rng is None:
        rng = np.random.default_rng(0)
    W, s, T = cfg.window, cfg.stride, cfg.steps
    if total_frames < W:
        raise ValidationError(f"need at least window={W} frames, got {total_frames}")
    if ns.steps != T:
        raise ValidationError(f"schedule has {ns.steps} steps, config expects {T}")
    sig = ns.sigmas
    sigma_max = sig[0]

    x = np.zeros((total_frames,) + tuple(latent_shape), dtype=np.float64)
    for i in range(W):
        x[i] = sigma_max * rng.standard_normal(latent_shape)
    appended = W
    completed = 0
    reference = None if cond.reference_frame is None else np.asarray(cond.reference_frame)

    total_rows = total_forward_passes(total_frames, cfg)
    trace = SamplerTrace(
        completion_row=np.full(total_frames, -1, dtype=int),
        init_end_row=T,
        autoregressive_end_row=T + (total_frames - W) * s,
    )

    for r in range(total_rows):
        lo, hi = completed, appended
        idx = np.arange(lo, hi)
        sigma_cur = sig[np.clip(r - idx * s, 0, T)]
        sigma_next = sig[np.clip(r + 1 - idx * s, 0, T)]
        wcond = _window_cond(cond, reference, lo, hi)
        x[lo:hi] = euler_step(x[lo:hi], sigma_cur, sigma_next, denoiser, wcond, _row=r)
        trace.forward_passes += 1
        if record_rows:
            trace.row_sigmas.append((lo, sigma_cur.copy()))
        # frame `completed` is clean once row r+1 puts it at index T
        while completed < total_frames and r + 1 >= T + completed * s:
            trace.completion_row[completed] = r + 1
            trace.emitted_order.append(completed)
            reference = x[completed].copy()
            completed += 1
            if appended < total_frames:
                x[appended] = sigma_max * rng.standard_normal(latent_shape)
                appended += 1

    trace.rows_executed = total_rows
    if completed != total_frames:
        raise RuntimeError(f"sampler ended with {completed}/{total_frames} frames complete")
    return VideoLatent(x, kind=kind), trace


def overlap_sample(
    total_frames: int,
    window: int,
    overlap: int,
    ns: NoiseSchedule,
    denoiser: DenoiserProvider,
    cond: Optional[ConditioningSet] = None,
    rng: Optional[np.random.Generator] = None,
    latent_shape: tuple = (4, 8, 8),
    kind: str = "rgb-latent",
) -> VideoLatent:
    """Chained-window baseline: each chunk is denoised jointly through the full
    schedule; the last ``overlap`` frames seed the next chunk (held clean) and
    the newest clean frame becomes the reference."""
    if cond is None:
        cond = ConditioningSet()
    if rng is None:
        rng = np.random.default_rng(0)
    if not (0 <= overlap < window):
        raise ValidationError(f"need 0 <= overlap < window, got overlap={overlap}, window={window}")
    fresh = window - overlap
    if total_frames < window or (total_frames - window) % fresh:
        raise ValidationError(
            f"{total_frames} frames unreachable with window={window}, overlap={overlap}"
        )
    n_chunks = 1 + (total_frames - window) // fresh
    sig = ns.sigmas
    T = ns.steps
    sigma_max = sig[0]

    x = np.zeros((total_frames,) + tuple(latent_shape), dtype=np.float64)
    reference = None if cond.reference_frame is None else np.asarray(cond.reference_frame)

    for c in range(n_chunks):
        start = c * fresh
        n_clean = 0 if c == 0 else overlap
        for i in range(start + n_clean, start + window):
            x[i] = sigma_max * rng.standard_normal(latent_shape)
        if c > 0 and n_clean:
            reference = x[start + n_clean - 1].copy()
        clean_mask = np.arange(window) < n_clean
        for j in range(T):
            sigma_cur = np.where(clean_mask, 0.0, sig[j])
            sigma_next = np.where(clean_mask, 0.0, sig[j + 1])
            wcond = _window_cond(cond, reference, start, start + window)
            x[start : start + window] = euler_step(
                x[start : start + window], sigma_cur, sigma_next, denoiser, wcond
            )
    return VideoLatent(x, kind=kind)
