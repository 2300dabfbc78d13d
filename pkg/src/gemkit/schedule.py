"""Noise schedules, the per-frame scheduling matrix, training-time noise draws,
and forward-pass accounting for the autoregressive sampler.

The scheduling matrix stacks frames along columns and denoising rows along the
other axis; at row ``m`` the frame ``t`` of the active window sits at schedule
index ``clamp(m - t*stride, 0, steps)``. Later frames are therefore always at
least as noisy as earlier ones (the staircase), and advancing one row moves
each started frame exactly one schedule index.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from gemkit.errors import ValidationError


def karras_sigmas(steps: int, sigma_min: float = 0.002, sigma_max: float = 700.0, rho: float = 7.0) -> np.ndarray:
    """Rho-spaced noise levels from sigma_max down to sigma_min, then an exact 0.

    Returns ``steps + 1`` values so index ``steps`` is the fully denoised level.
    """
    if steps < 1:
        raise ValidationError("steps must be >= 1")
    if not (0 < sigma_min < sigma_max):
        raise ValidationError("need 0 < sigma_min < sigma_max")
    if steps == 1:
        ramp = np.array([sigma_max])
    else:
        t = np.linspace(0.0, 1.0, steps)
        inv_rho = 1.0 / rho
        ramp = (sigma_max**inv_rho + t * (sigma_min**inv_rho - sigma_max**inv_rho)) ** rho
        ramp[0], ramp[-1] = sigma_max, sigma_min  # pin endpoints against rho round-off
    return np.concatenate([ramp, [0.0]])


@dataclass(frozen=True)
class NoiseSchedule:
    """Strictly decreasing noise levels sigma_0 > ... > sigma_T = 0."""

    sigmas: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.sigmas, dtype=np.float64)
        if s.ndim != 1 or s.size < 2:
            raise ValidationError("schedule needs at least [sigma_0, 0]")
        if not np.all(np.diff(s) < 0):
            raise ValidationError("sigmas must be strictly decreasing")
        if s[-1] != 0.0:
            raise ValidationError("last sigma must be exactly 0")
        object.__setattr__(self, "sigmas", s)

    @property
    def steps(self) -> int:
        return self.sigmas.size - 1

    @classmethod
    def karras(cls, steps: int, sigma_min: float = 0.002, sigma_max: float = 700.0, rho: float = 7.0) -> "NoiseSchedule":
        return cls(karras_sigmas(steps, sigma_min, sigma_max, rho))


@dataclass(frozen=True)
class ScheduleConfig:
    """Window geometry: ``window`` frames in flight, ``stride`` schedule indices
    between adjacent frames, ``steps`` denoise indices per frame.

    ``stride=None`` derives steps/window when that is integral.
    """

    window: int
    steps: int
    stride: Optional[int] = None

    def __post_init__(self):
        if self.window < 1 or self.steps < 1:
            raise ValidationError("window and steps must be >= 1")
        stride = self.stride
        if stride is None:
            if self.steps % self.window:
                raise ValidationError(
                    f"steps={self.steps} not divisible by window={self.window}; pass stride explicitly"
                )
            stride = self.steps // self.window
        if stride < 1:
            raise ValidationError("stride must be >= 1")
        if (self.window - 1) * stride > self.steps:
            raise ValidationError(
                f"window*stride too wide for steps: ({self.window}-1)*{stride} > {self.steps}"
            )
        object.__setattr__(self, "stride", stride)


def schedule_row(m: int, cfg: ScheduleConfig, ns: NoiseSchedule) -> np.ndarray:
    """Per-frame noise levels of the active window at row ``m``.

    Frame t of the window sits at index clamp(m - t*stride, 0, steps); index 0
    is pure noise, index ``steps`` fully clean.
    """
    if m < 0:
        raise ValidationError("row index must be >= 0")
    if ns.steps != cfg.steps:
        raise ValidationError(f"schedule has {ns.steps} steps, config expects {cfg.steps}")
    t = np.arange(cfg.window)
    idx = np.clip(m - t * cfg.stride, 0, cfg.steps)
    return ns.sigmas[idx]


def total_forward_passes(total_frames: int, cfg: ScheduleConfig) -> int:
    """Denoiser calls needed to fully denoise ``total_frames`` frames.

    One call per row advance: steps rows of initialization, stride rows per
    autoregressive frame, (window-1)*stride rows of termination, i.e.
    steps + (total_frames - 1) * stride.
    """
    if total_frames < cfg.window:
        raise ValidationError(f"need at least window={cfg.window} frames, got {total_frames}")
    return cfg.steps + (total_frames - 1) * cfg.stride


def scheduling_matrix(total_frames: int, cfg: ScheduleConfig, ns: NoiseSchedule) -> np.ndarray:
    """Full (rows x frames) noise-level table for a ``total_frames`` generation.

    Row r, frame i holds sigma at index clamp(r - i*stride, 0, steps). The last
    row is all zeros; rows count total_forward_passes(total_frames) + 1.
    """
    rows = total_forward_passes(total_frames, cfg) + 1
    r = np.arange(rows)[:, None]
    i = np.arange(total_frames)[None, :]
    idx = np.clip(r - i * cfg.stride, 0, cfg.steps)
    return ns.sigmas[idx]


class SigmaTimeMap:
    """Invertible log-linear map between noise level and denoising time.

    Time runs with denoising progress: t=0 at sigma_max (pure noise), t=1 at
    sigma_min. This orientation makes the per-frame training times
    ``t_intercept - (i/(N-1) - t_shift)`` decrease along the frame axis while
    the noise level increases, which is the whole point of the training
    schedule. Out-of-range inputs are clamped; query ``sigma_clamp_mask`` /
    ``time_clamp_mask`` for flags.
    """

    def __init__(self, sigma_min: float = 0.002, sigma_max: float = 700.0):
        if not (0 < sigma_min < sigma_max):
            raise ValidationError("need 0 < sigma_min < sigma_max")
        self.sigma_min = float(sigma_min)
        self.sigma_max = float(sigma_max)
        self._log_span = np.log(sigma_max) - np.log(sigma_min)

    def sigma_to_time(self, sigma):
        s = np.clip(np.asarray(sigma, dtype=np.float64), self.sigma_min, self.sigma_max)
        t = (np.log(self.sigma_max) - np.log(s)) / self._log_span
        return float(t) if np.isscalar(sigma) else t

    def time_to_sigma(self, t):
        tt = np.clip(np.asarray(t, dtype=np.float64), 0.0, 1.0)
        s = np.exp(np.log(self.sigma_max) - tt * self._log_span)
        return float(s) if np.isscalar(t) else s

    def sigma_clamp_mask(self, sigma) -> np.ndarray:
        s = np.asarray(sigma, dtype=np.float64)
        return (s < self.sigma_min) | (s > self.sigma_max)

    def time_clamp_mask(self, t) -> np.ndarray:
        tt = np.asarray(t, dtype=np.float64)
        return (tt < 0.0) | (tt > 1.0)


@dataclass(frozen=True)
class TrainingNoiseConfig:
    """Parameters of the per-frame training noise draw.

    log(sigma) ~ Normal(p_mean, p_std) anchors the window; t_shift ~
    Beta(alpha, beta) (favoring small shifts) slides it; frames are spaced
    1/(num_frames-1) apart in time. ``jitter_std=None`` means the default
    0.5/(num_frames-1); jitter is clamped to half the spacing so frame
    ordering of noise can never invert.
    """

    num_frames: int
    p_mean: float = 0.7
    p_std: float = 1.6
    alpha: float = 2.0
    beta: float = 5.0
    jitter_std: Optional[float] = None

    def __post_init__(self):
        if self.num_frames < 2:
            raise ValidationError("num_frames must be >= 2")
        if self.p_std <= 0 or self.alpha <= 0 or self.beta <= 0:
            raise ValidationError("p_std, alpha, beta must be > 0")
        if self.jitter_std is None:
            object.__setattr__(self, "jitter_std", 0.5 / (self.num_frames - 1))
        elif self.jitter_std < 0:
            raise ValidationError("jitter_std must be >= 0")


@dataclass(frozen=True)
class TrainingSigmaDraw:
    """One training-schedule draw: per-frame sigmas plus the raw intermediates."""

    sigmas: np.ndarray
    times: np.ndarray
    sigma_intercept: float
    t_intercept: float
    t_shift: float
    clamped: np.ndarray = field(repr=False)
    intercept_clamped: bool = False


def training_frame_sigmas(
    cfg: TrainingNoiseConfig, mapping: SigmaTimeMap, rng: np.random.Generator
) -> TrainingSigmaDraw:
    """Draw per-frame noise levels for one training sample.

    Frame i gets time t_intercept - (i/(N-1) - t_shift) plus clamped jitter,
    clipped to [0, 1], then mapped back to sigma. Absent jitter and clamping
    the times fall by exactly 1/(N-1) per frame, so noise strictly increases
    over the frame axis.
    """
    n = cfg.num_frames
    sigma_intercept = float(np.exp(rng.normal(cfg.p_mean, cfg.p_std)))
    intercept_clamped = bool(mapping.sigma_clamp_mask(sigma_intercept))
    t_intercept = mapping.sigma_to_time(sigma_intercept)
    t_shift = float(rng.beta(cfg.alpha, cfg.beta))

    i = np.arange(n, dtype=np.float64)
    times = t_intercept - (i / (n - 1) - t_shift)
    if cfg.jitter_std > 0:
        half_gap = 0.5 / (n - 1)
        jitter = np.clip(rng.normal(0.0, cfg.jitter_std, size=n), -half_gap, half_gap)
        times = times + jitter
    # overhang below float fuzz is numerically zero, not a real clamp
    clamped = (times < -1e-12) | (times > 1.0 + 1e-12)
    times = np.clip(times, 0.0, 1.0)
    sigmas = mapping.time_to_sigma(times)
    return TrainingSigmaDraw(
        sigmas=sigmas,
        times=times,
        sigma_intercept=sigma_intercept,
        t_intercept=float(t_intercept),
        t_shift=t_shift,
        clamped=clamped,
        intercept_clamped=intercept_clamped,
    )
