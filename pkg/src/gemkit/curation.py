"""Clip segmentation and the quality/diversity filter cascade.

Stage order is fixed: aesthetic -> distortion (PIQE) -> intra-clip diversity
-> motion -> cross-clip similarity. Retention percentages are cumulative,
starting from 100% of the scored clips; clips a provider failed to score are
excluded from the cascade and counted separately.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from gemkit.control import FeatureMap, FlowField
from gemkit.errors import ValidationError
from gemkit.piqe import piqe_score

CLIP_SECONDS = 2.5
STAGES = ("aesthetic", "piqe", "intra_diversity", "motion", "cross_similarity")


@dataclass
class ClipRecord:
    """One 2.5-second clip with its per-filter scores and verdicts."""

    video_id: str
    start_frame: int
    end_frame: int
    fps: float
    scores: dict = field(default_factory=dict)
    verdicts: dict = field(default_factory=dict)
    middle_vector: Optional[np.ndarray] = None
    unscored: bool = False


@dataclass(frozen=True)
class FilterConfig:
    """Keep rules: aesthetic > aesthetic_min, piqe < piqe_max, diversity >
    intra_min, motion > motion_min, cross similarity < cross_max.

    motion_frames picks the flow request pattern: "endpoints" scores the
    (first, last) pair, "adjacent" averages over consecutive frame pairs."""

    aesthetic_min: float = 4.0
    piqe_max: float = 70.0
    intra_min: float = 0.02
    motion_min: float = 0.02
    cross_max: float = 0.90
    intra_tau: float = 0.5
    motion_frames: str = "endpoints"
    enable_aesthetic: bool = True
    enable_piqe: bool = True
    enable_intra: bool = True
    enable_motion: bool = True
    enable_cross: bool = True

    def __post_init__(self):
        for name in ("aesthetic_min", "piqe_max", "intra_min", "motion_min", "cross_max", "intra_tau"):
            if not np.isfinite(getattr(self, name)):
                raise ValidationError(f"{name} must be finite")
        if self.motion_frames not in ("endpoints", "adjacent"):
            raise ValidationError(f"motion_frames must be endpoints or adjacent, got {self.motion_frames!r}")


@dataclass(frozen=True)
class StageReport:
    name: str
    enabled: bool
    threshold: float
    kept: int
    dropped: int
    percent: float


@dataclass
class CurationReport:
    total: int
    unscored: int
    stages: list
    kept: list
    dropped: list

    def to_dict(self) -> dict:
        return {
            "total": self.total,
            "unscored": self.unscored,
            "stages": [
                {
                    "name": s.name,
                    "enabled": s.enabled,
                    "threshold": s.threshold,
                    "kept": s.kept,
                    "dropped": s.dropped,
                    "percent": s.percent,
                }
                for s in self.stages
            ],
            "kept": [
                {"video_id": r.video_id, "start_frame": r.start_frame, "end_frame": r.end_frame}
                for r in self.kept
            ],
            "dropped": [
                {
                    "video_id": r.video_id,
                    "start_frame": r.start_frame,
                    "end_frame": r.end_frame,
                    "stage": stage,
                }
                for r, stage in self.dropped
            ],
        }


def segment_clips(total_frames: int, fps: float, video_id: str = "") -> list[ClipRecord]:
    """Non-overlapping spans of round(2.5 * fps) frames; the trailing remainder
    is dropped."""
    if fps <= 0:
        raise ValidationError("fps must be > 0")
    span = int(round(CLIP_SECONDS * fps))
    if span < 1:
        return []
    count = total_frames // span
    return [
        ClipRecord(video_id=video_id, start_frame=i * span, end_frame=(i + 1) * span, fps=fps)
        for i in range(count)
    ]


def intra_clip_diversity(z_first: FeatureMap, z_last: FeatureMap, tau: float = 0.5) -> float:
    """Fraction of grid cells whose first/last feature vectors have cosine
    similarity below tau. Zero vectors count as similarity 0."""
    a, b = z_first.grid, z_last.grid
    if a.shape != b.shape:
        raise ValidationError(f"feature shape mismatch: {a.shape} vs {b.shape}")
    na = np.linalg.norm(a, axis=0)
    nb = np.linalg.norm(b, axis=0)
    dot = (a * b).sum(axis=0)
    denom = na * nb
    cos = np.divide(dot, denom, out=np.zeros_like(dot), where=denom > 0)
    return float((cos < tau).mean())


def motion_score(flow: FlowField) -> float:
    """Mean flow magnitude over pixels, normalized by the image diagonal."""
    mag = np.hypot(flow.grid[0], flow.grid[1])
    h, w = flow.shape
    return float(mag.mean() / np.hypot(h, w))


def cross_clip_filter(middle_vectors: Sequence[np.ndarray], tau: float) -> list[int]:
    """Greedy scan in clip order: keep clip i iff its cosine similarity to every
    already-kept clip is < tau. Returns kept indices."""
    kept: list[int] = []
    kept_vecs: list[np.ndarray] = []
    for i, v in enumerate(middle_vectors):
        vv = np.asarray(v, dtype=np.float64)
        n = np.linalg.norm(vv)
        vv = vv / n if n > 0 else vv
        if all(float(vv @ kv) < tau for kv in kept_vecs):
            kept.append(i)
            kept_vecs.append(vv)
    return kept


def _to_luma(frame: np.ndarray) -> np.ndarray:
    if frame.ndim == 2:
        return frame
    if frame.ndim == 3 and frame.shape[0] == 3:
        return 0.299 * frame[0] + 0.587 * frame[1] + 0.114 * frame[2]
    if frame.ndim == 3 and frame.shape[0] == 1:
        return frame[0]
    raise ValidationError(f"cannot interpret frame of shape {frame.shape} as an image")


def _pooled_unit_vector(z: FeatureMap) -> np.ndarray:
    v = z.grid.mean(axis=(1, 2))
    n = np.linalg.norm(v)
    return v / n if n > 0 else v


def score_clips(clips: Sequence[ClipRecord], frames: np.ndarray, providers, cfg: FilterConfig) -> None:
    """Fill each clip's scores in place from one video's frame stack [N, ...].

    Aesthetic and distortion are scored on the middle frame, diversity and
    motion on the (first, last) pair, and the middle frame's pooled feature
    vector is kept for the cross-clip pass. A provider failure marks the clip
    unscored instead of aborting the run.
    """
    for clip in clips:
        first = frames[clip.start_frame]
        last = frames[clip.end_frame - 1]
        middle = frames[clip.start_frame + (clip.end_frame - clip.start_frame) // 2]
        try:
            clip.scores["aesthetic"] = float(providers.aesthetic(middle))
            clip.scores["piqe"] = piqe_score(np.clip(_to_luma(middle), 0.0, 1.0)).score
            z_first = providers.features(first)
            z_last = providers.features(last)
            clip.scores["intra_diversity"] = intra_clip_diversity(z_first, z_last, cfg.intra_tau)
            if cfg.motion_frames == "adjacent":
                clip.scores["motion"] = float(
                    np.mean(
                        [
                            motion_score(providers.flow(frames[i], frames[i + 1]))
                            for i in range(clip.start_frame, clip.end_frame - 1)
                        ]
                    )
                )
            else:
                clip.scores["motion"] = motion_score(providers.flow(first, last))
            clip.middle_vector = _pooled_unit_vector(providers.features(middle))
        except ValidationError:
            raise
        except Exception as exc:  # noqa: BLE001 - a provider fault isolates the clip
            clip.unscored = True
            clip.verdicts["error"] = str(exc)


def apply_filters(records: Sequence[ClipRecord], cfg: FilterConfig) -> CurationReport:
    """Run the cascade over already-scored clips and build the retention report."""
    scored = [r for r in records if not r.unscored]
    total = len(scored)
    unscored = len(records) - total
    stages: list[StageReport] = []
    dropped: list[tuple[ClipRecord, str]] = []
    survivors = list(scored)

    def pct(n: int) -> float:
        return 100.0 if total == 0 else 100.0 * n / total

    scalar_rules = [
        ("aesthetic", cfg.enable_aesthetic, cfg.aesthetic_min, lambda r: r.scores["aesthetic"] > cfg.aesthetic_min),
        ("piqe", cfg.enable_piqe, cfg.piqe_max, lambda r: r.scores["piqe"] < cfg.piqe_max),
        ("intra_diversity", cfg.enable_intra, cfg.intra_min, lambda r: r.scores["intra_diversity"] > cfg.intra_min),
        ("motion", cfg.enable_motion, cfg.motion_min, lambda r: r.scores["motion"] > cfg.motion_min),
    ]
    for name, enabled, threshold, rule in scalar_rules:
        before = len(survivors)
        if enabled:
            keep = []
            for r in survivors:
                ok = bool(rule(r))
                r.verdicts[name] = ok
                if ok:
                    keep.append(r)
                else:
                    dropped.append((r, name))
            survivors = keep
        stages.append(
            StageReport(name, enabled, threshold, len(survivors), before - len(survivors), pct(len(survivors)))
        )

    before = len(survivors)
    if cfg.enable_cross:
        keep = []
        by_video: dict[str, list[np.ndarray]] = {}
        for r in survivors:
            vecs = by_video.setdefault(r.video_id, [])
            v = r.middle_vector if r.middle_vector is not None else np.zeros(1)
            n = np.linalg.norm(v)
            v = v / n if n > 0 else v
            sim = max((float(v @ kv) for kv in vecs), default=0.0)
            r.scores["cross_similarity"] = sim
            ok = sim < cfg.cross_max
            r.verdicts["cross_similarity"] = ok
            if ok:
                vecs.append(v)
                keep.append(r)
            else:
                dropped.append((r, "cross_similarity"))
        survivors = keep
    stages.append(
        StageReport(
            "cross_similarity", cfg.enable_cross, cfg.cross_max, len(survivors),
            before - len(survivors), pct(len(survivors)),
        )
    )
    return CurationReport(total=total, unscored=unscored, stages=stages, kept=survivors, dropped=dropped)


def run_pipeline(
    manifest: Sequence[dict],
    providers,
    cfg: FilterConfig,
    load_video: Callable[[str], np.ndarray],
) -> CurationReport:
    """Segment, score and filter every video in the manifest.

    Manifest entries need video_id, path and fps; frames come back from
    ``load_video(path)`` as an [N, ...] stack.
    """
    records: list[ClipRecord] = []
    for entry in manifest:
        frames = np.asarray(load_video(entry["path"]))
        clips = segment_clips(frames.shape[0], float(entry["fps"]), video_id=str(entry["video_id"]))
        score_clips(clips, frames, providers, cfg)
        records.extend(clips)
    return apply_filters(records, cfg)
