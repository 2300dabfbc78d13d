"""Controllability and quality metrics: trajectory displacement error, object
box-center error with greedy largest-vehicle tracking, depth error, and
OKS-matched keypoint average precision.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from gemkit.errors import ValidationError

# standard per-keypoint falloff constants for the 17 COCO joints
KPT_SIGMAS = np.array(
    [0.26, 0.25, 0.25, 0.35, 0.35, 0.79, 0.79, 0.72, 0.72, 0.62, 0.62, 1.07, 1.07, 0.87, 0.87, 0.89, 0.89]
) / 10.0

OKS_THRESHOLDS = tuple(np.round(np.arange(0.5, 1.0, 0.05), 2))
LARGE_AREA = 96.0 ** 2
VEHICLE_LABELS = frozenset({"car", "truck", "bus", "van", "motorcycle", "vehicle"})


def ade(a: np.ndarray, b: np.ndarray) -> float:
    """Average displacement error: mean Euclidean distance between
    corresponding points of two equal-length trajectories."""
    pa = np.asarray(a, dtype=np.float64)
    pb = np.asarray(b, dtype=np.float64)
    if pa.shape != pb.shape:
        raise ValidationError(f"trajectory shape mismatch: {pa.shape} vs {pb.shape}")
    if pa.ndim != 2 or pa.shape[0] < 1:
        raise ValidationError("trajectories must be [L, D] with L >= 1")
    return float(np.linalg.norm(pa - pb, axis=1).mean())


@dataclass(frozen=True)
class BoxTrack:
    """Per-frame axis-aligned boxes (x_min, y_min, x_max, y_max); frames with
    no box are simply absent from the mapping."""

    boxes: dict

    def __post_init__(self):
        clean = {}
        for frame, box in self.boxes.items():
            b = np.asarray(box, dtype=np.float64)
            if b.shape != (4,) or b[0] >= b[2] or b[1] >= b[3]:
                raise ValidationError(f"bad box {box} at frame {frame}")
            clean[int(frame)] = b
        object.__setattr__(self, "boxes", clean)

    def center(self, frame: int) -> np.ndarray:
        b = self.boxes[frame]
        return np.array([(b[0] + b[2]) / 2.0, (b[1] + b[3]) / 2.0])


@dataclass(frozen=True)
class ComResult:
    value: float
    frames_used: int
    frames_skipped: int


def com(gen: BoxTrack, gt: BoxTrack, norm: str = "l2") -> ComResult:
    """Mean distance in pixels between box centers over frames where both
    tracks are present; other frames are skipped and counted."""
    common = sorted(set(gen.boxes) & set(gt.boxes))
    if not common:
        raise ValidationError("no frame has boxes on both tracks")
    skipped = len(set(gen.boxes) | set(gt.boxes)) - len(common)
    deltas = np.stack([gen.center(f) - gt.center(f) for f in common])
    if norm == "l2":
        d = np.linalg.norm(deltas, axis=1)
    elif norm == "l1":
        d = np.abs(deltas).sum(axis=1)
    else:
        raise ValidationError(f"unknown norm {norm!r}")
    return ComResult(value=float(d.mean()), frames_used=len(common), frames_skipped=skipped)


def box_iou(a: np.ndarray, b: np.ndarray) -> float:
    ix0, iy0 = max(a[0], b[0]), max(a[1], b[1])
    ix1, iy1 = min(a[2], b[2]), min(a[3], b[3])
    iw, ih = max(0.0, ix1 - ix0), max(0.0, iy1 - iy0)
    inter = iw * ih
    if inter == 0:
        return 0.0
    union = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter
    return float(inter / union)


@dataclass(frozen=True)
class Detection:
    label: str
    box: np.ndarray
    score: float = 1.0


def select_largest_vehicle(
    detections: Sequence[Sequence[Detection]],
    iou_threshold: float = 0.3,
    vehicle_labels: frozenset = VEHICLE_LABELS,
) -> BoxTrack:
    """Track the vehicle that is largest in the first frame it appears.

    Selection: max box area in that frame, area ties broken by lower y_min
    then x_min. Tracking: greedy max-IoU association (>= iou_threshold)
    against the last known box; frames without a match are recorded absent
    and the track may re-associate later."""
    start = None
    for f, dets in enumerate(detections):
        vehicles = [d for d in dets if d.label in vehicle_labels]
        if vehicles:
            start = f
            boxes = sorted(
                (np.asarray(d.box, dtype=np.float64) for d in vehicles),
                key=lambda b: (-(b[2] - b[0]) * (b[3] - b[1]), b[1], b[0]),
            )
            current = boxes[0]
            break
    if start is None:
        raise ValidationError("no vehicle detections in any frame")

    track = {start: current.copy()}
    for f in range(start + 1, len(detections)):
        cands = [
            np.asarray(d.box, dtype=np.float64)
            for d in detections[f]
            if d.label in vehicle_labels
        ]
        scored = sorted(
            ((box_iou(current, b), b) for b in cands),
            key=lambda ib: (-ib[0], ib[1][1], ib[1][0]),
        )
        if scored and scored[0][0] >= iou_threshold:
            current = scored[0][1]
            track[f] = current.copy()
    return BoxTrack(track)


@dataclass(frozen=True)
class DepthResult:
    abs_rel: float
    delta: float
    valid_pixels: int


def depth_metrics(pred: np.ndarray, gt: np.ndarray, delta_threshold: float = 1.25) -> DepthResult:
    """AbsRel = mean |pred - gt| / gt and delta = fraction of pixels with
    max(gt/pred, pred/gt) < threshold (strict), over pixels where both sides
    are positive."""
    p = np.asarray(pred, dtype=np.float64)
    g = np.asarray(gt, dtype=np.float64)
    if p.shape != g.shape:
        raise ValidationError(f"depth shape mismatch: {p.shape} vs {g.shape}")
    valid = (p > 0) & (g > 0) & np.isfinite(p) & np.isfinite(g)
    n = int(valid.sum())
    if n == 0:
        raise ValidationError("no valid depth pixels")
    p, g = p[valid], g[valid]
    abs_rel = float(np.mean(np.abs(p - g) / g))
    ratio = np.maximum(p / g, g / p)
    delta = float(np.mean(ratio < delta_threshold))
    return DepthResult(abs_rel=abs_rel, delta=delta, valid_pixels=n)


@dataclass(frozen=True)
class KeypointSet:
    """17 COCO keypoints as [17, 3] (x, y, visibility) plus a person score and
    area. Visibility follows the COCO {0, 1, 2} convention."""

    keypoints: np.ndarray
    score: float = 1.0
    area: float = 0.0

    def __post_init__(self):
        k = np.asarray(self.keypoints, dtype=np.float64)
        if k.shape != (17, 3):
            raise ValidationError(f"keypoints must be [17, 3], got {k.shape}")
        if not np.isin(k[:, 2], (0.0, 1.0, 2.0)).all():
            raise ValidationError("visibility flags must be 0, 1 or 2")
        object.__setattr__(self, "keypoints", k)


def oks(pred: KeypointSet, gt: KeypointSet, sigmas: np.ndarray = KPT_SIGMAS) -> float:
    """Object keypoint similarity between a prediction and a ground truth,
    Gaussian in the per-joint distances scaled by the gt person area."""
    v = gt.keypoints[:, 2] > 0
    if not v.any():
        return 0.0
    d2 = ((pred.keypoints[:, :2] - gt.keypoints[:, :2]) ** 2).sum(axis=1)
    k2 = (2.0 * sigmas) ** 2
    e = d2 / (2.0 * (gt.area + np.spacing(1)) * k2)
    return float(np.exp(-e[v]).mean())


def _canonical_key(kp: KeypointSet) -> bytes:
    return kp.keypoints.tobytes()


@dataclass(frozen=True)
class APResult:
    ap: float
    per_threshold: dict


def keypoint_ap(
    preds: Sequence[Sequence[KeypointSet]],
    gts: Sequence[Sequence[KeypointSet]],
    thresholds: Sequence[float] = OKS_THRESHOLDS,
    min_area: Optional[float] = None,
    max_dets: int = 20,
) -> APResult:
    """Average precision of keypoint predictions under OKS matching.

    Per image and threshold, predictions are matched greedily in descending
    score order to the best still-unmatched gt with OKS >= threshold. AP is
    the area under the 101-point interpolated precision-recall curve,
    averaged over thresholds. ``min_area`` ignores gts with area <= min_area
    (and unmatched predictions in that range), which implements the
    large-instances filter at 96^2. Score ties break on the keypoint bytes so
    the result is independent of image and input order. With no gts anywhere
    the AP is defined as 0."""
    if len(preds) != len(gts):
        raise ValidationError("preds and gts must cover the same images")
    thresholds = [float(t) for t in thresholds]
    rec_thrs = np.linspace(0.0, 1.0, 101)

    per_threshold: dict[float, float] = {}
    for thr in thresholds:
        thr_eff = min(thr, 1.0 - 1e-10)
        all_scores: list[tuple] = []  # (score, tiebreak, is_tp, ignored)
        npig = 0
        for img_preds, img_gts in zip(preds, gts):
            gt_ignored = [
                (min_area is not None and not (g.area > min_area)) for g in img_gts
            ]
            npig += sum(1 for ig in gt_ignored if not ig)
            order = sorted(
                range(len(img_preds)),
                key=lambda i: (-img_preds[i].score, _canonical_key(img_preds[i])),
            )[:max_dets]
            gt_order = sorted(range(len(img_gts)), key=lambda j: gt_ignored[j])
            gt_matched = [False] * len(img_gts)
            for i in order:
                best, m = thr_eff, -1
                for j in gt_order:
                    if gt_matched[j]:
                        continue
                    if m > -1 and not gt_ignored[m] and gt_ignored[j]:
                        break
                    s = oks(img_preds[i], img_gts[j])
                    if s < best:
                        continue
                    best, m = s, j
                if m >= 0:
                    gt_matched[m] = True
                    all_scores.append((img_preds[i].score, _canonical_key(img_preds[i]), True, gt_ignored[m]))
                else:
                    det_ignored = min_area is not None and not (img_preds[i].area > min_area)
                    all_scores.append((img_preds[i].score, _canonical_key(img_preds[i]), False, det_ignored))

        if npig == 0:
            per_threshold[thr] = 0.0
            continue
        all_scores.sort(key=lambda t: (-t[0], t[1]))
        kept = [(tp, ig) for _, _, tp, ig in all_scores if not ig]
        tp = np.cumsum([1 if t else 0 for t, _ in kept], dtype=np.float64)
        fp = np.cumsum([0 if t else 1 for t, _ in kept], dtype=np.float64)
        if tp.size == 0:
            per_threshold[thr] = 0.0
            continue
        recall = tp / npig
        precision = tp / np.maximum(tp + fp, np.spacing(1))
        for i in range(precision.size - 1, 0, -1):
            precision[i - 1] = max(precision[i - 1], precision[i])
        q = np.zeros(rec_thrs.size)
        inds = np.searchsorted(recall, rec_thrs, side="left")
        ok_idx = inds < precision.size
        q[ok_idx] = precision[inds[ok_idx]]
        per_threshold[thr] = float(q.mean())

    mean_ap = float(np.mean(list(per_threshold.values()))) if per_threshold else 0.0
    return APResult(ap=mean_ap, per_threshold=per_threshold)
