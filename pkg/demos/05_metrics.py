"""Controllability metrics on synthetic predictions.

Ego motion is scored by average displacement error, object control by the
pixel distance between tracked box centers, depth by relative error and the
max-ratio inlier fraction, and human poses by OKS-matched average precision.
"""

import numpy as np

from gemkit.metrics import (
    BoxTrack,
    Detection,
    KeypointSet,
    KPT_SIGMAS,
    ade,
    com,
    depth_metrics,
    keypoint_ap,
    select_largest_vehicle,
)

rng = np.random.default_rng(0)

# --- trajectories ---------------------------------------------------------
t = np.linspace(0, 2 * np.pi, 30)
gt_traj = np.column_stack([10 * np.sin(t), 10 * (1 - np.cos(t))])
gen_traj = gt_traj + rng.normal(0, 0.4, gt_traj.shape)
print(f"ADE(generated, ground truth) = {ade(gen_traj, gt_traj):.3f} m")

# --- object tracking + COM --------------------------------------------------
dets = []
for f in range(20):
    x = 10.0 + 2.0 * f
    dets.append(
        [
            Detection("car", np.array([x, 40.0, x + 30.0, 60.0])),
            Detection("car", np.array([200.0, 10.0, 210.0, 18.0])),  # smaller, ignored
            Detection("person", np.array([5.0, 5.0, 9.0, 15.0])),
        ]
    )
track_gt = select_largest_vehicle(dets)
jitter = [
    [Detection("car", np.array([10.0 + 2.0 * f + rng.normal(0, 1.5), 40.0, 40.0 + 2.0 * f, 60.0]))]
    for f in range(20)
]
track_gen = select_largest_vehicle(jitter)
r = com(track_gen, track_gt)
print(f"COM = {r.value:.2f} px over {r.frames_used} frames ({r.frames_skipped} skipped)")

# --- depth ---------------------------------------------------------------
gt_depth = 5.0 + 0.05 * np.mgrid[0:64, 0:64][0]
pred_depth = gt_depth * np.exp(rng.normal(0, 0.08, gt_depth.shape))
d = depth_metrics(pred_depth, gt_depth)
print(f"depth: AbsRel = {d.abs_rel:.3f}, delta<1.25 = {d.delta:.3f}")

# --- keypoint AP -------------------------------------------------------------
def person(center, spread=30.0, area=90.0 * 90.0):
    kps = np.column_stack([
        center[0] + rng.uniform(-spread, spread, 17),
        center[1] + rng.uniform(-spread, spread, 17),
        np.full(17, 2.0),
    ])
    return KeypointSet(kps, score=1.0, area=area)

gts, preds = [], []
for _ in range(8):
    g = person(rng.uniform(100, 400, 2))
    jittered = g.keypoints.copy()
    jittered[:, :2] += rng.normal(0, 6.0, (17, 2))
    gts.append([g])
    preds.append([KeypointSet(jittered, score=float(rng.uniform(0.5, 1.0)), area=g.area)])
res = keypoint_ap(preds, gts)
print("pose AP @ 0.50:0.95 =", f"{res.ap:.3f}")
print("  per threshold:", {f"{k:.2f}": round(v, 2) for k, v in res.per_threshold.items()})
