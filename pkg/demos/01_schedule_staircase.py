"""The per-frame noise staircase and forward-pass accounting.

A window of frames denoises in lock-step: frame t trails frame t-1 by
`stride` schedule indices, so at any row the window shows a staircase of
noise levels. Advancing one row costs exactly one denoiser forward pass,
which makes inference cost a closed form: steps + (frames - 1) * stride.
"""

import numpy as np

from gemkit.schedule import NoiseSchedule, ScheduleConfig, scheduling_matrix, total_forward_passes

# a small window: 3 frames, 3 steps, stride 1
cfg = ScheduleConfig(window=3, steps=3, stride=1)
ns = NoiseSchedule.karras(3, sigma_min=0.02, sigma_max=80.0)
print("noise levels:", np.array2string(ns.sigmas, precision=3))
print()

matrix = scheduling_matrix(6, cfg, ns)
print("scheduling matrix for 6 frames (rows advance downward):")
print("         " + "  ".join(f"frame{i}" for i in range(6)))
for r, row in enumerate(matrix):
    cells = "  ".join(f"{v:6.2f}" for v in row)
    print(f"row {r:2d}:  {cells}")
print()

# the production-scale window: 25 frames, 50 steps, stride 2
big = ScheduleConfig(window=25, steps=50, stride=2)
print("forward passes at window=25, steps=50, stride=2 (one pass per row):")
for frames in (25, 50, 150):
    print(f"  {frames:4d} frames -> {total_forward_passes(frames, big)} passes")
