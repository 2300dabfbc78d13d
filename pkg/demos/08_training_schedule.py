"""Training-time noise draws that mirror the inference staircase.

Each training sample anchors one noise level (log-normal draw), converts it
to a denoising time, slides it by a Beta-distributed shift, and spaces the
frames 1/(N-1) apart so noise rises monotonically along the frame axis.
Jitter adds variability without ever re-ordering frames.
"""

import numpy as np

from gemkit.schedule import SigmaTimeMap, TrainingNoiseConfig, training_frame_sigmas

mapping = SigmaTimeMap(sigma_min=0.002, sigma_max=700.0)
cfg = TrainingNoiseConfig(num_frames=8, p_mean=0.7, p_std=1.6)
rng = np.random.default_rng(4)

print("three draws (sigma per frame, noise rising along the row):")
for k in range(3):
    d = training_frame_sigmas(cfg, mapping, rng)
    row = "  ".join(f"{s:8.3f}" for s in d.sigmas)
    print(f"  draw {k}: {row}")
    print(f"          intercept sigma {d.sigma_intercept:8.3f}  shift {d.t_shift:.3f}  "
          f"clamped frames {int(d.clamped.sum())}")

n = 20_000
logs = np.array([np.log(training_frame_sigmas(cfg, mapping, rng).sigma_intercept) for _ in range(n)])
print(f"\nover {n} draws: mean log sigma = {logs.mean():.4f} (target {cfg.p_mean}), "
      f"std = {logs.std():.4f} (target {cfg.p_std})")
