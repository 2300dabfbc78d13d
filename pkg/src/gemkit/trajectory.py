"""Camera-pose post-processing: bird's-eye-view trajectories in the first
camera's frame, the 6-value continuous rotation encoding, and least-squares
scale compensation against ground truth.
"""

from __future__ import annotations

import numpy as np

from gemkit.errors import ValidationError

_RIGID_TOL = 1e-6


def validate_pose(pose: np.ndarray) -> np.ndarray:
    """Check a 4x4 camera-to-world rigid transform [R T; 0 1]."""
    a = np.asarray(pose, dtype=np.float64)
    if a.shape != (4, 4):
        raise ValidationError(f"pose must be 4x4, got {a.shape}")
    if not np.allclose(a[3], [0.0, 0.0, 0.0, 1.0], atol=_RIGID_TOL):
        raise ValidationError("bottom row must be (0, 0, 0, 1)")
    r = a[:3, :3]
    if not np.allclose(r @ r.T, np.eye(3), atol=_RIGID_TOL):
        raise ValidationError("rotation block is not orthonormal")
    if abs(np.linalg.det(r) - 1.0) > _RIGID_TOL:
        raise ValidationError("rotation block must have det +1")
    return a


def _rigid_inverse(pose: np.ndarray) -> np.ndarray:
    r = pose[:3, :3]
    t = pose[:3, 3]
    inv = np.eye(4)
    inv[:3, :3] = r.T
    inv[:3, 3] = -r.T @ t
    return inv


def bev_trajectory(poses) -> np.ndarray:
    """X/Z displacements of each pose expressed in the first camera's frame.

    Returns [L, 2]; the first point is (0, 0). Invariant to a common rigid
    transform applied on the left of every pose."""
    mats = [validate_pose(p) for p in poses]
    if not mats:
        raise ValidationError("need at least one pose")
    anchor_inv = _rigid_inverse(mats[0])
    out = np.empty((len(mats), 2))
    for i, a in enumerate(mats):
        rel = anchor_inv @ a
        out[i] = (rel[0, 3], rel[2, 3])
    return out


def rot_to_ortho6d(rot: np.ndarray) -> np.ndarray:
    """First two columns of the rotation matrix, column-major: 6 values."""
    r = np.asarray(rot, dtype=np.float64)
    if r.shape != (3, 3):
        raise ValidationError(f"rotation must be 3x3, got {r.shape}")
    return np.concatenate([r[:, 0], r[:, 1]])


def ortho6d_to_rot(v: np.ndarray) -> np.ndarray:
    """Recover a rotation from 6 values by Gram-Schmidt; repairs small
    perturbations, rejects (near-)collinear halves."""
    vv = np.asarray(v, dtype=np.float64)
    if vv.shape != (6,):
        raise ValidationError(f"expected 6 values, got shape {vv.shape}")
    a, b = vv[:3], vv[3:]
    na = np.linalg.norm(a)
    if na < 1e-12:
        raise ValidationError("first half is (near) zero")
    b1 = a / na
    b2 = b - (b @ b1) * b1
    nb = np.linalg.norm(b2)
    if nb < 1e-12:
        raise ValidationError("halves are (near) collinear")
    b2 /= nb
    b3 = np.cross(b1, b2)
    return np.stack([b1, b2, b3], axis=1)


def scale_compensate(est: np.ndarray, gt: np.ndarray) -> tuple[float, np.ndarray]:
    """Least-squares scalar s* = sum<est, gt> / sum|est|^2 and the rescaled
    trajectory s* * est."""
    e = np.asarray(est, dtype=np.float64)
    g = np.asarray(gt, dtype=np.float64)
    if e.shape != g.shape:
        raise ValidationError(f"trajectory shape mismatch: {e.shape} vs {g.shape}")
    if e.ndim != 2 or e.shape[0] < 1:
        raise ValidationError("trajectories must be [L, D] with L >= 1")
    denom = float((e * e).sum())
    if denom == 0.0:
        raise ValidationError("estimated trajectory is all-zero; scale undefined")
    s = float((e * g).sum() / denom)
    return s, s * e
