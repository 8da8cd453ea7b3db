"""Linear (DLT) triangulation from calibrated views."""
from __future__ import annotations

import math

import numpy as np

from .camera import CameraIntrinsics, Pose, undistort_points
from .errors import TriangulationError

MIN_PARALLAX_DEG = 0.5


def _projection_matrix(pose: Pose) -> np.ndarray:
    return np.hstack([pose.R, pose.t[:, None]])


def triangulate_normalized(P: np.ndarray, n: np.ndarray) -> np.ndarray:
    """DLT point(s) from normalised observations.

    ``P`` has shape (k, 3, 4) (or (m, k, 3, 4) for a batch) and ``n`` shape
    (k, 2) (or (m, k, 2)).  Returns Euclidean points.
    """
    P = np.asarray(P, dtype=np.float64)
    n = np.asarray(n, dtype=np.float64)
    rows_x = n[..., 0:1] * P[..., 2, :] - P[..., 0, :]
    rows_y = n[..., 1:2] * P[..., 2, :] - P[..., 1, :]
    A = np.concatenate([rows_x, rows_y], axis=-2)
    _, _, Vt = np.linalg.svd(A)
    Xh = Vt[..., -1, :]
    with np.errstate(divide="ignore", invalid="ignore"):
        return Xh[..., :3] / Xh[..., 3:4]


def parallax_angle(centers: np.ndarray, X: np.ndarray) -> np.ndarray:
    """Largest angle (radians) subtended at ``X`` by any two of the camera centres."""
    rays = X[None, :] - centers
    rays /= np.linalg.norm(rays, axis=1, keepdims=True)
    cos = np.clip(rays @ rays.T, -1.0, 1.0)
    return float(np.arccos(cos.min()))


def triangulate_dlt(pose_a: Pose, pose_b: Pose, intr: CameraIntrinsics, pix_a, pix_b,
                    min_parallax_deg: float = MIN_PARALLAX_DEG) -> np.ndarray:
    """Two-view DLT point; rejects no-baseline, low-parallax and behind-camera results."""
    ca, cb = pose_a.center, pose_b.center
    if np.linalg.norm(ca - cb) < 1e-12:
        raise TriangulationError("camera centres coincide; no baseline")
    n = undistort_points(intr, np.array([pix_a, pix_b], dtype=np.float64))
    X = triangulate_normalized(np.stack([_projection_matrix(pose_a), _projection_matrix(pose_b)]), n)
    if not np.all(np.isfinite(X)):
        raise TriangulationError("point at infinity")
    za = pose_a.transform(X)[2]
    zb = pose_b.transform(X)[2]
    if za <= 0 or zb <= 0:
        raise TriangulationError("triangulated point lies behind a camera")
    angle = parallax_angle(np.stack([ca, cb]), X)
    if angle < math.radians(min_parallax_deg):
        raise TriangulationError(f"parallax {math.degrees(angle):.3f} deg below {min_parallax_deg} deg")
    return X


def triangulate_pairs(pose_a: Pose, pose_b: Pose, na: np.ndarray, nb: np.ndarray) -> np.ndarray:
    """Batch two-view DLT on normalised coordinates; returns (m, 3) points (no checks)."""
    P = np.stack([_projection_matrix(pose_a), _projection_matrix(pose_b)])
    n = np.stack([na, nb], axis=1)
    return triangulate_normalized(np.broadcast_to(P, (len(na), 2, 3, 4)), n)


def pair_angles(ca: np.ndarray, cb: np.ndarray, X: np.ndarray) -> np.ndarray:
    ra = X - ca
    rb = X - cb
    cos = np.einsum("ij,ij->i", ra, rb) / (np.linalg.norm(ra, axis=1) * np.linalg.norm(rb, axis=1))
    return np.arccos(np.clip(cos, -1.0, 1.0))
