"""Two-view geometric verification of descriptor matches."""
from __future__ import annotations

import numpy as np

from .camera import CameraIntrinsics, undistort_points
from .errors import EstimationError
from .essential import estimate_essential_ransac

MIN_VERIFIED = 15


def verify_pair(kp_a: np.ndarray, kp_b: np.ndarray, matches: np.ndarray, intr: CameraIntrinsics,
                threshold_px: float = 4.0, confidence: float = 0.999, seed: int = 0,
                static_px: float = 2.0) -> np.ndarray:
    """Essential-matrix inliers among ``matches`` (an (m, 2) index array); empty when none fit.

    Matches that move less than ``static_px`` between the two frames are
    discarded first.
    """
    matches = np.asarray(matches, dtype=np.int64).reshape(-1, 2)
    # features fixed in the image (lens specks, overlays) are not scene points
    moving = np.linalg.norm(kp_a[matches[:, 0]] - kp_b[matches[:, 1]], axis=1) > static_px
    matches = matches[moving]
    if len(matches) < 8:
        return matches[:0]
    x1 = undistort_points(intr, kp_a[matches[:, 0]])
    x2 = undistort_points(intr, kp_b[matches[:, 1]])
    try:
        _, mask = estimate_essential_ransac(x1, x2, threshold_px / intr.focal, confidence, seed=seed)
    except EstimationError:
        return matches[:0]
    return matches[mask]


def verify_matches(keypoints: dict, matches: dict, intr: CameraIntrinsics, threshold_px: float = 4.0,
                   min_inliers: int = MIN_VERIFIED, confidence: float = 0.999, seed: int = 0,
                   static_px: float = 2.0) -> dict:
    """Keep, per frame pair, only matches consistent with one essential matrix.

    Pairs left with fewer than ``min_inliers`` verified matches are dropped.
    """
    out = {}
    for key in sorted(matches):
        a, b = key
        kept = verify_pair(np.asarray(keypoints[a], dtype=np.float64).reshape(-1, 2),
                           np.asarray(keypoints[b], dtype=np.float64).reshape(-1, 2),
                           matches[key], intr, threshold_px, confidence, seed, static_px)
        if len(kept) >= min_inliers:
            out[key] = kept
    return out
