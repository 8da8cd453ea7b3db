"""RANSAC plane fitting and plane-referenced removal of stray 3D points."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .sfm.essential import ransac_iterations
from .sfm.reconstruction import Reconstruction

BEYOND_PLANE = "remove-beyond-signed-distance"
NEAR_PLANE = "keep-near-plane"
MODES = (BEYOND_PLANE, NEAR_PLANE)
_MODE_ALIASES = {"beyond": BEYOND_PLANE, "near": NEAR_PLANE, BEYOND_PLANE: BEYOND_PLANE, NEAR_PLANE: NEAR_PLANE}


def normalize_mode(mode: str) -> str:
    """Canonical cleanup mode name; accepts the short aliases ``beyond`` and ``near``."""
    try:
        return _MODE_ALIASES[mode]
    except (KeyError, TypeError):
        raise ValueError(f"unknown cleanup mode {mode!r}; expected one of {MODES} or beyond/near") from None


class DegenerateInputError(ValueError):
    """Points do not span a plane (collinear or coincident)."""


@dataclass(frozen=True)
class Plane:
    normal: np.ndarray
    offset: float

    def __post_init__(self):
        n = np.asarray(self.normal, dtype=np.float64).reshape(3)
        norm = np.linalg.norm(n)
        if not norm > 0:
            raise ValueError("plane normal must be non-zero")
        object.__setattr__(self, "normal", n / norm)
        object.__setattr__(self, "offset", float(self.offset) / norm)

    def signed_distance(self, P: np.ndarray) -> np.ndarray:
        return np.asarray(P, dtype=np.float64) @ self.normal + self.offset

    @classmethod
    def through(cls, P: np.ndarray) -> "Plane":
        """Least-squares plane: centroid plus smallest-eigenvector normal."""
        c = P.mean(axis=0)
        w, V = np.linalg.eigh((P - c).T @ (P - c))
        n = V[:, 0]
        return cls(n, -float(n @ c))


def _spans_plane(P: np.ndarray, tol: float = 1e-12) -> bool:
    if len(P) < 3:
        return False
    s = np.linalg.svd(P - P.mean(axis=0), compute_uv=False)
    return s[0] > 0 and s[1] > tol * max(s[0], 1.0)


def fit_plane_ransac(points, threshold: float, confidence: float = 0.999, seed: int = 0,
                     max_iterations: int = 1000) -> tuple[Plane, np.ndarray]:
    """Dominant plane by 3-point RANSAC with a least-squares refit on the inliers."""
    P = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if threshold <= 0:
        raise ValueError("threshold must be positive")
    if not _spans_plane(P):
        raise DegenerateInputError("points are collinear or coincident; no plane is defined")
    n = len(P)
    rng = np.random.default_rng(seed)
    best_plane, best_mask, best_count, best_err = None, None, 0, math.inf
    needed = max_iterations
    it = 0
    while it < needed:
        it += 1
        a, b, c = P[rng.choice(n, 3, replace=False)]
        normal = np.cross(b - a, c - a)
        if np.linalg.norm(normal) < 1e-12 * max(np.linalg.norm(b - a) * np.linalg.norm(c - a), 1e-300):
            continue
        plane = Plane(normal, -float(normal @ a))
        d = np.abs(plane.signed_distance(P))
        mask = d <= threshold
        count = int(mask.sum())
        err = float(np.sum(np.minimum(d, threshold)))
        if count > best_count or (count == best_count and err < best_err):
            best_plane, best_mask, best_count, best_err = plane, mask, count, err
            needed = ransac_iterations(count / n, 3, confidence, max_iterations)
    if best_mask is None or best_count < 3:
        raise DegenerateInputError("no non-degenerate plane sample found")
    plane = Plane.through(P[best_mask])
    mask = np.abs(plane.signed_distance(P)) <= threshold
    if mask.sum() < best_count:
        # the refit may not lose consensus; keep the sampled plane instead
        return best_plane, best_mask
    return plane, mask


def robust_diagonal(P: np.ndarray, lo: float = 1.0, hi: float = 99.0) -> float:
    """Bounding-box diagonal of the central percentile range (insensitive to a few strays)."""
    a = np.percentile(P, lo, axis=0)
    b = np.percentile(P, hi, axis=0)
    return float(np.linalg.norm(b - a))


def plane_outliers(points, mode: str = BEYOND_PLANE, threshold_factor: float = 0.5,
                   plane_threshold_factor: float = 0.01, seed: int = 0) -> tuple[np.ndarray, Plane]:
    """Boolean mask of points to remove, and the fitted plane.

    In the default mode a point is removed when it lies on the side of the
    plane opposite the bulk of the cloud, farther than ``threshold_factor``
    times the robust bounding-box diagonal.  The bulk side is the sign of the
    median signed distance; the mean would be dragged across a shallow cloud's
    plane by the very stragglers being removed.  In keep-near-plane mode every
    point farther than that distance on either side is removed.
    """
    mode = normalize_mode(mode)
    P = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if len(P) < 3:
        raise DegenerateInputError("plane cleanup needs at least 3 points")
    diag = robust_diagonal(P)
    if diag <= 0:
        raise DegenerateInputError("points are coincident")
    plane, _ = fit_plane_ransac(P, plane_threshold_factor * diag, seed=seed)
    d = plane.signed_distance(P)
    limit = threshold_factor * diag
    if mode == NEAR_PLANE:
        return np.abs(d) > limit, plane
    side = np.sign(float(np.median(d)))
    if side == 0:
        return np.abs(d) > limit, plane
    return -side * d > limit, plane


def remove_outliers_plane(recon: Reconstruction, mode: str = BEYOND_PLANE, threshold_factor: float = 0.5,
                          plane_threshold_factor: float = 0.01, seed: int = 0) -> Reconstruction:
    """Copy of ``recon`` without plane-referenced outlier points; frames are kept."""
    ids, P = recon.point_array()
    remove, _ = plane_outliers(P, mode, threshold_factor, plane_threshold_factor, seed)
    out = recon.copy()
    for pid in ids[remove]:
        out.remove_point(int(pid))
    return out
