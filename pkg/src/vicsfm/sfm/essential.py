"""Essential matrix: eight-point RANSAC and cheirality-based decomposition.

Correspondences are normalised image coordinates with ``x2^T E x1 = 0`` and
``E = [t]x R`` for the relative pose ``x2 = R x1 + t``.
"""
from __future__ import annotations

import math

import numpy as np
from scipy.optimize import least_squares

from .camera import Pose, skew, so3_exp
from .errors import DegenerateConfigurationError, EstimationError
from .triangulation import pair_angles, triangulate_pairs


def _hartley(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    c = x.mean(axis=0)
    d = np.sqrt(np.sum((x - c) ** 2, axis=1)).mean()
    s = math.sqrt(2.0) / d if d > 0 else 1.0
    T = np.array([[s, 0, -s * c[0]], [0, s, -s * c[1]], [0, 0, 1]])
    xh = np.column_stack([x, np.ones(len(x))]) @ T.T
    return xh, T


def project_to_essential(E: np.ndarray) -> np.ndarray:
    """Zero the smallest singular value and equalise the other two; unit Frobenius norm."""
    U, S, Vt = np.linalg.svd(E)
    E = U @ np.diag([1.0, 1.0, 0.0]) @ Vt
    return E / np.linalg.norm(E)


def eight_point(x1: np.ndarray, x2: np.ndarray) -> np.ndarray:
    """Linear essential matrix from >= 8 normalised correspondences."""
    if len(x1) < 8:
        raise EstimationError(f"eight-point solver needs 8 correspondences, got {len(x1)}")
    h1, T1 = _hartley(x1)
    h2, T2 = _hartley(x2)
    A = np.einsum("ni,nj->nij", h2, h1).reshape(len(x1), 9)
    _, _, Vt = np.linalg.svd(A)
    F = Vt[-1].reshape(3, 3)
    return project_to_essential(T2.T @ F @ T1)


def sampson_distance(E: np.ndarray, x1: np.ndarray, x2: np.ndarray) -> np.ndarray:
    """First-order geometric error (normalised units, not squared)."""
    h1 = np.column_stack([x1, np.ones(len(x1))])
    h2 = np.column_stack([x2, np.ones(len(x2))])
    Ex1 = h1 @ E.T
    Etx2 = h2 @ E
    num = np.einsum("ij,ij->i", h2, Ex1) ** 2
    den = Ex1[:, 0] ** 2 + Ex1[:, 1] ** 2 + Etx2[:, 0] ** 2 + Etx2[:, 1] ** 2
    with np.errstate(divide="ignore", invalid="ignore"):
        d2 = np.where(den > 0, num / den, np.inf)
    return np.sqrt(d2)


def ransac_iterations(inlier_ratio: float, sample_size: int, confidence: float, max_iterations: int) -> int:
    if inlier_ratio <= 0:
        return max_iterations
    p = inlier_ratio ** sample_size
    if p >= 1.0:
        return 1
    denom = math.log1p(-p)
    if denom == 0.0:
        return max_iterations
    n = math.log(1.0 - confidence) / denom
    return int(min(max_iterations, max(1, math.ceil(n))))


def _refine_sampson(E: np.ndarray, x1: np.ndarray, x2: np.ndarray, scale: float | None = None) -> np.ndarray:
    """Minimise Sampson error over the essential manifold, starting from ``E``.

    Parametrised minimally as ``E = [t]x R`` with a rotation increment and a
    two-dimensional tangent step of the unit translation.
    """
    R0, t0 = pose_candidates(E)[0]
    t0 = t0 / np.linalg.norm(t0)
    b1 = np.cross(t0, [1.0, 0.0, 0.0] if abs(t0[0]) < 0.9 else [0.0, 1.0, 0.0])
    b1 /= np.linalg.norm(b1)
    b2 = np.cross(t0, b1)

    def build(p):
        t = t0 + p[3] * b1 + p[4] * b2
        return skew(t / np.linalg.norm(t)) @ so3_exp(p[:3]) @ R0

    def residual(p):
        return sampson_distance(build(p), x1, x2)

    if scale is None:
        sol = least_squares(residual, np.zeros(5), method="lm", xtol=1e-15, ftol=1e-15, gtol=1e-15, max_nfev=1000)
    else:
        sol = least_squares(residual, np.zeros(5), method="trf", loss="cauchy", f_scale=scale,
                            xtol=1e-15, ftol=1e-15, gtol=1e-15, max_nfev=1000)

    def cost(E_):
        d = sampson_distance(E_, x1, x2)
        return np.sum(d * d) if scale is None else np.sum(np.log1p((d / scale) ** 2))

    E_new = project_to_essential(build(sol.x))
    return E_new if cost(E_new) <= cost(E) else E


def estimate_essential_ransac(x1: np.ndarray, x2: np.ndarray, threshold: float, confidence: float = 0.999,
                              seed: int = 0, max_iterations: int = 2000, refine: bool = True):
    """Robust essential matrix from normalised correspondences.

    Returns ``(E, inlier_mask)``.  ``threshold`` is the Sampson distance in
    normalised units (pixels divided by focal length).
    """
    x1 = np.asarray(x1, dtype=np.float64).reshape(-1, 2)
    x2 = np.asarray(x2, dtype=np.float64).reshape(-1, 2)
    n = len(x1)
    if n < 8:
        raise EstimationError(f"need at least 8 correspondences, got {n}")
    rng = np.random.default_rng(seed)
    best_mask, best_count, best_err = None, 0, np.inf
    needed = max_iterations
    it = 0
    while it < needed:
        it += 1
        idx = rng.choice(n, 8, replace=False)
        try:
            E = eight_point(x1[idx], x2[idx])
        except np.linalg.LinAlgError:
            continue
        d = sampson_distance(E, x1, x2)
        mask = d <= threshold
        count = int(mask.sum())
        err = float(np.sum(np.minimum(d, threshold) ** 2))
        if count > best_count or (count == best_count and err < best_err):
            best_mask, best_count, best_err = mask, count, err
            needed = ransac_iterations(count / n, 8, confidence, max_iterations)
    if best_mask is None or best_count < 8:
        raise EstimationError(f"no essential-matrix model with at least 8 inliers (best {best_count})")
    E = eight_point(x1[best_mask], x2[best_mask])
    mask = sampson_distance(E, x1, x2) <= threshold
    if mask.sum() < best_count:
        mask = best_mask
    if refine:
        for _ in range(3):
            E = _refine_sampson(E, x1[mask], x2[mask], scale=threshold / 4.0)
            refined = sampson_distance(E, x1, x2) <= threshold
            if refined.sum() < mask.sum() or np.array_equal(refined, mask):
                break
            mask = refined
    return E, mask


def pose_candidates(E: np.ndarray) -> list[tuple[np.ndarray, np.ndarray]]:
    U, _, Vt = np.linalg.svd(E)
    if np.linalg.det(U) < 0:
        U = -U
    if np.linalg.det(Vt) < 0:
        Vt = -Vt
    W = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
    t = U[:, 2]
    R1 = U @ W @ Vt
    R2 = U @ W.T @ Vt
    return [(R1, t), (R1, -t), (R2, t), (R2, -t)]


def cheirality_support(R: np.ndarray, t: np.ndarray, x1: np.ndarray, x2: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    pa = Pose.identity()
    pb = Pose.from_rt(R, t)
    X = triangulate_pairs(pa, pb, x1, x2)
    finite = np.all(np.isfinite(X), axis=1)
    z1 = np.where(finite, X[:, 2], -1.0)
    z2 = np.where(finite, (X @ R.T + t)[:, 2], -1.0)
    return (z1 > 0) & (z2 > 0), X


def decompose_essential(E: np.ndarray, x1: np.ndarray, x2: np.ndarray, min_parallax_deg: float = 0.01) -> Pose:
    """Relative pose (unit-norm translation) with the most points in front of both cameras."""
    E = np.asarray(E, dtype=np.float64)
    x1 = np.asarray(x1, dtype=np.float64).reshape(-1, 2)
    x2 = np.asarray(x2, dtype=np.float64).reshape(-1, 2)
    norm = np.linalg.norm(E)
    if norm < 1e-12:
        raise DegenerateConfigurationError("essential matrix is zero (no translation)")
    S = np.linalg.svd(E / norm, compute_uv=False)
    if S[1] < 1e-6 * S[0]:
        raise DegenerateConfigurationError("essential matrix has rank below 2")
    support = []
    for R, t in pose_candidates(E):
        ok, X = cheirality_support(R, t, x1, x2)
        support.append((int(ok.sum()), R, t, ok, X))
    counts = sorted((s[0] for s in support), reverse=True)
    if counts[0] == 0:
        raise DegenerateConfigurationError("no candidate pose puts any point in front of both cameras")
    if counts[0] == counts[1]:
        raise DegenerateConfigurationError("ambiguous cheirality: two candidate poses tie")
    best = max(support, key=lambda s: s[0])
    _, R, t, ok, X = best
    angles = pair_angles(np.zeros(3), -R.T @ t, X[ok])
    if np.median(angles) < math.radians(min_parallax_deg):
        raise DegenerateConfigurationError("no parallax between the views (pure rotation)")
    return Pose.from_rt(R, t / np.linalg.norm(t))


def essential_from_pose(R: np.ndarray, t: np.ndarray) -> np.ndarray:
    return skew(t) @ R
