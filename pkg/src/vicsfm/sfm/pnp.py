"""Absolute pose from 2D-3D correspondences: P3P (Grunert) inside RANSAC, then LM."""
from __future__ import annotations

import math

import numpy as np

from .camera import CameraIntrinsics, Pose, bearings, nearest_rotation, project_points, so3_exp
from .errors import RegistrationError
from .essential import ransac_iterations
from .projection import project_with_jacobians


def _rigid_fit(A: np.ndarray, B: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """R, t minimising |R A_i + t - B_i| (Kabsch)."""
    ca, cb = A.mean(axis=0), B.mean(axis=0)
    H = (A - ca).T @ (B - cb)
    U, _, Vt = np.linalg.svd(H)
    D = np.diag([1.0, 1.0, np.sign(np.linalg.det(Vt.T @ U.T))])
    R = Vt.T @ D @ U.T
    return R, cb - R @ ca


def p3p_grunert(world: np.ndarray, rays: np.ndarray) -> list[tuple[np.ndarray, np.ndarray]]:
    """Up to four camera poses (R, t) for three world points and their unit bearing vectors."""
    P1, P2, P3 = world
    a = np.linalg.norm(P2 - P3)
    b = np.linalg.norm(P1 - P3)
    c = np.linalg.norm(P1 - P2)
    if min(a, b, c) < 1e-12:
        return []
    j1, j2, j3 = rays
    ca, cb, cg = float(j2 @ j3), float(j1 @ j3), float(j1 @ j2)
    a2, b2, c2 = a * a, b * b, c * c
    p = (a2 - c2) / b2
    q = (a2 + c2) / b2
    A4 = (p - 1) ** 2 - 4 * c2 / b2 * ca ** 2
    A3 = 4 * (p * (1 - p) * cb - (1 - q) * ca * cg + 2 * c2 / b2 * ca ** 2 * cb)
    A2 = 2 * (p ** 2 - 1 + 2 * p ** 2 * cb ** 2 + 2 * (b2 - c2) / b2 * ca ** 2
              - 4 * q * ca * cb * cg + 2 * (b2 - a2) / b2 * cg ** 2)
    A1 = 4 * (-p * (1 + p) * cb + 2 * a2 / b2 * cg ** 2 * cb - (1 - q) * ca * cg)
    A0 = (1 + p) ** 2 - 4 * a2 / b2 * cg ** 2
    coeffs = np.array([A4, A3, A2, A1, A0])
    if not np.all(np.isfinite(coeffs)) or np.abs(coeffs).max() == 0:
        return []
    roots = np.roots(coeffs)
    scale = max(1.0, np.abs(roots).max()) if len(roots) else 1.0
    sols = []
    for v in roots:
        if abs(v.imag) > 1e-6 * scale:
            continue
        v = v.real
        if v <= 0:
            continue
        den = 2.0 * (cg - v * ca)
        if abs(den) < 1e-12:
            continue
        u = ((-1 + p) * v * v - 2 * p * cb * v + 1 + p) / den
        if u <= 0:
            continue
        s1sq = c2 / (1 + u * u - 2 * u * cg)
        if s1sq <= 0:
            continue
        s1 = math.sqrt(s1sq)
        cam = np.stack([s1 * j1, u * s1 * j2, v * s1 * j3])
        R, t = _rigid_fit(world, cam)
        sols.append((R, t))
    return sols


def refine_pose(intr: CameraIntrinsics, pose: Pose, X: np.ndarray, pix: np.ndarray,
                iterations: int = 50) -> Pose:
    """Levenberg-Marquardt on reprojection error over the 6 pose parameters."""
    R, t = pose.R, pose.t.copy()
    c = np.array([intr.cx, intr.cy])

    def cost_of(R_, t_):
        proj, z, *_ = project_with_jacobians(np.broadcast_to(R_, (len(X), 3, 3)), np.broadcast_to(t_, (len(X), 3)),
                                             X, intr.focal, intr.k1, c, want_jac=False)
        if np.any(z <= 0):
            return np.inf
        return float(np.sum((proj - pix) ** 2))

    lam = 1e-3
    cost = cost_of(R, t)
    for _ in range(iterations):
        proj, z, Jp, _, _ = project_with_jacobians(np.broadcast_to(R, (len(X), 3, 3)),
                                                   np.broadcast_to(t, (len(X), 3)), X, intr.focal, intr.k1, c)
        r = (proj - pix).reshape(-1)
        J = Jp.reshape(-1, 6)
        A = J.T @ J
        g = J.T @ r
        improved = False
        while lam < 1e10:
            try:
                delta = np.linalg.solve(A + lam * np.diag(np.maximum(np.diag(A), 1e-12)), -g)
            except np.linalg.LinAlgError:
                lam *= 10
                continue
            R_new = so3_exp(delta[:3]) @ R
            t_new = t + delta[3:]
            new_cost = cost_of(R_new, t_new)
            if new_cost < cost:
                improved = True
                rel = (cost - new_cost) / max(cost, 1e-300)
                R, t, cost = R_new, t_new, new_cost
                lam = max(lam / 10, 1e-12)
                break
            lam *= 10
        if not improved or rel < 1e-12 or cost < 1e-24:
            break
    return Pose.from_rt(nearest_rotation(R), t)


def reprojection_errors(intr: CameraIntrinsics, pose: Pose, X: np.ndarray, pix: np.ndarray) -> np.ndarray:
    proj, z = project_points(intr, pose, X)
    err = np.linalg.norm(proj - pix, axis=1)
    err[~(z > 0)] = np.inf
    return err


def solve_pnp_ransac(points3d, pixels, intr: CameraIntrinsics, threshold: float = 4.0,
                     confidence: float = 0.999, seed: int = 0, max_iterations: int = 2000,
                     min_inliers: int = 4) -> tuple[Pose, np.ndarray]:
    """Camera pose from 2D-3D matches; returns ``(pose, inlier_mask)``."""
    X = np.asarray(points3d, dtype=np.float64).reshape(-1, 3)
    pix = np.asarray(pixels, dtype=np.float64).reshape(-1, 2)
    n = len(X)
    if n < 4:
        raise RegistrationError(f"PnP needs at least 4 correspondences, got {n}")
    rays = bearings(intr, pix)
    rng = np.random.default_rng(seed)
    best_pose, best_mask, best_count, best_err = None, None, 0, np.inf
    needed = max_iterations
    it = 0
    while it < needed:
        it += 1
        idx = rng.choice(n, 4, replace=False)
        sols = p3p_grunert(X[idx[:3]], rays[idx[:3]])
        if not sols:
            continue
        # the fourth point picks among the P3P solutions
        best_local, best_e4 = None, np.inf
        for R, t in sols:
            xc = R @ X[idx[3]] + t
            if xc[2] <= 0:
                continue
            e4 = float(np.linalg.norm(np.cross(xc / np.linalg.norm(xc), rays[idx[3]])))
            if e4 < best_e4:
                best_local, best_e4 = (R, t), e4
        if best_local is None:
            continue
        pose = Pose.from_rt(nearest_rotation(best_local[0]), best_local[1])
        err = reprojection_errors(intr, pose, X, pix)
        mask = err <= threshold
        count = int(mask.sum())
        score = float(np.sum(np.minimum(err, threshold) ** 2))
        if count > best_count or (count == best_count and score < best_err):
            best_pose, best_mask, best_count, best_err = pose, mask, count, score
            needed = ransac_iterations(count / n, 4, confidence, max_iterations)
    if best_pose is None or best_count < max(4, min_inliers):
        raise RegistrationError(f"no PnP consensus with at least {max(4, min_inliers)} inliers (best {best_count})")
    pose, mask = best_pose, best_mask
    for _ in range(2):
        pose = refine_pose(intr, pose, X[mask], pix[mask])
        new_mask = reprojection_errors(intr, pose, X, pix) <= threshold
        if new_mask.sum() < 4:
            break
        mask = new_mask
    return pose, mask
