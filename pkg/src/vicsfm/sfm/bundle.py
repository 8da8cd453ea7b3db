"""Sparse Levenberg-Marquardt bundle adjustment with a Huber loss.

Each observation contributes a 2-vector residual ``project(pose, X) - uv``.
The robust cost is ``sum(huber(|r_i|))`` and is minimised by iteratively
reweighted Gauss-Newton steps with Marquardt damping; a step is accepted only
if it lowers the true robust cost.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .camera import CameraIntrinsics, Pose, nearest_rotation, so3_exp
from .errors import NumericalError
from .projection import project_with_jacobians
from .reconstruction import Reconstruction


@dataclass(frozen=True)
class BundleOptions:
    max_iterations: int = 100
    initial_damping: float = 1e-3
    function_tolerance: float = 1e-8
    huber_delta: float = 2.0
    refine_intrinsics: bool = False

    def __post_init__(self):
        for name in ("max_iterations", "initial_damping", "function_tolerance", "huber_delta"):
            if not getattr(self, name) > 0:
                raise ValueError(f"BundleOptions.{name} must be positive")


def huber(s: np.ndarray, delta: float) -> np.ndarray:
    return np.where(s <= delta, 0.5 * s * s, delta * (s - 0.5 * delta))


class _Problem:
    """Flattened view of a reconstruction for optimisation."""

    def __init__(self, recon: Reconstruction, variable_frames, variable_points, fix_gauge: bool,
                 refine_intrinsics: bool):
        self.recon = recon
        self.frame_ids = sorted(recon.poses)
        fidx = {f: i for i, f in enumerate(self.frame_ids)}
        if variable_points is None:
            self.point_ids = sorted(recon.points)
        else:
            self.point_ids = sorted(p for p in variable_points if p in recon.points)
        pidx = {p: i for i, p in enumerate(self.point_ids)}
        obs_cam, obs_pt, obs_uv, obs_ref = [], [], [], []
        for pid in self.point_ids:
            for o in recon.observations[pid]:
                obs_cam.append(fidx[o.frame])
                obs_pt.append(pidx[pid])
                obs_uv.append((o.u, o.v))
                obs_ref.append((pid, o.frame))
        self.obs_cam = np.array(obs_cam, dtype=np.int64)
        self.obs_pt = np.array(obs_pt, dtype=np.int64)
        self.obs_uv = np.array(obs_uv, dtype=np.float64).reshape(-1, 2)
        self.obs_ref = obs_ref

        self.R = np.array([recon.poses[f].R for f in self.frame_ids]).reshape(-1, 3, 3)
        self.t = np.array([recon.poses[f].t for f in self.frame_ids]).reshape(-1, 3)
        self.X = np.array([recon.points[p] for p in self.point_ids]).reshape(-1, 3)
        intr = recon.intrinsics
        self.focal, self.k1 = intr.focal, intr.k1
        self.c = np.array([intr.cx, intr.cy])

        # parameter layout: 6 per frame, 3 per point, 2 intrinsics; -1 marks a fixed parameter
        nf, npt = len(self.frame_ids), len(self.point_ids)
        var_frames = set(self.frame_ids if variable_frames is None else variable_frames)
        cam_free = np.zeros((nf, 6), dtype=bool)
        for f in var_frames:
            if f in fidx:
                cam_free[fidx[f]] = True
        if fix_gauge and nf >= 1:
            ga, gb = recon.gauge if recon.gauge else (self.frame_ids[0], self.frame_ids[min(1, nf - 1)])
            if ga in fidx:
                cam_free[fidx[ga]] = False
            if gb in fidx and gb != ga:
                tb = recon.poses[gb].t
                cam_free[fidx[gb], 3 + int(np.argmax(np.abs(tb)))] = False
        col = 0
        self.cam_col = np.full((nf, 6), -1, dtype=np.int64)
        for i in range(nf):
            for k in range(6):
                if cam_free[i, k]:
                    self.cam_col[i, k] = col
                    col += 1
        self.intr_col = np.array([col, col + 1]) if refine_intrinsics else np.array([-1, -1])
        col += 2 if refine_intrinsics else 0
        self.n_cam_params = col
        self.pt_col = np.arange(col, col + 3 * npt, dtype=np.int64).reshape(npt, 3)
        self.n_params = col + 3 * npt

    # --- evaluation ---

    def residuals(self, R, t, X, focal, k1, want_jac=False):
        return project_with_jacobians(R[self.obs_cam], t[self.obs_cam], X[self.obs_pt], focal, k1, self.c, want_jac)

    def cost(self, state, delta_h):
        R, t, X, focal, k1 = state
        pix, z, *_ = self.residuals(R, t, X, focal, k1)
        if np.any(~(z > 0)):
            return np.inf
        s = np.linalg.norm(pix - self.obs_uv, axis=1)
        if not np.all(np.isfinite(s)):
            return np.inf
        return float(np.sum(huber(s, delta_h)))

    def linearize(self, state, delta_h):
        R, t, X, focal, k1 = state
        pix, z, Jc, Jp, Ji = self.residuals(R, t, X, focal, k1, want_jac=True)
        r = pix - self.obs_uv
        bad = ~np.all(np.isfinite(r), axis=1) | ~(z > 0)
        if np.any(bad):
            i = int(np.flatnonzero(bad)[0])
            pid, frame = self.obs_ref[i]
            raise NumericalError(f"non-finite residual for point {pid} in frame {frame}", observation=i)
        s = np.linalg.norm(r, axis=1)
        w = np.where(s <= delta_h, 1.0, delta_h / np.maximum(s, 1e-300))
        sw = np.sqrt(w)
        n = len(r)
        # camera-side block (poses + intrinsics) as a sparse matrix, point blocks kept dense per observation
        cam_blocks = np.concatenate([Jc, Ji], axis=2) * sw[:, None, None]  # (n, 2, 8)
        cols = np.concatenate([self.cam_col[self.obs_cam], np.broadcast_to(self.intr_col, (n, 2))], axis=1)
        rows = np.arange(2 * n).reshape(n, 2)
        rr = np.broadcast_to(rows[:, :, None], cam_blocks.shape)
        cc = np.broadcast_to(cols[:, None, :], cam_blocks.shape)
        keep = cc >= 0
        Jcam = sp.csr_matrix((cam_blocks[keep], (rr[keep], cc[keep])), shape=(2 * n, self.n_cam_params))
        Jpt = Jp * sw[:, None, None]
        return Jcam, Jpt, r * sw[:, None]

    def retract(self, state, delta):
        R, t, X, focal, k1 = state
        d_cam = np.where(self.cam_col >= 0, delta[np.maximum(self.cam_col, 0)], 0.0)
        R_new = so3_exp(d_cam[:, :3]) @ R
        t_new = t + d_cam[:, 3:]
        X_new = X + delta[self.pt_col] if len(self.pt_col) else X
        if self.intr_col[0] >= 0:
            focal, k1 = focal + delta[self.intr_col[0]], k1 + delta[self.intr_col[1]]
        return R_new, t_new, X_new, focal, k1


class _NormalEquations:
    """Damped Gauss-Newton system solved through the reduced camera system.

    Point parameters form 3x3 diagonal blocks, so they are eliminated first
    (Schur complement) and recovered by back-substitution.
    """

    def __init__(self, prob: _Problem, Jcam, Jpt, r):
        npt = len(prob.point_ids)
        n = len(r)
        self.nc = prob.n_cam_params
        self.npt = npt
        rv = r.reshape(-1)
        self.U = (Jcam.T @ Jcam).toarray()
        self.gc = Jcam.T @ rv
        V = np.zeros((npt, 3, 3))
        np.add.at(V, prob.obs_pt, np.einsum("nki,nkj->nij", Jpt, Jpt))
        self.V = V
        gp = np.zeros((npt, 3))
        np.add.at(gp, prob.obs_pt, np.einsum("nki,nk->ni", Jpt, r))
        self.gp = gp
        # W = Jcam^T Jpt laid out as (nc, 3*npt)
        rows = np.arange(2 * n).reshape(n, 2)
        pcols = prob.obs_pt[:, None] * 3 + np.arange(3)[None]
        Jp_sparse = sp.csr_matrix(
            (Jpt.reshape(-1), (np.repeat(rows.reshape(-1), 3), np.repeat(pcols, 2, axis=0).reshape(-1))),
            shape=(2 * n, 3 * npt))
        self.W = (Jcam.T @ Jp_sparse).tocsr()

    def gradient_norm(self) -> float:
        g = np.concatenate([self.gc, self.gp.reshape(-1)])
        return float(np.max(np.abs(g))) if len(g) else 0.0

    def solve(self, lam: float):
        Vd = self.V.copy()
        idx = np.arange(3)
        Vd[:, idx, idx] += lam * np.maximum(self.V[:, idx, idx], 1e-9)
        try:
            Vinv = np.linalg.inv(Vd)
        except np.linalg.LinAlgError:
            return None
        bp = -self.gp
        if self.nc:
            Ud = self.U.copy()
            Ud[np.diag_indices(self.nc)] += lam * np.maximum(np.diag(self.U), 1e-9)
            rows = (np.arange(self.npt)[:, None, None] * 3 + idx[None, :, None]).repeat(3, axis=2)
            cols = (np.arange(self.npt)[:, None, None] * 3 + idx[None, None, :]).repeat(3, axis=1)
            Vinv_sp = sp.csr_matrix((Vinv.reshape(-1), (rows.reshape(-1), cols.reshape(-1))),
                                    shape=(3 * self.npt, 3 * self.npt))
            WVinv = self.W @ Vinv_sp
            S = Ud - (WVinv @ self.W.T).toarray()
            rhs = -self.gc - WVinv @ bp.reshape(-1)
            try:
                dc = np.linalg.solve(S, rhs)
            except np.linalg.LinAlgError:
                return None
            bp = bp - (self.W.T @ dc).reshape(-1, 3)
        else:
            dc = np.zeros(0)
        dp = np.einsum("nij,nj->ni", Vinv, bp)
        delta = np.concatenate([dc, dp.reshape(-1)])
        return delta if np.all(np.isfinite(delta)) else None


def bundle_adjust(recon: Reconstruction, opts: BundleOptions | None = None, fix_gauge: bool = True, *,
                  variable_frames=None, variable_points=None, history: list | None = None) -> Reconstruction:
    """Refine poses and points (and optionally focal length and k1).

    ``variable_frames``/``variable_points`` restrict the optimisation to a
    local window; everything else is held fixed.  With ``fix_gauge`` the first
    gauge frame is fixed entirely and one translation component of the second
    is held to fix scale.  Accepted costs are appended to ``history``.
    """
    opts = opts or BundleOptions()
    prob = _Problem(recon, variable_frames, variable_points, fix_gauge, opts.refine_intrinsics)
    if len(prob.obs_cam) == 0 or prob.n_params == 0:
        return recon.copy()
    state = (prob.R, prob.t, prob.X, prob.focal, prob.k1)
    system = _NormalEquations(prob, *prob.linearize(state, opts.huber_delta))  # raises on non-finite residuals
    cost = prob.cost(state, opts.huber_delta)
    if history is not None:
        history.append(cost)
    lam = opts.initial_damping
    for _ in range(opts.max_iterations):
        if cost < 1e-30 or system.gradient_norm() < 1e-16:
            break
        accepted = False
        while lam <= 1e16:
            delta = system.solve(lam)
            if delta is None:
                lam *= 10.0
                continue
            trial = prob.retract(state, delta)
            new_cost = prob.cost(trial, opts.huber_delta)
            if new_cost < cost:
                accepted = True
                decrease = cost - new_cost
                prev = cost
                state, cost = trial, new_cost
                lam = max(lam / 10.0, 1e-15)
                if history is not None:
                    history.append(cost)
                break
            lam *= 10.0
        if not accepted or decrease <= opts.function_tolerance * prev:
            break
        system = _NormalEquations(prob, *prob.linearize(state, opts.huber_delta))

    R, t, X, focal, k1 = state
    out = recon.copy()
    for i, f in enumerate(prob.frame_ids):
        if np.any(prob.cam_col[i] >= 0):
            out.poses[f] = Pose.from_rt(nearest_rotation(R[i]), t[i])
    for i, p in enumerate(prob.point_ids):
        out.points[p] = X[i].copy()
    if prob.intr_col[0] >= 0:
        intr = recon.intrinsics
        out.intrinsics = CameraIntrinsics(float(focal), intr.cx, intr.cy, float(k1))
    return out
