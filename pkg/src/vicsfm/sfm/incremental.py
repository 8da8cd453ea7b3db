"""Incremental reconstruction: tracks, two-view bootstrap, PnP growth, local/global BA."""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .bundle import BundleOptions, bundle_adjust
from .camera import CameraIntrinsics, Pose, undistort_points
from .errors import DegenerateConfigurationError, EstimationError, ReconstructionError, RegistrationError
from .essential import decompose_essential, estimate_essential_ransac
from .pnp import solve_pnp_ransac
from .projection import project_with_jacobians
from .reconstruction import Observation, Reconstruction, observation_errors
from .triangulation import pair_angles, triangulate_normalized, triangulate_pairs

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class IncrementalOptions:
    min_init_matches: int = 30
    init_min_median_angle_deg: float = 2.0
    init_candidates: int = 100
    essential_threshold_px: float = 4.0
    pnp_threshold_px: float = 4.0
    pnp_min_inliers: int = 6
    filter_threshold_px: float = 4.0
    min_triangulation_angle_deg: float = 0.5
    local_ba_neighbors: int = 6
    global_ba_every: int = 10
    refine_intrinsics: bool = True
    ransac_confidence: float = 0.999
    bundle: BundleOptions = field(default_factory=BundleOptions)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "IncrementalOptions":
        d = dict(d)
        if "bundle" in d and isinstance(d["bundle"], dict):
            d["bundle"] = BundleOptions(**d["bundle"])
        return cls(**d)


class _UnionFind:
    def __init__(self):
        self.parent: dict = {}

    def find(self, a):
        parent = self.parent
        parent.setdefault(a, a)
        root = a
        while parent[root] != root:
            root = parent[root]
        while parent[a] != root:
            parent[a], a = root, parent[a]
        return root

    def union(self, a, b):
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            if ra < rb:
                ra, rb = rb, ra
            self.parent[ra] = rb


def build_tracks(matches: dict) -> list[dict[int, int]]:
    """Connected components of the match graph as ``{frame: feature}`` tracks.

    ``matches`` maps ``(frame_a, frame_b)`` to an (m, 2) array of feature
    index pairs.  Components containing two features of the same frame are
    contradictory and dropped; singletons never occur.  Output is sorted by
    the smallest (frame, feature) node of each track.
    """
    uf = _UnionFind()
    for (fa, fb), pairs in sorted(matches.items()):
        for ia, ib in np.asarray(pairs, dtype=np.int64).reshape(-1, 2):
            uf.union((fa, int(ia)), (fb, int(ib)))
    groups: dict = {}
    for node in uf.parent:
        groups.setdefault(uf.find(node), []).append(node)
    tracks = []
    for nodes in groups.values():
        frames = [f for f, _ in nodes]
        if len(set(frames)) != len(frames) or len(nodes) < 2:
            continue
        tracks.append(dict(sorted(nodes)))
    tracks.sort(key=lambda tr: min(tr.items()))
    return tracks


class _State:
    def __init__(self, keypoints: dict[int, np.ndarray], tracks, intr: CameraIntrinsics, opts: IncrementalOptions,
                 seed: int):
        self.kp = keypoints
        self.tracks = tracks
        self.opts = opts
        self.seed = seed
        self.recon = Reconstruction(intr)
        self.track_point: dict[int, int] = {}
        self.point_track: dict[int, int] = {}
        self.frame_tracks: dict[int, list[int]] = {}
        for tid, tr in enumerate(tracks):
            for f in tr:
                self.frame_tracks.setdefault(f, []).append(tid)

    def pixel(self, frame: int, feat: int) -> np.ndarray:
        return self.kp[frame][feat]

    # --- point bookkeeping ---

    def add_point(self, tid: int, X, frames) -> int:
        tr = self.tracks[tid]
        obs = [Observation(f, tr[f], *map(float, self.pixel(f, tr[f]))) for f in sorted(frames)]
        pid = self.recon.add_point(X, obs)
        self.track_point[tid] = pid
        self.point_track[pid] = tid
        return pid

    def drop_point(self, pid: int) -> None:
        tid = self.point_track.pop(pid)
        self.track_point.pop(tid, None)
        self.recon.remove_point(pid)

    # --- triangulation ---

    def triangulate_track(self, tid: int) -> bool:
        """Triangulate from the widest consistent pair, then refit on all agreeing views."""
        recon, opts = self.recon, self.opts
        tr = self.tracks[tid]
        frames = [f for f in tr if f in recon.poses]
        if len(frames) < 2:
            return False
        pix = np.array([self.pixel(f, tr[f]) for f in frames])
        nrm = undistort_points(recon.intrinsics, pix)
        P = np.array([np.hstack([recon.poses[f].R, recon.poses[f].t[:, None]]) for f in frames])
        centers = np.array([recon.poses[f].center for f in frames])
        min_angle = math.radians(opts.min_triangulation_angle_deg)
        k = len(frames)
        ia, ib = np.triu_indices(k, 1)
        cand = triangulate_normalized(P[np.stack([ia, ib], 1)], np.stack([nrm[ia], nrm[ib]], 1))
        pair_ang = np.array([
            pair_angles(centers[a], centers[b], X[None])[0] if np.all(np.isfinite(X)) else 0.0
            for a, b, X in zip(ia, ib, cand)])
        best = None
        for order in np.argsort(-pair_ang, kind="stable"):
            if pair_ang[order] < min_angle:
                break
            good = self._consistent(cand[order], frames, pix)
            if good[ia[order]] and good[ib[order]] and (best is None or good.sum() > best[1].sum()):
                best = (cand[order], good)
                if good.all():
                    break
        if best is None:
            return False
        X, good = best
        for _ in range(2):
            X_ref = triangulate_normalized(P[good], nrm[good])
            if not np.all(np.isfinite(X_ref)):
                break
            good_ref = self._consistent(X_ref, frames, pix)
            if good_ref.sum() < good.sum():
                break
            X, good = X_ref, good_ref
        cg = centers[good]
        rays = X - cg
        rays /= np.linalg.norm(rays, axis=1, keepdims=True)
        if np.arccos(np.clip((rays @ rays.T).min(), -1.0, 1.0)) < min_angle:
            return False
        self.add_point(tid, X, [f for f, g in zip(frames, good) if g])
        return True

    def _consistent(self, X, frames, pix) -> np.ndarray:
        poses = self.recon.poses
        R = np.array([poses[f].R for f in frames])
        t = np.array([poses[f].t for f in frames])
        return self._reproj_ok(R, t, np.broadcast_to(X, (len(frames), 3)), pix)

    def _reproj_ok(self, R, t, X, uv) -> np.ndarray:
        intr = self.recon.intrinsics
        proj, z, *_ = project_with_jacobians(R, t, X, intr.focal, intr.k1, np.array([intr.cx, intr.cy]), False)
        err = np.linalg.norm(proj - uv, axis=1)
        return (z > 0) & (err <= self.opts.filter_threshold_px)

    # --- filtering ---

    def filter_points(self, pids=None) -> int:
        """Drop observations beyond the reprojection threshold and points left with < 2 views."""
        recon = self.recon
        pids = list(recon.points) if pids is None else [p for p in pids if p in recon.points]
        if not pids:
            return 0
        obs = [(pid, o) for pid in pids for o in recon.observations[pid]]
        R = np.array([recon.poses[o.frame].R for _, o in obs])
        t = np.array([recon.poses[o.frame].t for _, o in obs])
        X = np.array([recon.points[pid] for pid, _ in obs])
        uv = np.array([(o.u, o.v) for _, o in obs])
        ok = self._reproj_ok(R, t, X, uv)
        kept: dict[int, list[Observation]] = {pid: [] for pid in pids}
        for (pid, o), good in zip(obs, ok):
            if good:
                kept[pid].append(o)
        removed = 0
        for pid in pids:
            if len(kept[pid]) < 2:
                self.drop_point(pid)
                removed += 1
            else:
                recon.observations[pid] = kept[pid]
        return removed

    def filter_all(self) -> int:
        recon = self.recon
        if not recon.points:
            return 0
        errors, pids, _ = observation_errors(recon)
        bad = set(pids[~(errors <= self.opts.filter_threshold_px)].tolist())
        return self.filter_points(sorted(bad)) if bad else 0

    # --- bundle adjustment ---

    def local_ba(self, frame: int) -> None:
        recon = self.recon
        shared: dict[int, int] = {}
        window_points = set()
        for tid in self.frame_tracks.get(frame, []):
            pid = self.track_point.get(tid)
            if pid is None:
                continue
            window_points.add(pid)
            for o in recon.observations[pid]:
                if o.frame != frame:
                    shared[o.frame] = shared.get(o.frame, 0) + 1
        neighbors = sorted(shared, key=lambda f: (-shared[f], f))[: self.opts.local_ba_neighbors]
        frames = [frame] + neighbors
        for f in neighbors:
            for tid in self.frame_tracks.get(f, []):
                pid = self.track_point.get(tid)
                if pid is not None:
                    window_points.add(pid)
        self.recon = bundle_adjust(recon, self.opts.bundle, True, variable_frames=frames,
                                   variable_points=sorted(window_points))
        self.filter_points(sorted(window_points))

    def global_ba(self, refine_intrinsics: bool = False) -> None:
        bopts = self.opts.bundle
        if refine_intrinsics:
            bopts = BundleOptions(**{**asdict(bopts), "refine_intrinsics": True})
        self.recon = bundle_adjust(self.recon, bopts, True)
        self.filter_all()


def _normalized(intr: CameraIntrinsics, kp: np.ndarray) -> np.ndarray:
    return undistort_points(intr, kp)


def _pair_correspondences(tracks, fa: int, fb: int) -> np.ndarray:
    return np.array([(tr[fa], tr[fb]) for tr in tracks if fa in tr and fb in tr], dtype=np.int64).reshape(-1, 2)


def _choose_initial_pair(state: _State):
    opts, intr, tracks = state.opts, state.recon.intrinsics, state.tracks
    counts: dict = {}
    for tr in tracks:
        fs = sorted(tr)
        for i in range(len(fs)):
            for j in range(i + 1, len(fs)):
                counts[(fs[i], fs[j])] = counts.get((fs[i], fs[j]), 0) + 1
    pairs = [p for p, c in counts.items() if c >= opts.min_init_matches]
    pairs.sort(key=lambda p: (-counts[p], p))
    best = None
    for fa, fb in pairs[: opts.init_candidates]:
        if best is not None and counts[(fa, fb)] <= best[0]:
            break  # cannot beat the current inlier count
        corr = _pair_correspondences(tracks, fa, fb)
        x1 = _normalized(intr, state.kp[fa][corr[:, 0]])
        x2 = _normalized(intr, state.kp[fb][corr[:, 1]])
        try:
            E, mask = estimate_essential_ransac(x1, x2, opts.essential_threshold_px / intr.focal,
                                                opts.ransac_confidence, seed=state.seed)
            pose = decompose_essential(E, x1[mask], x2[mask])
        except (EstimationError, DegenerateConfigurationError):
            continue
        X = triangulate_pairs(Pose.identity(), pose, x1[mask], x2[mask])
        finite = np.all(np.isfinite(X), axis=1)
        angles = pair_angles(np.zeros(3), pose.center, X[finite])
        if len(angles) == 0 or np.degrees(np.median(angles)) < opts.init_min_median_angle_deg:
            continue
        n_in = int(mask.sum())
        if best is None or n_in > best[0]:
            best = (n_in, fa, fb, pose)
    if best is None:
        raise ReconstructionError("no frame pair qualifies for initialisation")
    return best[1], best[2], best[3]


def reconstruct_incremental(keypoints: dict[int, np.ndarray], matches: dict, intrinsics: CameraIntrinsics,
                            options: IncrementalOptions | None = None, seed: int = 0,
                            colors: dict[int, np.ndarray] | None = None) -> Reconstruction:
    """Grow a reconstruction from per-frame keypoint locations and pairwise matches.

    ``keypoints`` maps frame id to an (n, 2) pixel array; ``matches`` maps
    ``(frame_a, frame_b)`` to (m, 2) feature index pairs.  ``colors``
    optionally maps frame id to an (n, 3) per-feature color array.
    """
    opts = options or IncrementalOptions()
    keypoints = {int(f): np.asarray(k, dtype=np.float64).reshape(-1, 2) for f, k in keypoints.items()}
    tracks = build_tracks(matches)
    if not tracks:
        raise ReconstructionError("no feature tracks: the match graph is empty")
    state = _State(keypoints, tracks, intrinsics, opts, seed)
    fa, fb, pose_b = _choose_initial_pair(state)
    recon = state.recon
    recon.poses[fa] = Pose.identity()
    recon.poses[fb] = pose_b
    recon.gauge = (fa, fb)
    for tid in state.frame_tracks[fa]:
        if fb in tracks[tid]:
            state.triangulate_track(tid)
    if len(recon.points) < 2:
        raise ReconstructionError(f"initial pair ({fa}, {fb}) yields too few points")
    state.global_ba()
    log.info("initialised from frames %d and %d with %d points", fa, fb, len(state.recon.points))

    since_global = 0
    failed: set[int] = set()
    while True:
        recon = state.recon
        visible = {}
        for f in keypoints:
            if f in recon.poses:
                continue
            visible[f] = sum(1 for tid in state.frame_tracks.get(f, []) if tid in state.track_point)
        candidates = sorted((f for f in visible if visible[f] >= opts.pnp_min_inliers and f not in failed),
                            key=lambda f: (-visible[f], f))
        registered = None
        for f in candidates:
            tids = [tid for tid in state.frame_tracks[f] if tid in state.track_point]
            X = np.array([recon.points[state.track_point[tid]] for tid in tids])
            pix = np.array([keypoints[f][tracks[tid][f]] for tid in tids])
            try:
                pose, mask = solve_pnp_ransac(X, pix, recon.intrinsics, opts.pnp_threshold_px,
                                              opts.ransac_confidence, seed=seed, min_inliers=opts.pnp_min_inliers)
            except RegistrationError:
                failed.add(f)
                continue
            if mask.sum() < opts.pnp_min_inliers:
                failed.add(f)
                continue
            registered = (f, pose, [t for t, m in zip(tids, mask) if m])
            break
        if registered is None:
            break
        f, pose, inlier_tids = registered
        recon.poses[f] = pose
        for tid in inlier_tids:
            pid = state.track_point[tid]
            u, v = keypoints[f][tracks[tid][f]]
            recon.observations[pid].append(Observation(f, tracks[tid][f], float(u), float(v)))
        for tid in state.frame_tracks[f]:
            if tid not in state.track_point:
                state.triangulate_track(tid)
        state.local_ba(f)
        failed.clear()  # new points may make earlier failures registrable
        since_global += 1
        if since_global >= opts.global_ba_every:
            state.global_ba()
            since_global = 0
        log.info("registered frame %d (%d/%d frames, %d points)", f, len(state.recon.poses), len(keypoints),
                 len(state.recon.points))

    state.global_ba(refine_intrinsics=opts.refine_intrinsics)
    # retriangulate tracks that failed earlier, now that poses are refined
    added = [tid for tid in range(len(tracks)) if tid not in state.track_point and state.triangulate_track(tid)]
    if added:
        state.global_ba(refine_intrinsics=opts.refine_intrinsics)
    recon = state.recon
    if colors is not None:
        for pid, obs in recon.observations.items():
            cols = np.array([colors[o.frame][o.feature] for o in obs], dtype=np.float64)
            recon.colors[pid] = tuple(int(c) for c in np.clip(np.round(cols.mean(axis=0)), 0, 255))
    recon.validate()
    return recon
