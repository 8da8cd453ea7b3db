"""Sparse reconstruction container, serialisation and reprojection statistics."""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .. import ply
from .camera import CameraIntrinsics, Pose, project_points


class Observation(NamedTuple):
    frame: int
    feature: int
    u: float
    v: float


@dataclass
class Reconstruction:
    intrinsics: CameraIntrinsics
    poses: dict[int, Pose] = field(default_factory=dict)
    points: dict[int, np.ndarray] = field(default_factory=dict)
    colors: dict[int, tuple[int, int, int]] = field(default_factory=dict)
    observations: dict[int, list[Observation]] = field(default_factory=dict)
    gauge: tuple[int, int] | None = None

    def copy(self) -> "Reconstruction":
        return Reconstruction(
            self.intrinsics,
            dict(self.poses),
            {k: v.copy() for k, v in self.points.items()},
            dict(self.colors),
            {k: list(v) for k, v in self.observations.items()},
            self.gauge,
        )

    @property
    def n_observations(self) -> int:
        return sum(len(v) for v in self.observations.values())

    def add_point(self, X, observations, color=(128, 128, 128)) -> int:
        pid = max(self.points, default=-1) + 1
        self.points[pid] = np.asarray(X, dtype=np.float64).reshape(3).copy()
        self.observations[pid] = list(observations)
        self.colors[pid] = tuple(int(c) for c in color)
        return pid

    def remove_point(self, pid: int) -> None:
        self.points.pop(pid, None)
        self.observations.pop(pid, None)
        self.colors.pop(pid, None)

    def observations_per_frame(self) -> dict[int, int]:
        counts = {f: 0 for f in self.poses}
        for obs in self.observations.values():
            for o in obs:
                counts[o.frame] = counts.get(o.frame, 0) + 1
        return counts

    def validate(self) -> None:
        seen = set()
        for pid, obs in self.observations.items():
            if pid not in self.points:
                raise ValueError(f"observations for unknown point {pid}")
            if len(obs) < 2:
                raise ValueError(f"point {pid} has {len(obs)} observation(s)")
            for o in obs:
                if o.frame not in self.poses:
                    raise ValueError(f"point {pid} observed in unregistered frame {o.frame}")
                key = (o.frame, o.feature)
                if key in seen:
                    raise ValueError(f"duplicate observation {key}")
                seen.add(key)
        missing = set(self.points) - set(self.observations)
        if missing:
            raise ValueError(f"points without observations: {sorted(missing)[:5]}")

    def point_array(self) -> tuple[np.ndarray, np.ndarray]:
        ids = np.array(sorted(self.points), dtype=np.int64)
        xyz = np.array([self.points[i] for i in ids]).reshape(-1, 3)
        return ids, xyz

    def color_array(self, ids) -> np.ndarray:
        return np.array([self.colors.get(int(i), (128, 128, 128)) for i in ids], dtype=np.uint8).reshape(-1, 3)

    def apply_similarity(self, scale: float, R: np.ndarray, t: np.ndarray) -> "Reconstruction":
        """Map world coordinates by ``X -> scale * R @ X + t``; reprojections are unchanged."""
        out = self.copy()
        out.points = {k: scale * R @ X + t for k, X in self.points.items()}
        poses = {}
        for f, p in self.poses.items():
            Rn = p.R @ R.T
            poses[f] = Pose.from_rt(Rn, scale * p.t - Rn @ t)
        out.poses = poses
        return out

    # --- serialisation ---

    def to_dict(self) -> dict:
        return {
            "intrinsics": self.intrinsics.to_dict(),
            "gauge": list(self.gauge) if self.gauge else None,
            "frames": {str(f): self.poses[f].to_dict() for f in sorted(self.poses)},
            "points": [
                {
                    "id": int(pid),
                    "xyz": self.points[pid].tolist(),
                    "color": list(self.colors.get(pid, (128, 128, 128))),
                    "observations": [[o.frame, o.feature, o.u, o.v] for o in self.observations.get(pid, [])],
                }
                for pid in sorted(self.points)
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Reconstruction":
        rec = cls(CameraIntrinsics.from_dict(d["intrinsics"]))
        rec.gauge = tuple(d["gauge"]) if d.get("gauge") else None
        rec.poses = {int(f): Pose.from_dict(p) for f, p in d["frames"].items()}
        for p in d["points"]:
            pid = int(p["id"])
            rec.points[pid] = np.array(p["xyz"], dtype=np.float64)
            rec.colors[pid] = tuple(p["color"])
            rec.observations[pid] = [Observation(int(f), int(i), float(u), float(v)) for f, i, u, v in p["observations"]]
        return rec

    def save_json(self, path: "str | os.PathLike") -> None:
        Path(path).write_text(json.dumps(self.to_dict(), sort_keys=True) + "\n")

    @classmethod
    def load_json(cls, path: "str | os.PathLike") -> "Reconstruction":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def save_ply(self, path: "str | os.PathLike") -> None:
        ids, xyz = self.point_array()
        ply.write_point_cloud(path, xyz, self.color_array(ids))


@dataclass
class ReprojectionStats:
    mean: float
    rmse: float
    max: float
    count: int
    per_frame: dict[int, dict[str, float]]
    empty: bool = False


def observation_errors(recon: Reconstruction) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-observation pixel errors with their point ids and frame ids."""
    errs, pids, frames = [], [], []
    by_frame: dict[int, list[tuple[int, Observation]]] = {}
    for pid, obs in recon.observations.items():
        for o in obs:
            by_frame.setdefault(o.frame, []).append((pid, o))
    for f in sorted(by_frame):
        items = by_frame[f]
        X = np.array([recon.points[pid] for pid, _ in items])
        uv = np.array([(o.u, o.v) for _, o in items])
        proj, z = project_points(recon.intrinsics, recon.poses[f], X)
        e = np.linalg.norm(proj - uv, axis=1)
        e[~(z > 0)] = np.inf
        errs.append(e)
        pids.append([pid for pid, _ in items])
        frames.append(np.full(len(items), f))
    if not errs:
        return np.zeros(0), np.zeros(0, np.int64), np.zeros(0, np.int64)
    return np.concatenate(errs), np.concatenate(pids).astype(np.int64), np.concatenate(frames).astype(np.int64)


def reprojection_stats(recon: Reconstruction) -> ReprojectionStats:
    errs, _, frames = observation_errors(recon)
    if len(errs) == 0:
        nan = float("nan")
        return ReprojectionStats(nan, nan, nan, 0, {}, empty=True)
    per_frame = {}
    for f in np.unique(frames):
        e = errs[frames == f]
        per_frame[int(f)] = {"count": int(len(e)), "mean": float(e.mean()),
                             "rmse": float(np.sqrt(np.mean(e ** 2))), "max": float(e.max())}
    return ReprojectionStats(float(errs.mean()), float(np.sqrt(np.mean(errs ** 2))), float(errs.max()),
                             int(len(errs)), per_frame)
