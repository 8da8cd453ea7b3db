"""Synthetic ground truth: textured ellipsoid interiors seen by an orbiting camera.

Points lie exactly on the ellipsoid ``(x/a)^2 + (y/b)^2 + (z/c)^2 = 1``.  The
camera travels on an interior ellipse (a fraction of the semi-axes) looking
outwards at the wall, which mimics an endoscope inside a stomach.  Because the
surface is convex and the camera is inside it, every surface point in front
of the camera and inside the image is visible.
"""
from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .imaging import GrayImage
from .sfm.camera import CameraIntrinsics, Pose, project_points, undistort_points
from .sfm.errors import AlignmentError


@dataclass
class SyntheticScene:
    semi_axes: np.ndarray
    points: np.ndarray
    intrinsics: CameraIntrinsics
    poses: list[Pose]
    width: int
    height: int
    seed: int
    texture_seed: int
    # one row per track entry
    obs_frame: np.ndarray
    obs_point: np.ndarray
    obs_pixel: np.ndarray
    obs_true: np.ndarray
    obs_outlier: np.ndarray
    params: dict = field(default_factory=dict)

    @property
    def n_frames(self) -> int:
        return len(self.poses)

    @property
    def diameter(self) -> float:
        return 2.0 * float(np.max(self.semi_axes))

    def trajectory_diameter(self) -> float:
        c = np.array([p.center for p in self.poses])
        return float(np.max(np.linalg.norm(c[:, None] - c[None], axis=2)))

    def frame_observations(self, frame: int) -> tuple[np.ndarray, np.ndarray]:
        """Point indices and observed pixels of ``frame`` (feature index = row order)."""
        sel = self.obs_frame == frame
        return self.obs_point[sel], self.obs_pixel[sel]

    def keypoints(self) -> dict[int, np.ndarray]:
        return {f: self.frame_observations(f)[1] for f in range(self.n_frames)}

    def matches(self, min_shared: int = 1) -> dict[tuple[int, int], np.ndarray]:
        """Exact correspondences between every frame pair sharing points."""
        index = []
        for f in range(self.n_frames):
            pts, _ = self.frame_observations(f)
            index.append({int(p): i for i, p in enumerate(pts)})
        out = {}
        for a in range(self.n_frames):
            for b in range(a + 1, self.n_frames):
                common = sorted(set(index[a]) & set(index[b]))
                if len(common) >= min_shared:
                    out[(a, b)] = np.array([(index[a][p], index[b][p]) for p in common], dtype=np.int64)
        return out

    def to_dict(self) -> dict:
        return {
            "semi_axes": self.semi_axes.tolist(),
            "points": self.points.tolist(),
            "intrinsics": self.intrinsics.to_dict(),
            "poses": [p.to_dict() for p in self.poses],
            "width": self.width,
            "height": self.height,
            "seed": self.seed,
            "texture_seed": self.texture_seed,
            "observations": {
                "frame": self.obs_frame.tolist(),
                "point": self.obs_point.tolist(),
                "pixel": self.obs_pixel.tolist(),
                "true": self.obs_true.tolist(),
                "outlier": self.obs_outlier.astype(int).tolist(),
            },
            "params": self.params,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticScene":
        o = d["observations"]
        return cls(
            np.array(d["semi_axes"], dtype=np.float64),
            np.array(d["points"], dtype=np.float64).reshape(-1, 3),
            CameraIntrinsics.from_dict(d["intrinsics"]),
            [Pose.from_dict(p) for p in d["poses"]],
            int(d["width"]), int(d["height"]), int(d["seed"]), int(d["texture_seed"]),
            np.array(o["frame"], dtype=np.int64),
            np.array(o["point"], dtype=np.int64),
            np.array(o["pixel"], dtype=np.float64).reshape(-1, 2),
            np.array(o["true"], dtype=np.float64).reshape(-1, 2),
            np.array(o["outlier"], dtype=bool),
            dict(d.get("params", {})),
        )

    def save_json(self, path: "str | os.PathLike") -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def load_json(cls, path: "str | os.PathLike") -> "SyntheticScene":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def _rotation_from_seed(rng: np.random.Generator) -> np.ndarray:
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def ellipsoid_points(n: int, semi_axes, rng: np.random.Generator) -> np.ndarray:
    """Randomly rotated Fibonacci lattice mapped onto the ellipsoid."""
    i = np.arange(n) + 0.5
    z = 1.0 - 2.0 * i / n
    r = np.sqrt(np.maximum(0.0, 1.0 - z * z))
    phi = i * math.pi * (3.0 - math.sqrt(5.0))
    u = np.column_stack([r * np.cos(phi), r * np.sin(phi), z]) @ _rotation_from_seed(rng).T
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    return u * np.asarray(semi_axes, dtype=np.float64)


def orbit_poses(n_frames: int, semi_axes, orbit_fraction: float = 0.5, sweep_deg: float = 360.0,
                tilt: float = 0.15, phase: float = 0.0) -> list[Pose]:
    """Cameras on an interior ellipse looking outwards at the wall.

    The look-at target sits on the surface ahead of the radial direction and
    bobs up and down by ``tilt`` (fraction of the vertical semi-axis).
    """
    a, b, c = semi_axes
    poses = []
    closed = abs(sweep_deg - 360.0) < 1e-9
    steps = n_frames if closed else max(n_frames - 1, 1)
    for k in range(n_frames):
        th = phase + math.radians(sweep_deg) * k / steps
        center = np.array([orbit_fraction * a * math.cos(th), orbit_fraction * b * math.sin(th),
                           0.1 * c * math.sin(2 * th)])
        d = np.array([math.cos(th + 0.3), math.sin(th + 0.3), tilt * math.sin(3 * th)])
        target = d / np.linalg.norm(d / np.array([a, b, c]))
        poses.append(Pose.look_at(center, target, up=(0.0, 0.0, 1.0)))
    return poses


def make_scene(n_points: int, n_frames: int, semi_axes=(2.0, 1.6, 1.4), noise_px: float = 0.0,
               outlier_frac: float = 0.0, seed: int = 0, width: int = 320, height: int = 240,
               focal: float | None = None, orbit_fraction: float = 0.5, sweep_deg: float = 360.0,
               texture_seed: int | None = None) -> SyntheticScene:
    """Ellipsoid scene with exact tracks, then noise and labelled outliers.

    ``focal`` defaults to half the image width (a wide endoscope-like field
    of view).  Track entries are replaced by uniformly random pixels with
    probability ``outlier_frac`` and perturbed by Gaussian noise otherwise.
    """
    if n_points < 8:
        raise ValueError("make_scene needs at least 8 points")
    if n_frames < 2:
        raise ValueError("make_scene needs at least 2 frames")
    if not 0.0 <= outlier_frac <= 1.0 or noise_px < 0:
        raise ValueError("outlier_frac must be in [0, 1] and noise_px non-negative")
    if width < 16 or height < 16:
        raise ValueError("image must be at least 16x16")
    semi = np.asarray(semi_axes, dtype=np.float64)
    if semi.shape != (3,) or np.any(semi <= 0):
        raise ValueError("semi_axes must be three positive lengths")
    rng = np.random.default_rng(seed)
    points = ellipsoid_points(n_points, semi, rng)
    intr = CameraIntrinsics(float(focal if focal is not None else 0.5 * width), width / 2.0, height / 2.0, 0.0)
    poses = orbit_poses(n_frames, semi, orbit_fraction, sweep_deg)

    frames, pids, true = [], [], []
    for f, pose in enumerate(poses):
        pix, z = project_points(intr, pose, points)
        vis = (z > 1e-6) & (pix[:, 0] >= 0) & (pix[:, 0] < width) & (pix[:, 1] >= 0) & (pix[:, 1] < height)
        idx = np.flatnonzero(vis)
        frames.append(np.full(len(idx), f))
        pids.append(idx)
        true.append(pix[idx])
    obs_frame = np.concatenate(frames).astype(np.int64)
    obs_point = np.concatenate(pids).astype(np.int64)
    obs_true = np.concatenate(true).reshape(-1, 2)
    n = len(obs_frame)
    outlier = rng.random(n) < outlier_frac
    noisy = obs_true + (rng.normal(0.0, noise_px, (n, 2)) if noise_px > 0 else 0.0)
    random_px = rng.uniform([0.0, 0.0], [width, height], (n, 2))
    pixel = np.where(outlier[:, None], random_px, noisy)
    pixel = np.clip(pixel, 0.0, np.nextafter([width, height], 0))
    params = {"n_points": n_points, "n_frames": n_frames, "noise_px": noise_px, "outlier_frac": outlier_frac,
              "orbit_fraction": orbit_fraction, "sweep_deg": sweep_deg}
    return SyntheticScene(semi, points, intr, poses, width, height, seed,
                          seed if texture_seed is None else texture_seed,
                          obs_frame, obs_point, pixel, obs_true, outlier, params)


# --- procedural texture and rendering ---

def _hash3(ix, iy, iz, seed: int) -> np.ndarray:
    h = (ix.astype(np.int64).astype(np.uint64) * np.uint64(0x8DA6B343)
         ^ iy.astype(np.int64).astype(np.uint64) * np.uint64(0xD8163841)
         ^ iz.astype(np.int64).astype(np.uint64) * np.uint64(0xCB1AB31F)
         ^ np.uint64(seed & 0xFFFFFFFF) * np.uint64(0x9E3779B1)) & np.uint64(0xFFFFFFFF)
    h = h.astype(np.uint32)
    h ^= h >> np.uint32(16)
    h *= np.uint32(0x7FEB352D)
    h ^= h >> np.uint32(15)
    h *= np.uint32(0x846CA68B)
    h ^= h >> np.uint32(16)
    return h.astype(np.float64) / 4294967296.0


def value_noise3(P: np.ndarray, cell: float, seed: int) -> np.ndarray:
    """Trilinear lattice noise in [0, 1) at world positions ``P`` (n, 3)."""
    g = P / cell
    i0 = np.floor(g)
    f = g - i0
    f = f * f * (3.0 - 2.0 * f)  # smoothstep weights avoid lattice creases
    i0 = i0.astype(np.int64)
    out = np.zeros(len(P))
    for dx in (0, 1):
        wx = f[:, 0] if dx else 1.0 - f[:, 0]
        for dy in (0, 1):
            wy = f[:, 1] if dy else 1.0 - f[:, 1]
            for dz in (0, 1):
                wz = f[:, 2] if dz else 1.0 - f[:, 2]
                out += wx * wy * wz * _hash3(i0[:, 0] + dx, i0[:, 1] + dy, i0[:, 2] + dz, seed)
    return out


@dataclass(frozen=True)
class SurfaceTexture:
    """Albedo in [0, 1] as a function of surface position.

    ``amplitude`` scales all texture contrast: 1 gives a high-contrast
    mottled surface, 0.1 an almost featureless one.  ``spots`` adds explicit
    bright disks of ``spot_radius`` around the given surface points.
    """

    seed: int = 0
    amplitude: float = 1.0
    cell: float = 0.12
    octaves: int = 3
    spot_cell: float = 0.2
    spot_level: float = 0.72
    spots: tuple = ()
    spot_radius: float = 0.05

    def albedo(self, P: np.ndarray) -> np.ndarray:
        noise = np.zeros(len(P))
        total = 0.0
        for o in range(self.octaves):
            w = 0.5 ** o
            noise += w * value_noise3(P, self.cell * 0.5 ** o, self.seed + 101 * o)
            total += w
        noise /= total
        blob = value_noise3(P, self.spot_cell, self.seed + 7919)
        spot = np.clip((blob - self.spot_level) / 0.04, 0.0, 1.0)  # dark mottling
        alb = 0.55 + self.amplitude * (0.7 * (noise - 0.5) - 0.3 * spot)
        for s in self.spots:
            d = np.linalg.norm(P - np.asarray(s, dtype=np.float64), axis=1)
            alb = np.where(d <= self.spot_radius, 1.0, alb)
        return np.clip(alb, 0.0, 1.0)


def _ray_ellipsoid(origin: np.ndarray, dirs: np.ndarray, semi: np.ndarray) -> np.ndarray:
    """Smallest positive ray parameter hitting the ellipsoid (inf when missed)."""
    o = origin / semi
    d = dirs / semi
    A = np.sum(d * d, axis=1)
    B = 2.0 * d @ o
    C = float(o @ o) - 1.0
    disc = B * B - 4.0 * A * C
    ok = disc >= 0
    sq = np.sqrt(np.where(ok, disc, 0.0))
    t1 = (-B - sq) / (2 * A)
    t2 = (-B + sq) / (2 * A)
    t = np.where(t1 > 1e-9, t1, np.where(t2 > 1e-9, t2, np.inf))
    return np.where(ok, t, np.inf)


def render_view(scene: SyntheticScene, frame: int, texture: SurfaceTexture | None = None,
                supersample: int = 2) -> GrayImage:
    """Ray-cast one frame of the textured ellipsoid; background is black."""
    texture = texture or SurfaceTexture(seed=scene.texture_seed)
    pose = scene.poses[frame]
    intr = scene.intrinsics
    s = int(supersample)
    offs = (np.arange(s) + 0.5) / s - 0.5
    xs = (np.arange(scene.width)[:, None] + offs[None]).reshape(-1)
    ys = (np.arange(scene.height)[:, None] + offs[None]).reshape(-1)
    gx, gy = np.meshgrid(xs, ys)
    pix = np.column_stack([gx.reshape(-1), gy.reshape(-1)])
    nrm = undistort_points(intr, pix) if intr.k1 != 0 else (pix - [intr.cx, intr.cy]) / intr.focal
    dirs_cam = np.column_stack([nrm, np.ones(len(nrm))])
    R = pose.R
    dirs = dirs_cam @ R  # camera-to-world rotation is R^T
    origin = pose.center
    t = _ray_ellipsoid(origin, dirs, scene.semi_axes)
    hit = np.isfinite(t)
    val = np.zeros(len(t))
    if np.any(hit):
        P = origin + t[hit, None] * dirs[hit]
        normal = P / scene.semi_axes ** 2
        normal /= np.linalg.norm(normal, axis=1, keepdims=True)
        d = dirs[hit] / np.linalg.norm(dirs[hit], axis=1, keepdims=True)
        cos = np.abs(np.sum(normal * d, axis=1))
        dist = t[hit] * np.linalg.norm(dirs[hit], axis=1)
        light = (0.35 + 0.65 * cos) / (1.0 + 0.15 * dist * dist)  # headlight with falloff
        val[hit] = texture.albedo(P) * light
    img = val.reshape(scene.height, s, scene.width, s).mean(axis=(1, 3)) if s > 1 else val.reshape(scene.height,
                                                                                                   scene.width)
    return GrayImage(np.clip(np.floor(img * 255.0 + 0.5), 0, 255).astype(np.uint8))


def render_views(scene: SyntheticScene, texture: SurfaceTexture | None = None,
                 supersample: int = 2) -> list[GrayImage]:
    return [render_view(scene, f, texture, supersample) for f in range(scene.n_frames)]


@dataclass(frozen=True)
class Similarity:
    scale: float
    rotation: np.ndarray
    translation: np.ndarray
    rmse: float

    def apply(self, X: np.ndarray) -> np.ndarray:
        return self.scale * np.asarray(X) @ self.rotation.T + self.translation


def umeyama(src: np.ndarray, dst: np.ndarray) -> tuple[float, np.ndarray, np.ndarray]:
    """Least-squares similarity with ``dst ~ s R src + t``."""
    mu_s, mu_d = src.mean(axis=0), dst.mean(axis=0)
    xs, xd = src - mu_s, dst - mu_d
    cov = xd.T @ xs / len(src)
    U, S, Vt = np.linalg.svd(cov)
    D = np.eye(3)
    if np.linalg.det(U) * np.linalg.det(Vt) < 0:
        D[2, 2] = -1.0
    R = U @ D @ Vt
    var_s = np.mean(np.sum(xs * xs, axis=1))
    scale = float(np.trace(np.diag(S) @ D) / var_s) if var_s > 0 else 1.0
    return scale, R, mu_d - scale * R @ mu_s


def align_similarity(recon_poses: dict, gt_poses) -> Similarity:
    """Align reconstructed camera centres onto ground truth; RMSE in ground-truth units.

    ``gt_poses`` may be a dict or a list indexed by frame id.
    """
    gt = dict(enumerate(gt_poses)) if isinstance(gt_poses, (list, tuple)) else dict(gt_poses)
    common = sorted(set(recon_poses) & set(gt))
    if len(common) < 3:
        raise AlignmentError(f"similarity alignment needs 3 common frames, got {len(common)}")
    src = np.array([recon_poses[f].center for f in common])
    dst = np.array([gt[f].center for f in common])
    scale, R, t = umeyama(src, dst)
    res = scale * src @ R.T + t - dst
    rmse = float(np.sqrt(np.mean(np.sum(res * res, axis=1))))
    return Similarity(scale, R, t, rmse)
