"""Simple-radial pinhole camera, rigid poses and rotation helpers.

Poses map world to camera: ``x_cam = R @ X + t``.  Rotations are stored as
unit quaternions ``(w, x, y, z)``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import BehindCameraError


def skew(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    out = np.zeros(v.shape[:-1] + (3, 3))
    out[..., 0, 1], out[..., 0, 2] = -v[..., 2], v[..., 1]
    out[..., 1, 0], out[..., 1, 2] = v[..., 2], -v[..., 0]
    out[..., 2, 0], out[..., 2, 1] = -v[..., 1], v[..., 0]
    return out


def so3_exp(w: np.ndarray) -> np.ndarray:
    """Rodrigues' formula, vectorised over leading axes."""
    w = np.asarray(w, dtype=np.float64)
    theta = np.linalg.norm(w, axis=-1)[..., None, None]
    K = skew(w)
    small = theta < 1e-8
    th = np.where(small, 1.0, theta)
    a = np.where(small, 1.0 - theta ** 2 / 6.0, np.sin(th) / th)
    b = np.where(small, 0.5 - theta ** 2 / 24.0, (1.0 - np.cos(th)) / th ** 2)
    return np.eye(3) + a * K + b * (K @ K)


def so3_log(R: np.ndarray) -> np.ndarray:
    R = np.asarray(R, dtype=np.float64)
    cos = np.clip((np.trace(R) - 1.0) / 2.0, -1.0, 1.0)
    theta = np.arccos(cos)
    v = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    if theta < 1e-8:
        return 0.5 * v
    if np.pi - theta < 1e-6:
        # axis from the symmetric part
        B = (R + np.eye(3)) / 2.0
        axis = np.sqrt(np.clip(np.diag(B), 0.0, None))
        i = int(np.argmax(axis))
        axis = B[i] / np.sqrt(B[i, i])
        return theta * axis / np.linalg.norm(axis)
    return theta / (2.0 * np.sin(theta)) * v


def rotation_angle(Ra: np.ndarray, Rb: np.ndarray) -> float:
    """Geodesic distance between two rotations, radians."""
    cos = (np.trace(Ra.T @ Rb) - 1.0) / 2.0
    return float(np.arccos(np.clip(cos, -1.0, 1.0)))


def quat_to_rot(q: np.ndarray) -> np.ndarray:
    w, x, y, z = np.asarray(q, dtype=np.float64) / np.linalg.norm(q)
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def rot_to_quat(R: np.ndarray) -> np.ndarray:
    """Shepperd's method; returns the representative with w >= 0."""
    R = np.asarray(R, dtype=np.float64)
    tr = np.trace(R)
    diag = np.diag(R)
    i = int(np.argmax([tr, *diag]))
    if i == 0:
        s = np.sqrt(1.0 + tr) * 2
        q = np.array([0.25 * s, (R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s])
    elif i == 1:
        s = np.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2]) * 2
        q = np.array([(R[2, 1] - R[1, 2]) / s, 0.25 * s, (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s])
    elif i == 2:
        s = np.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2]) * 2
        q = np.array([(R[0, 2] - R[2, 0]) / s, (R[0, 1] + R[1, 0]) / s, 0.25 * s, (R[1, 2] + R[2, 1]) / s])
    else:
        s = np.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1]) * 2
        q = np.array([(R[1, 0] - R[0, 1]) / s, (R[0, 2] + R[2, 0]) / s, (R[1, 2] + R[2, 1]) / s, 0.25 * s])
    q /= np.linalg.norm(q)
    return -q if q[0] < 0 else q


def nearest_rotation(M: np.ndarray) -> np.ndarray:
    U, _, Vt = np.linalg.svd(M)
    R = U @ Vt
    if np.linalg.det(R) < 0:
        U[:, -1] *= -1
        R = U @ Vt
    return R


@dataclass(frozen=True)
class CameraIntrinsics:
    focal: float
    cx: float
    cy: float
    k1: float = 0.0

    def __post_init__(self):
        if not self.focal > 0:
            raise ValueError("focal length must be positive")

    @classmethod
    def default_for(cls, width: int, height: int) -> "CameraIntrinsics":
        """Self-calibration seed: focal 1.1 * max(w, h), centred principal point, no distortion."""
        return cls(1.1 * max(width, height), width / 2.0, height / 2.0, 0.0)

    def to_dict(self) -> dict:
        return {"focal": self.focal, "cx": self.cx, "cy": self.cy, "k1": self.k1}

    @classmethod
    def from_dict(cls, d: dict) -> "CameraIntrinsics":
        return cls(float(d["focal"]), float(d["cx"]), float(d["cy"]), float(d.get("k1", 0.0)))


@dataclass(frozen=True, eq=False)
class Pose:
    """World-to-camera rigid transform with a unit-quaternion rotation."""

    q: np.ndarray
    t: np.ndarray

    def __post_init__(self):
        q = np.asarray(self.q, dtype=np.float64).reshape(4)
        n = np.linalg.norm(q)
        if not n > 0:
            raise ValueError("quaternion must be non-zero")
        q = q / n
        if q[0] < 0:
            q = -q
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "t", np.asarray(self.t, dtype=np.float64).reshape(3).copy())

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.array([1.0, 0, 0, 0]), np.zeros(3))

    @classmethod
    def from_rt(cls, R: np.ndarray, t: np.ndarray) -> "Pose":
        return cls(rot_to_quat(R), t)

    @classmethod
    def look_at(cls, center, target, up=(0.0, 0.0, 1.0)) -> "Pose":
        """Camera at ``center`` with optical axis towards ``target`` (image y points away from ``up``)."""
        center = np.asarray(center, dtype=np.float64)
        z = np.asarray(target, dtype=np.float64) - center
        z /= np.linalg.norm(z)
        x = np.cross(z, np.asarray(up, dtype=np.float64))
        if np.linalg.norm(x) < 1e-9:
            x = np.cross(z, [1.0, 0.0, 0.0])
        x /= np.linalg.norm(x)
        y = np.cross(z, x)
        R = np.stack([x, y, z])
        return cls.from_rt(R, -R @ center)

    @property
    def R(self) -> np.ndarray:
        return quat_to_rot(self.q)

    @property
    def center(self) -> np.ndarray:
        return -self.R.T @ self.t

    def transform(self, X: np.ndarray) -> np.ndarray:
        return np.asarray(X, dtype=np.float64) @ self.R.T + self.t

    def __eq__(self, other):
        return isinstance(other, Pose) and np.array_equal(self.q, other.q) and np.array_equal(self.t, other.t)

    def __repr__(self):
        return f"Pose(q={np.round(self.q, 6).tolist()}, t={np.round(self.t, 6).tolist()})"

    def to_dict(self) -> dict:
        return {"q": self.q.tolist(), "t": self.t.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "Pose":
        return cls(np.array(d["q"]), np.array(d["t"]))


def distort(intr: CameraIntrinsics, n: np.ndarray) -> np.ndarray:
    n = np.asarray(n, dtype=np.float64)
    r2 = np.sum(n * n, axis=-1, keepdims=True)
    return intr.focal * (1.0 + intr.k1 * r2) * n + np.array([intr.cx, intr.cy])


def project(intr: CameraIntrinsics, pose: Pose, X) -> np.ndarray:
    """Pixel of world point ``X``; raises BehindCameraError for non-positive depth."""
    xc = pose.transform(np.asarray(X, dtype=np.float64).reshape(3))
    if not xc[2] > 0:
        raise BehindCameraError(f"point at depth {xc[2]:.6g} is not in front of the camera")
    return distort(intr, xc[:2] / xc[2])


def project_points(intr: CameraIntrinsics, pose: Pose, X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised projection returning pixels and camera-frame depths (no depth check)."""
    xc = pose.transform(np.asarray(X, dtype=np.float64).reshape(-1, 3))
    z = xc[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        n = xc[:, :2] / z[:, None]
    return distort(intr, n), z


def undistort_points(intr: CameraIntrinsics, pix: np.ndarray, iterations: int = 30) -> np.ndarray:
    """Normalised image coordinates of pixels (inverse of the radial model by Newton iteration)."""
    pix = np.asarray(pix, dtype=np.float64).reshape(-1, 2)
    m = (pix - np.array([intr.cx, intr.cy])) / intr.focal
    if intr.k1 == 0.0:
        return m
    rd = np.linalg.norm(m, axis=1)
    r = rd.copy()
    for _ in range(iterations):
        f = r + intr.k1 * r ** 3 - rd
        df = 1.0 + 3.0 * intr.k1 * r ** 2
        r = r - f / np.where(np.abs(df) < 1e-12, 1e-12, df)
    scale = np.ones_like(rd)
    nz = rd > 0
    scale[nz] = r[nz] / rd[nz]
    return m * scale[:, None]


def bearings(intr: CameraIntrinsics, pix: np.ndarray) -> np.ndarray:
    n = undistort_points(intr, pix)
    b = np.column_stack([n, np.ones(len(n))])
    return b / np.linalg.norm(b, axis=1, keepdims=True)
