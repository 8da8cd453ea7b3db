"""Per-vertex coloring of meshes from registered frames and single-frame localization."""
from __future__ import annotations

import os

import numpy as np

from .. import kernels, ply
from ..imaging import RgbImage
from ..sfm.camera import CameraIntrinsics, Pose, project_points, undistort_points
from ..sfm.reconstruction import Reconstruction
from .surface import GRAY, Mesh


class TexturingError(RuntimeError):
    """No registered frame can color the mesh."""


class LocalizationError(RuntimeError):
    """The requested frame is not part of the reconstruction."""


def _occlusion_eps(mesh: Mesh) -> float:
    extent = np.ptp(mesh.vertices, axis=0).max() if len(mesh.vertices) else 1.0
    return 1e-9 * max(extent, 1e-12)


def mean_edge_length(mesh: Mesh) -> float:
    if len(mesh.faces) == 0:
        return 0.0
    e = np.unique(mesh.edges(), axis=0)
    return float(np.linalg.norm(mesh.vertices[e[:, 0]] - mesh.vertices[e[:, 1]], axis=1).mean())


def visible_vertices(mesh: Mesh, intr: CameraIntrinsics, pose: Pose, width: int, height: int,
                     normals: np.ndarray | None = None,
                     near: float | None = None) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vertices seen by a camera: in front, inside the image, not grazing, and unoccluded.

    Faces crossed within ``near`` world units of the vertex (default: the
    mean edge length) do not count as occluders, which tolerates the small
    folds of a noisy surface.  Returns ``(mask, pixels, cosines)`` where ``cosines`` is |cos| of the angle
    between the vertex normal and the ray to the camera centre.
    """
    V = mesh.vertices
    normals = mesh.vertex_normals() if normals is None else normals
    pix, z = project_points(intr, pose, V)
    inside = (z > 0) & (pix[:, 0] >= 0) & (pix[:, 0] <= width - 1) & (pix[:, 1] >= 0) & (pix[:, 1] <= height - 1)
    c = pose.center
    rays = c - V
    dist = np.linalg.norm(rays, axis=1)
    cos = np.abs(np.einsum("ij,ij->i", normals, rays)) / np.maximum(dist, 1e-300)
    cand = inside & (cos > 1e-6)
    idx = np.flatnonzero(cand)
    if len(idx) and len(mesh.faces):
        F = mesh.faces
        v0 = V[F[:, 0]]
        e1 = V[F[:, 1]] - v0
        e2 = V[F[:, 2]] - v0
        occ = kernels.segments_occluded(np.ascontiguousarray(c), np.ascontiguousarray(V[idx]),
                                        np.ascontiguousarray(idx.astype(np.int64)), np.ascontiguousarray(v0),
                                        np.ascontiguousarray(e1), np.ascontiguousarray(e2),
                                        np.ascontiguousarray(F), _occlusion_eps(mesh),
                                        mean_edge_length(mesh) if near is None else float(near))
        cand[idx[np.asarray(occ, dtype=bool)]] = False
    return cand, pix, cos


def sample_bilinear(img: RgbImage, pix: np.ndarray) -> np.ndarray:
    """RGB at subpixel positions (pixel centres at integer coordinates), clamped to the image."""
    data = img.data.astype(np.float64)
    h, w = data.shape[:2]
    x = np.clip(pix[:, 0], 0, w - 1)
    y = np.clip(pix[:, 1], 0, h - 1)
    x0 = np.minimum(np.floor(x).astype(np.int64), w - 1)
    y0 = np.minimum(np.floor(y).astype(np.int64), h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = (x - x0)[:, None]
    fy = (y - y0)[:, None]
    top = data[y0, x0] * (1 - fx) + data[y0, x1] * fx
    bot = data[y1, x0] * (1 - fx) + data[y1, x1] * fx
    return np.clip(np.floor(top * (1 - fy) + bot * fy + 0.5), 0, 255).astype(np.uint8)


def texture_mesh(mesh: Mesh, recon: Reconstruction, images: dict[int, RgbImage]) -> Mesh:
    """Color each vertex from the registered frame that sees it most frontally.

    Frames are compared by |cos| between the vertex normal and the ray to the
    camera; ties go to the lower frame id.  Unseen vertices are gray.
    """
    frames = sorted(f for f in recon.poses if f in images)
    if not frames:
        raise TexturingError("no registered frame has an image for texturing")
    normals = mesh.vertex_normals()
    best_cos = np.full(len(mesh.vertices), -1.0)
    colors = np.tile(np.array(GRAY, np.uint8), (len(mesh.vertices), 1))
    for f in frames:
        img = images[f]
        vis, pix, cos = visible_vertices(mesh, recon.intrinsics, recon.poses[f], img.width, img.height, normals)
        better = vis & (cos > best_cos)
        if np.any(better):
            colors[better] = sample_bilinear(img, pix[better])
            best_cos[better] = cos[better]
    return mesh.with_colors(colors)


def frustum(intr: CameraIntrinsics, pose: Pose, width: int, height: int, depth: float):
    """Camera pyramid: apex plus the four image corners at ``depth``; faces are the four sides."""
    corners = np.array([[0, 0], [width - 1, 0], [width - 1, height - 1], [0, height - 1]], dtype=np.float64)
    n = undistort_points(intr, corners)
    cam = np.column_stack([n * depth, np.full(4, depth)])
    R = pose.R
    world = (cam - pose.t) @ R  # R^T (x - t)
    verts = np.vstack([pose.center[None], world])
    faces = np.array([[0, 1, 2], [0, 2, 3], [0, 3, 4], [0, 4, 1]], dtype=np.int64)
    return verts, faces


def localize_frame(recon: Reconstruction, mesh: Mesh, frame_id: int, rgb: RgbImage,
                   out_path: "str | os.PathLike | None" = None,
                   frustum_color=(0, 0, 255)) -> tuple[Mesh, Pose]:
    """Paint the frame's image onto the mesh vertices it sees; return the recolored mesh and its pose.

    With ``out_path`` a PLY is written containing the recolored mesh followed
    by a five-vertex camera pyramid.
    """
    if frame_id not in recon.poses:
        raise LocalizationError(f"frame {frame_id} is not registered in the reconstruction")
    pose = recon.poses[frame_id]
    vis, pix, _ = visible_vertices(mesh, recon.intrinsics, pose, rgb.width, rgb.height)
    colors = mesh.colors.copy()
    if np.any(vis):
        colors[vis] = sample_bilinear(rgb, pix[vis])
    out = mesh.with_colors(colors)
    if out_path is not None:
        extent = float(np.ptp(mesh.vertices, axis=0).max()) if len(mesh.vertices) else 1.0
        fv, ff = frustum(recon.intrinsics, pose, rgb.width, rgb.height, 0.1 * extent)
        verts = np.vstack([out.vertices, fv])
        faces = np.vstack([out.faces, ff + len(out.vertices)])
        normals = np.vstack([out.vertex_normals(), np.zeros((5, 3))])
        cols = np.vstack([out.colors, np.tile(np.array(frustum_color, np.uint8), (5, 1))])
        ply.write_mesh(out_path, verts, faces, normals, cols)
    return out, pose
