"""Binary little-endian PLY writer/reader for point clouds and triangle meshes."""
from __future__ import annotations

import os
from pathlib import Path

import numpy as np

_POINT = np.dtype([("x", "<f4"), ("y", "<f4"), ("z", "<f4"), ("red", "u1"), ("green", "u1"), ("blue", "u1")])
_VERTEX = np.dtype([("x", "<f4"), ("y", "<f4"), ("z", "<f4"), ("nx", "<f4"), ("ny", "<f4"), ("nz", "<f4"),
                    ("red", "u1"), ("green", "u1"), ("blue", "u1")])
_FACE = np.dtype([("n", "u1"), ("v", "<i4", (3,))])
_TYPES = {"f4": "float", "u1": "uchar", "i4": "int"}


def _header(vertex_dtype: np.dtype, n_vertices: int, n_faces: int | None) -> bytes:
    lines = ["ply", "format binary_little_endian 1.0", "comment vicsfm", f"element vertex {n_vertices}"]
    for name in vertex_dtype.names:
        lines.append(f"property {_TYPES[vertex_dtype[name].str[1:]]} {name}")
    if n_faces is not None:
        lines += [f"element face {n_faces}", "property list uchar int vertex_indices"]
    lines.append("end_header")
    return ("\n".join(lines) + "\n").encode("ascii")


def write_point_cloud(path: "str | os.PathLike", xyz: np.ndarray, rgb: np.ndarray | None = None) -> None:
    xyz = np.asarray(xyz, dtype=np.float64).reshape(-1, 3)
    rec = np.zeros(len(xyz), dtype=_POINT)
    rec["x"], rec["y"], rec["z"] = xyz.T
    rgb = np.full((len(xyz), 3), 128, np.uint8) if rgb is None else np.asarray(rgb, dtype=np.uint8).reshape(-1, 3)
    rec["red"], rec["green"], rec["blue"] = rgb.T
    Path(path).write_bytes(_header(_POINT, len(rec), None) + rec.tobytes())


def write_mesh(path: "str | os.PathLike", vertices: np.ndarray, faces: np.ndarray,
               normals: np.ndarray | None = None, colors: np.ndarray | None = None) -> None:
    vertices = np.asarray(vertices, dtype=np.float64).reshape(-1, 3)
    faces = np.asarray(faces, dtype=np.int64).reshape(-1, 3)
    rec = np.zeros(len(vertices), dtype=_VERTEX)
    rec["x"], rec["y"], rec["z"] = vertices.T
    if normals is not None:
        rec["nx"], rec["ny"], rec["nz"] = np.asarray(normals, dtype=np.float64).reshape(-1, 3).T
    colors = np.full((len(vertices), 3), 128, np.uint8) if colors is None else np.asarray(colors, np.uint8)
    rec["red"], rec["green"], rec["blue"] = colors.reshape(-1, 3).T
    frec = np.zeros(len(faces), dtype=_FACE)
    frec["n"] = 3
    frec["v"] = faces
    Path(path).write_bytes(_header(_VERTEX, len(rec), len(frec)) + rec.tobytes() + frec.tobytes())


def read_ply(path: "str | os.PathLike") -> dict:
    """Read files written by this module; returns a dict of numpy arrays."""
    raw = Path(path).read_bytes()
    end = raw.index(b"end_header\n") + len(b"end_header\n")
    header = raw[:end].decode("ascii").splitlines()
    if header[1] != "format binary_little_endian 1.0":
        raise ValueError("only binary little-endian PLY is supported")
    n_vertices = n_faces = 0
    props = []
    for line in header:
        parts = line.split()
        if parts[:2] == ["element", "vertex"]:
            n_vertices = int(parts[2])
        elif parts[:2] == ["element", "face"]:
            n_faces = int(parts[2])
        elif parts[0] == "property" and parts[1] != "list":
            props.append(parts[2])
    vdt = _VERTEX if "nx" in props else _POINT
    verts = np.frombuffer(raw, dtype=vdt, count=n_vertices, offset=end)
    out = {
        "vertices": np.column_stack([verts["x"], verts["y"], verts["z"]]).astype(np.float64),
        "colors": np.column_stack([verts["red"], verts["green"], verts["blue"]]),
    }
    if vdt is _VERTEX:
        out["normals"] = np.column_stack([verts["nx"], verts["ny"], verts["nz"]]).astype(np.float64)
    if n_faces:
        faces = np.frombuffer(raw, dtype=_FACE, count=n_faces, offset=end + n_vertices * vdt.itemsize)
        out["faces"] = faces["v"].astype(np.int64)
    return out
