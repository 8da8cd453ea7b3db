"""Meshing of reconstructed point clouds, vertex texturing and frame localization."""
from .surface import GRAY, Mesh, MeshingError, mesh_from_points
from .texture import LocalizationError, TexturingError, frustum, localize_frame, texture_mesh, visible_vertices

__all__ = [
    "GRAY", "Mesh", "MeshingError", "mesh_from_points", "LocalizationError", "TexturingError", "frustum",
    "localize_frame", "texture_mesh", "visible_vertices",
]
