"""Incremental structure from motion: geometry, robust estimation, bundle adjustment."""
from .bundle import BundleOptions, bundle_adjust
from .camera import CameraIntrinsics, Pose, project, project_points, undistort_points
from .errors import (AlignmentError, BehindCameraError, DegenerateConfigurationError, EstimationError,
                     NumericalError, ReconstructionError, RegistrationError, SfMError, TriangulationError)
from .essential import decompose_essential, essential_from_pose, estimate_essential_ransac
from .incremental import IncrementalOptions, build_tracks, reconstruct_incremental
from .pnp import solve_pnp_ransac
from .reconstruction import Observation, Reconstruction, ReprojectionStats, reprojection_stats
from .triangulation import triangulate_dlt
from .verify import verify_matches, verify_pair

__all__ = [
    "AlignmentError", "BehindCameraError", "BundleOptions", "CameraIntrinsics", "DegenerateConfigurationError",
    "EstimationError", "IncrementalOptions", "NumericalError", "Observation", "Pose", "Reconstruction",
    "ReconstructionError", "RegistrationError", "ReprojectionStats", "SfMError", "TriangulationError",
    "build_tracks", "bundle_adjust", "decompose_essential", "essential_from_pose", "estimate_essential_ransac",
    "project", "project_points", "reconstruct_incremental", "reprojection_stats", "solve_pnp_ransac",
    "triangulate_dlt", "undistort_points", "verify_matches", "verify_pair",
]
