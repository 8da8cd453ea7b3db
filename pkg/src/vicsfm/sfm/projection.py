"""Vectorised simple-radial projection with analytic Jacobians.

Used by bundle adjustment and PnP refinement.  Rotations are perturbed on the
left, ``R <- exp([w]x) R``, so the rotation Jacobian is taken at ``w = 0``.
"""
from __future__ import annotations

import numpy as np

from .camera import skew


def project_with_jacobians(R: np.ndarray, t: np.ndarray, X: np.ndarray, focal: float, k1: float,
                           c: np.ndarray, want_jac: bool = True):
    """Project per-observation points.

    ``R`` (n, 3, 3), ``t`` (n, 3), ``X`` (n, 3).  Returns ``(pix, z, J_pose,
    J_point, J_intr)`` with J_pose (n, 2, 6) ordered [rotation, translation]
    and J_intr (n, 2, 2) ordered [focal, k1].
    """
    RX = np.einsum("nij,nj->ni", R, X)
    xc = RX + t
    z = xc[:, 2]
    inv_z = 1.0 / z
    nrm = xc[:, :2] * inv_z[:, None]
    r2 = np.sum(nrm * nrm, axis=1)
    radial = 1.0 + k1 * r2
    pix = focal * radial[:, None] * nrm + c
    if not want_jac:
        return pix, z, None, None, None
    n = len(X)
    dp_dn = focal * (radial[:, None, None] * np.eye(2)[None] + 2.0 * k1 * np.einsum("ni,nj->nij", nrm, nrm))
    dn_dx = np.zeros((n, 2, 3))
    dn_dx[:, 0, 0] = inv_z
    dn_dx[:, 1, 1] = inv_z
    dn_dx[:, 0, 2] = -xc[:, 0] * inv_z ** 2
    dn_dx[:, 1, 2] = -xc[:, 1] * inv_z ** 2
    A = dp_dn @ dn_dx
    J_pose = np.empty((n, 2, 6))
    J_pose[:, :, :3] = A @ (-skew(RX))
    J_pose[:, :, 3:] = A
    J_point = A @ R
    J_intr = np.stack([radial[:, None] * nrm, focal * r2[:, None] * nrm], axis=2)
    return pix, z, J_pose, J_point, J_intr
