"""Recover a pinhole camera from a (possibly noisy) Plucker ray map.

The center is the least-squares point closest to all rays, solved from the
normal equations of the cross-product operator.  Orientation and intrinsics
come from the 3x3 matrix H that maps predicted ray directions onto the
directions (u, v, 1) of a canonical pixel-aligned camera; for exact rays
H equals K R up to scale, so an RQ decomposition splits it into intrinsics
and a world-to-camera rotation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .exceptions import DegenerateGeometryError, GeometryError
from .geometry import Intrinsics, Pose, RayMap, pixel_grid


@dataclass
class RayCameraSolution:
    """Camera recovered from one ray map plus fit residuals.

    center_rms is the RMS of |p x d - m| at the solved center; direction_rms
    is the RMS sine of the angle between H d and the canonical directions.
    """

    center: np.ndarray
    rotation: np.ndarray
    intrinsics: Intrinsics
    center_rms: float
    direction_rms: float

    @property
    def pose(self) -> Pose:
        return Pose(self.rotation, self.center)


def solve_center(raymap: RayMap) -> tuple[np.ndarray, float]:
    """Least-squares camera center: argmin_p sum |p x d - m|^2.

    Expanding the normal equations gives A p = b with
    A = sum(|d|^2 I - d d^T) and b = sum(d x m).  Raises
    DegenerateGeometryError when all directions are parallel (A rank < 3).
    """
    d = raymap.directions.reshape(-1, 3)
    m = raymap.moments.reshape(-1, 3)
    if d.shape[0] < 2:
        raise DegenerateGeometryError("need at least 2 rays to intersect")
    A = np.sum(d * d) * np.eye(3) - d.T @ d
    b = np.sum(np.cross(d, m), axis=0)
    eigs = np.linalg.eigvalsh(A)
    if eigs[0] <= 1e-12 * max(eigs[-1], 1e-300):
        raise DegenerateGeometryError("ray directions are parallel; center is not unique")
    center = np.linalg.solve(A, b)
    resid = np.cross(np.broadcast_to(center, d.shape), d) - m
    rms = float(np.sqrt(np.mean(np.sum(resid * resid, axis=1))))
    return center, rms


def solve_H(raymap: RayMap) -> np.ndarray:
    """Direction-alignment matrix: argmin_{|H|_F=1} sum |H d_uv x (u, v, 1)|^2.

    Directions are unit-normalized to equalize the per-pixel constraint
    weight, and the canonical (u, v, 1) side is Hartley-normalized for
    conditioning (the normalization is undone before returning).  All three
    rows of each rank-2 cross-product block are stacked and the smallest
    right singular vector taken.  The sign is fixed so H maps the center
    pixel's direction to a positive third component.
    """
    H_img, W_img = raymap.height, raymap.width
    n = H_img * W_img
    if n < 4:
        raise DegenerateGeometryError("need at least 4 rays to solve for H")
    d = raymap.directions.reshape(-1, 3)
    norms = np.linalg.norm(d, axis=1, keepdims=True)
    if np.any(norms < 1e-300):
        raise DegenerateGeometryError("ray map contains zero directions")
    d = d / norms

    u, v = pixel_grid(H_img, W_img)
    uvw = np.stack([u.ravel(), v.ravel(), np.ones(n)], axis=1)
    scale = np.mean(np.linalg.norm(uvw[:, :2] - uvw[:, :2].mean(axis=0), axis=1))
    scale = max(scale, 1e-9)
    T = np.array([
        [1.0 / scale, 0.0, -uvw[:, 0].mean() / scale],
        [0.0, 1.0 / scale, -uvw[:, 1].mean() / scale],
        [0.0, 0.0, 1.0],
    ])
    uvn = uvw @ T.T

    # rows of [u']_x kron(I3, d^T): constraint u' x (H' d) = 0 for H' = T H
    A = np.zeros((3 * n, 9))
    ux, uy, uz = uvn[:, 0], uvn[:, 1], uvn[:, 2]
    for col in range(3):
        dc = d[:, col]
        A[0::3, 3 + col] = -uz * dc
        A[0::3, 6 + col] = uy * dc
        A[1::3, 0 + col] = uz * dc
        A[1::3, 6 + col] = -ux * dc
        A[2::3, 0 + col] = -uy * dc
        A[2::3, 3 + col] = ux * dc

    _, s, Vt = np.linalg.svd(A, full_matrices=False)
    if s[7] <= 1e-10 * max(s[0], 1e-300):
        raise DegenerateGeometryError("degenerate ray directions: H constraint matrix has rank < 8")
    Hn = Vt[-1].reshape(3, 3)
    Hm = np.linalg.solve(T, Hn)
    Hm /= np.linalg.norm(Hm)

    center_dir = d.reshape(H_img, W_img, 3)[H_img // 2, W_img // 2]
    w = float(Hm[2] @ center_dir)
    if w == 0.0:
        w = float(np.sum(d @ Hm[2].T))
    if w < 0:
        Hm = -Hm
    return Hm


def rq_decompose(Hm: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Split a nonsingular 3x3 matrix into K (upper triangular, positive
    diagonal, K[2,2] = 1) times a proper rotation R.

    K @ R reconstructs +-Hm up to positive scale; the sign is chosen so R has
    determinant +1, which makes Hm and -Hm yield the identical (K, R).
    """
    Hm = np.asarray(Hm, dtype=np.float64)
    if Hm.shape != (3, 3):
        raise GeometryError(f"expected a 3x3 matrix, got {Hm.shape}")
    if abs(np.linalg.det(Hm)) < 1e-300:
        raise DegenerateGeometryError("cannot RQ-decompose a singular matrix")
    K, R = scipy.linalg.rq(Hm)
    signs = np.sign(np.diag(K))
    signs[signs == 0] = 1.0
    D = np.diag(signs)
    K = K @ D
    R = D @ R
    if np.linalg.det(R) < 0:
        R = -R  # factor -Hm instead; K stays positive-diagonal
    K = K / K[2, 2]
    return K, R


def camera_from_raymap(raymap: RayMap) -> RayCameraSolution:
    """Full camera recovery: center from moments, (K, R) from directions.

    Exact inverse of ``raymap_from_camera`` on noiseless input; on noisy
    input the residual fields report the fit quality.
    """
    center, center_rms = solve_center(raymap)
    Hm = solve_H(raymap)
    K, R = rq_decompose(Hm)
    # near-zero skew is a numerical artifact of the decomposition; drop it
    intr = Intrinsics(fx=float(K[0, 0]), fy=float(K[1, 1]), cx=float(K[0, 2]), cy=float(K[1, 2]))

    d = raymap.directions.reshape(-1, 3)
    mapped = d @ Hm.T
    u, v = pixel_grid(raymap.height, raymap.width)
    uvw = np.stack([u.ravel(), v.ravel(), np.ones(d.shape[0])], axis=1)
    cross = np.cross(mapped, uvw)
    denom = np.linalg.norm(mapped, axis=1) * np.linalg.norm(uvw, axis=1)
    sines = np.linalg.norm(cross, axis=1) / np.maximum(denom, 1e-300)
    direction_rms = float(np.sqrt(np.mean(sines**2)))
    return RayCameraSolution(center, R, intr, center_rms, direction_rms)
