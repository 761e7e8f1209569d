"""Quaternion and SO(3) helpers.

Quaternions are stored (w, x, y, z).  ``quat_to_rotmat`` divides by the
squared norm, so every nonzero quaternion maps to a proper rotation and
gradient steps taken in the ambient 4-space never leave SO(3); renormalizing
after a step changes nothing but the conditioning.
"""

from __future__ import annotations

import numpy as np
from scipy.spatial.transform import Rotation as _Rotation


def normalize_quat(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    n = np.linalg.norm(q, axis=-1, keepdims=True)
    return q / np.maximum(n, 1e-300)


def quat_to_rotmat(q: np.ndarray) -> np.ndarray:
    """Rotation matrices for quaternions of any nonzero norm, shape (..., 4) -> (..., 3, 3)."""
    q = np.asarray(q, dtype=np.float64)
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    s = w * w + x * x + y * y + z * z
    R = np.empty(q.shape[:-1] + (3, 3), dtype=np.float64)
    R[..., 0, 0] = w * w + x * x - y * y - z * z
    R[..., 0, 1] = 2 * (x * y - w * z)
    R[..., 0, 2] = 2 * (x * z + w * y)
    R[..., 1, 0] = 2 * (x * y + w * z)
    R[..., 1, 1] = w * w - x * x + y * y - z * z
    R[..., 1, 2] = 2 * (y * z - w * x)
    R[..., 2, 0] = 2 * (x * z - w * y)
    R[..., 2, 1] = 2 * (y * z + w * x)
    R[..., 2, 2] = w * w - x * x - y * y + z * z
    return R / s[..., None, None]


def rotmat_to_quat(R: np.ndarray) -> np.ndarray:
    """Unit quaternions (w, x, y, z) from rotation matrices, shape (..., 3, 3) -> (..., 4)."""
    R = np.asarray(R, dtype=np.float64)
    flat = R.reshape(-1, 3, 3)
    xyzw = _Rotation.from_matrix(flat).as_quat()
    q = np.concatenate([xyzw[:, 3:4], xyzw[:, :3]], axis=1)
    return q.reshape(R.shape[:-2] + (4,))


def rotmat_grad_to_quat_grad(q: np.ndarray, G: np.ndarray) -> np.ndarray:
    """Back-propagate dL/dR through quat_to_rotmat: (..., 4), (..., 3, 3) -> (..., 4).

    Uses the scale-invariant form R = M(q) / |q|^2, whose derivative w.r.t.
    q_k is (dM/dq_k - 2 q_k R) / |q|^2.
    """
    q = np.asarray(q, dtype=np.float64)
    G = np.asarray(G, dtype=np.float64)
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    s = w * w + x * x + y * y + z * z

    g00, g01, g02 = G[..., 0, 0], G[..., 0, 1], G[..., 0, 2]
    g10, g11, g12 = G[..., 1, 0], G[..., 1, 1], G[..., 1, 2]
    g20, g21, g22 = G[..., 2, 0], G[..., 2, 1], G[..., 2, 2]

    # tr(G^T dM/dq_k), M the unnormalized quadratic form
    tw = 2 * (w * (g00 + g11 + g22) + z * (g10 - g01) + y * (g02 - g20) + x * (g21 - g12))
    tx = 2 * (x * (g00 - g11 - g22) + y * (g01 + g10) + z * (g02 + g20) + w * (g21 - g12))
    ty = 2 * (y * (-g00 + g11 - g22) + x * (g01 + g10) + w * (g02 - g20) + z * (g12 + g21))
    tz = 2 * (z * (-g00 - g11 + g22) + w * (g10 - g01) + x * (g02 + g20) + y * (g12 + g21))

    R = quat_to_rotmat(q)
    trGR = np.einsum('...ij,...ij->...', G, R)
    grad = np.stack([tw, tx, ty, tz], axis=-1)
    return (grad - 2 * q * trGR[..., None]) / s[..., None]


def project_to_rotation(M: np.ndarray) -> np.ndarray:
    """Nearest proper rotation to a 3x3 matrix (orthogonal polar factor, det +1)."""
    U, _, Vt = np.linalg.svd(np.asarray(M, dtype=np.float64))
    d = np.sign(np.linalg.det(U @ Vt))
    return U @ np.diag([1.0, 1.0, d]) @ Vt


def geodesic_angle(Ra: np.ndarray, Rb: np.ndarray) -> float | np.ndarray:
    """Angle in radians of the relative rotation Ra^T Rb."""
    Ra = np.asarray(Ra, dtype=np.float64)
    Rb = np.asarray(Rb, dtype=np.float64)
    tr = np.einsum('...ij,...ij->...', Ra, Rb)
    c = np.clip((tr - 1.0) / 2.0, -1.0, 1.0)
    ang = np.arccos(c)
    return float(ang) if ang.ndim == 0 else ang


def random_rotation(rng: np.random.Generator, max_angle_rad: float | None = None) -> np.ndarray:
    """Random rotation; uniform over SO(3), or uniform axis with angle U[0, max_angle_rad]."""
    if max_angle_rad is None:
        return _Rotation.random(random_state=rng).as_matrix()
    axis = rng.normal(size=3)
    axis /= max(np.linalg.norm(axis), 1e-12)
    angle = rng.uniform(0.0, max_angle_rad)
    return _Rotation.from_rotvec(axis * angle).as_matrix()
