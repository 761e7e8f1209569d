"""Pinhole forward models shared by every other module.

Conventions, used consistently across the package (solvers, oracle, metrics):

- pixel (u, v) = (column, row), zero-indexed, pixel centers at integer
  coordinates; the principal point of a W x H image sits at
  ((W-1)/2, (H-1)/2);
- rotations are world-to-camera; ``center`` is the camera position in world
  units, so the translation is t = -R @ center;
- ray directions are stored unnormalized as R^T K^-1 (u, v, 1)^T and the
  moment of a pixel ray is m = center x d, so exact ray maps satisfy the
  Plucker constraint d . m = 0;
- disparity is inverse depth; zero encodes a point at infinity and is never
  a valid input to the back-projection below.

All functions are pure and thread-safe.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import GeometryError

#: disparities below this are treated as points at infinity and masked
D_MIN = 1e-4

#: lower clamp applied to uncertainty maps before they weight any loss
SIGMA_FLOOR = 1e-3


def _as_float(a, shape=None, name="array") -> np.ndarray:
    out = np.asarray(a, dtype=np.float64)
    if shape is not None and out.shape != shape:
        raise GeometryError(f"{name} must have shape {shape}, got {out.shape}")
    return out


@dataclass
class Intrinsics:
    """Pinhole intrinsics in pixels; fx, fy must be positive and finite."""

    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        vals = (self.fx, self.fy, self.cx, self.cy)
        if not all(np.isfinite(v) for v in vals):
            raise GeometryError(f"non-finite intrinsics: {vals}")
        if self.fx <= 0 or self.fy <= 0:
            raise GeometryError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")

    def matrix(self) -> np.ndarray:
        return np.array([
            [self.fx, 0.0, self.cx],
            [0.0, self.fy, self.cy],
            [0.0, 0.0, 1.0],
        ])

    @classmethod
    def from_matrix(cls, K: np.ndarray) -> "Intrinsics":
        K = _as_float(K, (3, 3), "K")
        if abs(K[2, 2]) < 1e-15:
            raise GeometryError("K[2,2] must be nonzero")
        K = K / K[2, 2]
        return cls(fx=float(K[0, 0]), fy=float(K[1, 1]), cx=float(K[0, 2]), cy=float(K[1, 2]))


@dataclass
class Pose:
    """World-to-camera rotation plus camera center in world coordinates."""

    rotation: np.ndarray
    center: np.ndarray

    def __post_init__(self):
        self.rotation = _as_float(self.rotation, (3, 3), "rotation")
        self.center = _as_float(self.center, (3,), "center")
        err = np.linalg.norm(self.rotation.T @ self.rotation - np.eye(3))
        if err > 1e-8 or np.linalg.det(self.rotation) < 0:
            raise GeometryError(f"rotation is not a proper rotation (|R^T R - I| = {err:.2e})")

    @property
    def translation(self) -> np.ndarray:
        return -self.rotation @ self.center

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.eye(3), np.zeros(3))

    def to_camera(self, points: np.ndarray) -> np.ndarray:
        """World points (..., 3) into camera coordinates R (X - o)."""
        pts = np.asarray(points, dtype=np.float64)
        return (pts - self.center) @ self.rotation.T

    def to_world(self, points: np.ndarray) -> np.ndarray:
        pts = np.asarray(points, dtype=np.float64)
        return pts @ self.rotation + self.center


@dataclass
class RayMap:
    """Per-pixel Plucker rays: directions d and moments m, each (H, W, 3).

    Exact maps satisfy d . m = 0 per pixel; predicted maps may violate it
    and the solvers tolerate that.
    """

    directions: np.ndarray
    moments: np.ndarray

    def __post_init__(self):
        self.directions = np.asarray(self.directions, dtype=np.float64)
        self.moments = np.asarray(self.moments, dtype=np.float64)
        if self.directions.ndim != 3 or self.directions.shape[-1] != 3:
            raise GeometryError(f"directions must be (H, W, 3), got {self.directions.shape}")
        if self.moments.shape != self.directions.shape:
            raise GeometryError("directions and moments must have identical shapes")

    @property
    def height(self) -> int:
        return self.directions.shape[0]

    @property
    def width(self) -> int:
        return self.directions.shape[1]

    def plucker_residual(self) -> np.ndarray:
        """|d . m| per pixel; zero (to rounding) for exact camera ray maps."""
        return np.abs(np.sum(self.directions * self.moments, axis=-1))


@dataclass
class Similarity:
    """Scaled rigid transform X -> scale * R @ X + shift with scale > 0."""

    scale: float
    rotation: np.ndarray
    shift: np.ndarray

    def __post_init__(self):
        self.scale = float(self.scale)
        if not np.isfinite(self.scale) or self.scale <= 0:
            raise GeometryError(f"similarity scale must be positive, got {self.scale}")
        self.rotation = _as_float(self.rotation, (3, 3), "rotation")
        self.shift = _as_float(self.shift, (3,), "shift")

    @classmethod
    def identity(cls) -> "Similarity":
        return cls(1.0, np.eye(3), np.zeros(3))

    def apply(self, points: np.ndarray) -> np.ndarray:
        return apply_similarity(points, self.scale, self.rotation, self.shift)

    def compose(self, inner: "Similarity") -> "Similarity":
        """self o inner: apply ``inner`` first, then ``self``."""
        return Similarity(
            self.scale * inner.scale,
            self.rotation @ inner.rotation,
            self.scale * self.rotation @ inner.shift + self.shift,
        )

    def inverse(self) -> "Similarity":
        inv_scale = 1.0 / self.scale
        return Similarity(inv_scale, self.rotation.T, -inv_scale * self.rotation.T @ self.shift)


def principal_point(height: int, width: int) -> tuple[float, float]:
    """Image-center principal point under the integer pixel-center convention."""
    return (width - 1) / 2.0, (height - 1) / 2.0


def pixel_grid(height: int, width: int) -> tuple[np.ndarray, np.ndarray]:
    """(u, v) coordinate grids of shape (H, W), u = column, v = row."""
    v, u = np.mgrid[0:height, 0:width].astype(np.float64)
    return u, v


def pixel_rays(intrinsics: Intrinsics, height: int, width: int) -> np.ndarray:
    """Camera-frame rays K^-1 (u, v, 1)^T per pixel, shape (H, W, 3)."""
    if height < 1 or width < 1:
        raise GeometryError(f"image size must be positive, got {height}x{width}")
    u, v = pixel_grid(height, width)
    rays = np.empty((height, width, 3))
    rays[..., 0] = (u - intrinsics.cx) / intrinsics.fx
    rays[..., 1] = (v - intrinsics.cy) / intrinsics.fy
    rays[..., 2] = 1.0
    return rays


def point_map_from_depth(disparity: np.ndarray, intrinsics: Intrinsics, pose: Pose) -> np.ndarray:
    """Back-project a disparity map through a camera: X = R^T K^-1 (u,v,1) / D + o.

    Every disparity entry must be strictly positive; zero entries encode
    points at infinity which have no 3D coordinate, so the caller must mask
    or clamp them first.
    """
    disparity = np.asarray(disparity, dtype=np.float64)
    if disparity.ndim != 2:
        raise GeometryError(f"disparity must be (H, W), got shape {disparity.shape}")
    if not np.all(np.isfinite(disparity)) or np.any(disparity <= 0):
        raise GeometryError("disparity has non-positive entries (points at infinity); mask or clamp first")
    rays = pixel_rays(intrinsics, *disparity.shape)
    cam_pts = rays / disparity[..., None]
    return cam_pts @ pose.rotation + pose.center


def raymap_from_camera(intrinsics: Intrinsics, pose: Pose, height: int, width: int) -> RayMap:
    """Plucker ray map of a camera: d = R^T K^-1 (u,v,1), m = center x d."""
    d = pixel_rays(intrinsics, height, width) @ pose.rotation
    m = np.cross(np.broadcast_to(pose.center, d.shape), d)
    return RayMap(d, m)


def apply_similarity(points: np.ndarray, scale: float, rotation: np.ndarray, shift: np.ndarray) -> np.ndarray:
    """scale * R @ X + shift applied to an (..., 3) array of points."""
    if not np.isfinite(scale) or scale <= 0:
        raise GeometryError(f"similarity scale must be positive, got {scale}")
    rotation = _as_float(rotation, (3, 3), "rotation")
    shift = _as_float(shift, (3,), "shift")
    pts = np.asarray(points, dtype=np.float64)
    return scale * (pts @ rotation.T) + shift


def camera_depths(points: np.ndarray, pose: Pose) -> np.ndarray:
    """z coordinate of world points in the camera frame, shape (...,)."""
    pts = np.asarray(points, dtype=np.float64)
    return (pts - pose.center) @ pose.rotation[2]


def project_points(points: np.ndarray, intrinsics: Intrinsics, pose: Pose) -> tuple[np.ndarray, np.ndarray]:
    """Project world points; returns pixel coords (..., 2) and camera depths (...,).

    Pixels of points at or behind the camera plane are returned as NaN.
    """
    cam = pose.to_camera(points)
    z = cam[..., 2]
    safe = np.where(z > 0, z, np.nan)
    pix = np.empty(cam.shape[:-1] + (2,))
    pix[..., 0] = intrinsics.fx * cam[..., 0] / safe + intrinsics.cx
    pix[..., 1] = intrinsics.fy * cam[..., 1] / safe + intrinsics.cy
    return pix, z
