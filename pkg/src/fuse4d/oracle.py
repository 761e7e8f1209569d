"""Synthetic scenes and corrupted window predictions for testing alignment.

Scenes are rendered analytically (ray-plane and ray-sphere intersections
against a ground plane, static spheres, moving spheres and an enclosing
environment sphere), so depth maps, point maps and ray maps are exactly
consistent with the pinhole model and every pixel is finite.

``make_predictions`` re-expresses ground truth per window and injects
exactly the ambiguities the aligner models: a similarity per group on the
point maps, an affine map per group on the disparities, and a rotation
offset plus center scale/shift per group on the ray cameras, plus optional
i.i.d. pixel noise with matching uncertainty maps.  The sampled parameters
are returned as a record together with a state that reproduces the
predictions exactly, so noiseless runs have a certified zero-loss solution.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .alignment import GlobalState
from .geometry import (Intrinsics, Pose, Similarity, pixel_rays, principal_point,
                       raymap_from_camera)
from .rotations import random_rotation, rotmat_to_quat
from .windows import WindowGroup, WindowIndex


@dataclass(frozen=True)
class SceneSpec:
    """Deterministic synthetic scene description (same spec => same bits)."""

    num_frames: int = 30
    height: int = 48
    width: int = 64
    trajectory: str = "orbit"          # orbit | dolly | sinusoid
    num_spheres: int = 4
    num_moving: int = 2
    moving_radius_max: float = 0.8
    focal_range: tuple[float, float] = (80.0, 160.0)
    seed: int = 0


@dataclass(frozen=True)
class PerturbSpec:
    """Per-group corruption magnitudes; the all-defaults spec is the identity.

    Ranges are uniform; rotations sample a uniform axis and an angle in
    [0, max]. Ray and point noise levels are relative to the RMS magnitude
    of the map they corrupt; disparity noise is absolute.
    """

    rot_deg: float = 0.0
    scale_range: tuple[float, float] = (1.0, 1.0)
    shift_mag: float = 0.0
    disp_scale_range: tuple[float, float] = (1.0, 1.0)
    disp_shift_mag: float = 0.0
    ray_rot_deg: float = 0.0
    ray_scale_range: tuple[float, float] = (1.0, 1.0)
    ray_shift_mag: float = 0.0
    noise_points: float = 0.0
    noise_disparity: float = 0.0
    noise_rays: float = 0.0
    sigma_floor: float = 1e-3
    sigma_gain: float = 1.0
    seed: int = 0


@dataclass
class SceneGroundTruth:
    intrinsics: Intrinsics
    poses: list[Pose]
    depth: np.ndarray        # (N, H, W)
    points: np.ndarray       # (N, H, W, 3) world frame
    ray_dirs: np.ndarray     # (N, H, W, 3)
    ray_moments: np.ndarray  # (N, H, W, 3)

    @property
    def num_frames(self) -> int:
        return self.depth.shape[0]

    @property
    def height(self) -> int:
        return self.depth.shape[1]

    @property
    def width(self) -> int:
        return self.depth.shape[2]

    def disparity(self) -> np.ndarray:
        return 1.0 / self.depth

    def scene_diameter(self) -> float:
        """Diagonal of the camera-center bounding box (point bbox fallback)."""
        centers = np.stack([p.center for p in self.poses])
        diag = float(np.linalg.norm(centers.max(axis=0) - centers.min(axis=0)))
        if diag > 1e-9:
            return diag
        pts = self.points.reshape(-1, 3)
        return float(np.linalg.norm(pts.max(axis=0) - pts.min(axis=0)))


@dataclass
class PerturbRecord:
    """Sampled corruption parameters plus the exact-recovery witness."""

    applied_point_sims: list[Similarity]
    depth_affines: list[tuple[float, float]]       # witness (scale, shift)
    ray_offsets: list[tuple[np.ndarray, float, np.ndarray]]  # witness (R, scale, shift)
    noise_levels: dict = field(default_factory=dict)
    witness: GlobalState | None = None


def _look_at(center: np.ndarray, target: np.ndarray) -> np.ndarray:
    """World-to-camera rotation with +z toward the target."""
    z = target - center
    z = z / max(np.linalg.norm(z), 1e-12)
    up = np.array([0.0, 1.0, 0.0])
    if abs(float(np.dot(up, z))) > 0.999:
        up = np.array([1.0, 0.0, 0.0])
    x = np.cross(up, z)
    x /= max(np.linalg.norm(x), 1e-12)
    y = np.cross(z, x)
    return np.stack([x, y, z])


def _trajectory(spec: SceneSpec, rng: np.random.Generator) -> list[Pose]:
    n = spec.num_frames
    t = np.arange(n) / max(n - 1, 1)
    target = np.array([0.0, 0.5, 0.0])
    poses = []
    if spec.trajectory == "orbit":
        radius = 8.0 + rng.uniform(-1.0, 1.0)
        arc = np.deg2rad(rng.uniform(60.0, 120.0))
        phase = rng.uniform(0.0, 2 * np.pi)
        heights = 1.0 + 0.5 * np.sin(2 * np.pi * t + phase)
        for i in range(n):
            ang = phase + arc * t[i]
            c = np.array([radius * np.cos(ang), heights[i], radius * np.sin(ang)])
            poses.append(Pose(_look_at(c, target), c))
    elif spec.trajectory == "dolly":
        start = np.array([0.0, 1.0, -12.0])
        step = np.array([0.0, 0.0, 6.0])
        for i in range(n):
            c = start + step * t[i]
            poses.append(Pose(_look_at(c, target), c))
    elif spec.trajectory == "sinusoid":
        amp = rng.uniform(1.0, 2.0)
        for i in range(n):
            c = np.array([amp * np.sin(2 * np.pi * t[i]),
                          1.0 + 0.4 * np.sin(4 * np.pi * t[i]),
                          -10.0 + 4.0 * t[i]])
            poses.append(Pose(_look_at(c, target), c))
    else:
        raise ValueError(f"unknown trajectory kind {spec.trajectory!r}")
    return poses


def _sphere_hits(origins: np.ndarray, dirs: np.ndarray, center: np.ndarray,
                 radius: float, t_min: float) -> np.ndarray:
    """Smallest ray parameter > t_min hitting the sphere, inf when missed."""
    oc = origins - center
    a = np.sum(dirs * dirs, axis=-1)
    b = 2.0 * np.sum(dirs * oc, axis=-1)
    c = np.sum(oc * oc, axis=-1) - radius * radius
    disc = b * b - 4 * a * c
    hit = disc >= 0
    sq = np.sqrt(np.where(hit, disc, 0.0))
    t1 = (-b - sq) / (2 * a)
    t2 = (-b + sq) / (2 * a)
    t1 = np.where(t1 > t_min, t1, np.inf)
    t2 = np.where(t2 > t_min, t2, np.inf)
    return np.where(hit, np.minimum(t1, t2), np.inf)


def generate_scene(spec: SceneSpec) -> SceneGroundTruth:
    """Render a deterministic dynamic scene to depth, point and ray maps.

    Consistency guarantees: back-projecting the depth through (K, pose)
    reproduces the point map exactly, and every ray map satisfies the
    Plucker constraint and round-trips through the ray solver.
    """
    rng = np.random.default_rng(spec.seed)

    sphere_centers = rng.uniform([-3.5, -0.5, -3.5], [3.5, 2.0, 3.5], size=(spec.num_spheres, 3))
    sphere_radii = rng.uniform(0.5, 1.3, size=spec.num_spheres)
    move_base = rng.uniform([-2.5, 0.0, -2.5], [2.5, 1.5, 2.5], size=(spec.num_moving, 3))
    move_radii = rng.uniform(0.4, spec.moving_radius_max, size=spec.num_moving)
    move_kind = rng.integers(0, 2, size=spec.num_moving)      # 0 linear, 1 sinusoid
    move_vel = rng.uniform(-1.5, 1.5, size=(spec.num_moving, 3))
    move_amp = rng.uniform(0.5, 1.5, size=(spec.num_moving, 3))
    move_freq = rng.uniform(0.5, 1.5, size=spec.num_moving)
    focal = float(rng.uniform(*spec.focal_range))

    poses = _trajectory(spec, rng)
    cx, cy = principal_point(spec.height, spec.width)
    intr = Intrinsics(focal, focal, cx, cy)

    ground_y = -1.0         # plane y = ground_y, normal +y
    env_radius = 40.0
    t_min = 0.05

    n, h, w = spec.num_frames, spec.height, spec.width
    depth = np.empty((n, h, w))
    points = np.empty((n, h, w, 3))
    ray_dirs = np.empty((n, h, w, 3))
    ray_moments = np.empty((n, h, w, 3))
    cam_rays = pixel_rays(intr, h, w)

    tgrid = np.arange(n) / max(n - 1, 1)
    for i, pose in enumerate(poses):
        dirs = cam_rays @ pose.rotation           # world directions, unit z in camera
        origin = pose.center
        origins = np.broadcast_to(origin, dirs.shape)

        best = np.full((h, w), np.inf)
        # ground plane
        dy = dirs[..., 1]
        tp = np.where(np.abs(dy) > 1e-12, (ground_y - origin[1]) / np.where(np.abs(dy) > 1e-12, dy, 1.0), np.inf)
        tp = np.where(tp > t_min, tp, np.inf)
        best = np.minimum(best, tp)
        # static spheres
        for c, r in zip(sphere_centers, sphere_radii):
            best = np.minimum(best, _sphere_hits(origins, dirs, c, r, t_min))
        # moving spheres
        for m in range(spec.num_moving):
            if move_kind[m] == 0:
                c = move_base[m] + move_vel[m] * (tgrid[i] * 4.0)
            else:
                c = move_base[m] + move_amp[m] * np.sin(2 * np.pi * move_freq[m] * tgrid[i])
            best = np.minimum(best, _sphere_hits(origins, dirs, c, move_radii[m], t_min))
        # enclosing environment sphere; the camera is inside, so this always hits
        env = _sphere_hits(origins, dirs, np.zeros(3), env_radius, t_min)
        best = np.minimum(best, env)
        if not np.all(np.isfinite(best)):
            raise RuntimeError(f"frame {i}: some rays escaped the environment sphere")

        depth[i] = best                            # ray parameter equals z-depth (dir_z = 1 in camera)
        points[i] = origins + best[..., None] * dirs
        rm = raymap_from_camera(intr, pose, h, w)
        ray_dirs[i] = rm.directions
        ray_moments[i] = rm.moments
    return SceneGroundTruth(intr, poses, depth, points, ray_dirs, ray_moments)


def _sample_similarity(rng: np.random.Generator, rot_deg: float,
                       scale_range: tuple[float, float], shift_mag: float) -> Similarity:
    R = random_rotation(rng, np.deg2rad(rot_deg)) if rot_deg > 0 else np.eye(3)
    scale = float(rng.uniform(*scale_range))
    shift = rng.uniform(-shift_mag, shift_mag, size=3) if shift_mag > 0 else np.zeros(3)
    return Similarity(scale, R, shift)


def canonical_trajectory(gt: SceneGroundTruth, scale: float = 1.0) -> tuple[np.ndarray, np.ndarray]:
    """Ground-truth trajectory re-expressed with frame 0 at the identity pose,
    world units multiplied by ``scale``: the gauge the aligner recovers."""
    R0 = gt.poses[0].rotation
    o0 = gt.poses[0].center
    rotations = np.stack([p.rotation @ R0.T for p in gt.poses])
    centers = np.stack([scale * (R0 @ (p.center - o0)) for p in gt.poses])
    return rotations, centers


def make_predictions(gt: SceneGroundTruth, index: WindowIndex,
                     spec: PerturbSpec) -> tuple[list[WindowGroup], PerturbRecord]:
    """Cut ground truth into window groups and corrupt each modality.

    Point maps are re-expressed in the clip's first-frame coordinates and
    transformed by a per-group similarity.  Disparities and ray cameras are
    generated so that the recorded witness parameters reproduce them exactly
    from the canonical trajectory: disparity via a per-group affine map, ray
    cameras via a per-group orientation offset and center scale/shift, which
    are exactly the ambiguities the camera alignment loss can undo.
    """
    rng = np.random.default_rng(spec.seed)
    h, w = gt.height, gt.width
    n = gt.num_frames
    disparity_gt = gt.disparity()

    point_sims: list[Similarity] = []
    depth_affines: list[tuple[float, float]] = []
    ray_offsets: list[tuple[np.ndarray, float, np.ndarray]] = []
    for _ in index.starts:
        point_sims.append(_sample_similarity(rng, spec.rot_deg, spec.scale_range, spec.shift_mag))
        lam_d = float(rng.uniform(*spec.disp_scale_range))
        beta_d = float(rng.uniform(-spec.disp_shift_mag, spec.disp_shift_mag)) if spec.disp_shift_mag > 0 else 0.0
        depth_affines.append((lam_d, beta_d))
        Q = random_rotation(rng, np.deg2rad(spec.ray_rot_deg)) if spec.ray_rot_deg > 0 else np.eye(3)
        lam_c = float(rng.uniform(*spec.ray_scale_range))
        beta_c = rng.uniform(-spec.ray_shift_mag, spec.ray_shift_mag, size=3) if spec.ray_shift_mag > 0 else np.zeros(3)
        ray_offsets.append((Q, lam_c, beta_c))

    # the recoverable gauge: frame 0 at identity, world scaled by group 0's draw
    gauge_scale = point_sims[0].scale
    canon_R, canon_c = canonical_trajectory(gt, gauge_scale)
    canon_disp = disparity_gt / gauge_scale

    groups: list[WindowGroup] = []
    noise_record = []
    for g, start in enumerate(index.starts):
        fr = slice(start, start + index.window)
        ref = gt.poses[start]
        clip_pts = (gt.points[fr] - ref.center) @ ref.rotation.T
        pts = point_sims[g].apply(clip_pts)

        sigma_px = np.full(pts.shape[:3], spec.sigma_floor)
        if spec.noise_points > 0:
            level = spec.noise_points * (0.5 + rng.random(pts.shape[:3]))
            pts = pts + rng.normal(size=pts.shape) * level[..., None]
            sigma_px = spec.sigma_floor + spec.sigma_gain * level

        lam_d, beta_d = depth_affines[g]
        disp = (canon_disp[fr] - beta_d) / lam_d
        if spec.noise_disparity > 0:
            disp = disp + rng.normal(size=disp.shape) * spec.noise_disparity

        Q, lam_c, beta_c = ray_offsets[g]
        rd = np.empty((index.window, h, w, 3))
        rm = np.empty((index.window, h, w, 3))
        for j in range(index.window):
            i = start + j
            cam = Pose(Q.T @ canon_R[i], (canon_c[i] - beta_c) / lam_c)
            ray = raymap_from_camera(gt.intrinsics, cam, h, w)
            rd[j] = ray.directions
            rm[j] = ray.moments
        if spec.noise_rays > 0:
            sd = spec.noise_rays * float(np.sqrt(np.mean(rd**2)))
            sm = spec.noise_rays * float(np.sqrt(np.mean(rm**2)))
            rd = rd + rng.normal(size=rd.shape) * sd
            rm = rm + rng.normal(size=rm.shape) * sm
            noise_record.append({"group": g, "ray_dir_sigma": sd, "ray_moment_sigma": sm})

        groups.append(WindowGroup(start=start, points=pts, disparity=disp,
                                  sigma=sigma_px, ray_dirs=rd, ray_moments=rm))

    witness = _witness_state(gt, index, point_sims, depth_affines, ray_offsets,
                             canon_R, canon_c, canon_disp)
    record = PerturbRecord(
        applied_point_sims=point_sims,
        depth_affines=depth_affines,
        ray_offsets=ray_offsets,
        noise_levels={"points": spec.noise_points, "disparity": spec.noise_disparity,
                      "rays": spec.noise_rays, "per_group": noise_record},
        witness=witness,
    )
    return groups, record


def _witness_state(gt: SceneGroundTruth, index: WindowIndex,
                   point_sims: list[Similarity], depth_affines, ray_offsets,
                   canon_R: np.ndarray, canon_c: np.ndarray,
                   canon_disp: np.ndarray) -> GlobalState:
    """State that reproduces noiseless predictions exactly (zero total loss)."""
    h, w = gt.height, gt.width
    cx, cy = principal_point(h, w)
    gauge_scale = point_sims[0].scale
    R0 = gt.poses[0].rotation
    o0 = gt.poses[0].center
    canonical = Similarity(gauge_scale, R0, -gauge_scale * (R0 @ o0))

    witness_sims = []
    for g, start in enumerate(index.starts):
        ref = gt.poses[start]
        clip = Similarity(1.0, ref.rotation, -ref.rotation @ ref.center)
        witness_sims.append(canonical.compose(clip.inverse()).compose(point_sims[g].inverse()))

    n_groups = len(index.starts)
    return GlobalState(
        disparity=canon_disp.copy(),
        log_focal=np.full(gt.num_frames, np.log(gt.intrinsics.fx)),
        quat=rotmat_to_quat(canon_R),
        center=canon_c.copy(),
        point_log_scale=np.log([s.scale for s in witness_sims]),
        point_quat=rotmat_to_quat(np.stack([s.rotation for s in witness_sims])),
        point_shift=np.stack([s.shift for s in witness_sims]),
        depth_log_scale=np.log([a[0] for a in depth_affines]),
        depth_shift=np.array([a[1] for a in depth_affines]),
        cam_quat=rotmat_to_quat(np.stack([o[0] for o in ray_offsets])),
        cam_log_scale=np.log([o[1] for o in ray_offsets]),
        cam_shift=np.stack([o[2] for o in ray_offsets]),
        starts=index.starts, cx=cx, cy=cy)
