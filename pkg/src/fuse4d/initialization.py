"""Warm start for the window alignment.

Pipeline: chain window groups into one frame with Umeyama fits over shared
frames, fuse per-frame point maps, estimate a focal per clip reference frame
by minimizing projection error, recover per-frame extrinsics with RANSAC PnP,
and project fused points into each camera to seed the global disparity
fields.  The result is re-expressed so frame 0 sits at the identity pose,
which is the gauge the optimizer keeps fixed.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .exceptions import DegenerateGeometryError, EstimationError, WindowError
from .geometry import D_MIN, SIGMA_FLOOR, Intrinsics, Pose, Similarity, pixel_grid, principal_point
from .windows import WindowGroup, WindowIndex, overlap

logger = logging.getLogger("fuse4d")

#: cap on correspondences fed to one Umeyama fit while chaining
MAX_CHAIN_POINTS = 4096


@dataclass
class InitState:
    """Initial estimates handed to the optimizer.

    group_sims map each group's clip-relative point maps into the shared
    frame; rotations/centers/focals are per video frame; disparity holds the
    per-frame fields projected from the fused point maps.
    """

    group_sims: list[Similarity]
    rotations: np.ndarray      # (N, 3, 3) world-to-camera
    centers: np.ndarray        # (N, 3)
    focals: np.ndarray         # (N,)
    disparity: np.ndarray      # (N, H, W)


def umeyama(src: np.ndarray, dst: np.ndarray, with_scale: bool = True) -> Similarity:
    """Closed-form similarity minimizing sum |dst - (s R src + t)|^2.

    The rotation is always proper: when the optimal orthogonal map would be
    a reflection, the smallest singular direction is flipped (standard
    determinant correction).  Raises DegenerateGeometryError for fewer than
    3 points or a collinear source set.
    """
    src = np.asarray(src, dtype=np.float64).reshape(-1, 3)
    dst = np.asarray(dst, dtype=np.float64).reshape(-1, 3)
    if src.shape != dst.shape:
        raise ValueError(f"correspondence count mismatch: {src.shape} vs {dst.shape}")
    n = src.shape[0]
    if n < 3:
        raise DegenerateGeometryError(f"need at least 3 correspondences, got {n}")

    mu_s = src.mean(axis=0)
    mu_d = dst.mean(axis=0)
    cs = src - mu_s
    cd = dst - mu_d

    spread = np.linalg.svd(cs, compute_uv=False)
    if spread[1] <= 1e-9 * max(spread[0], 1e-300):
        raise DegenerateGeometryError("source points are collinear; similarity is not unique")

    cov = cd.T @ cs / n
    U, D, Vt = np.linalg.svd(cov)
    S = np.eye(3)
    if np.linalg.det(U) * np.linalg.det(Vt) < 0:
        S[2, 2] = -1.0
    R = U @ S @ Vt

    if with_scale:
        var_src = np.mean(np.sum(cs * cs, axis=1))
        scale = float(np.trace(np.diag(D) @ S) / var_src)
    else:
        scale = 1.0
    shift = mu_d - scale * R @ mu_s
    return Similarity(scale, R, shift)


def _subsample(count: int, limit: int) -> np.ndarray:
    if count <= limit:
        return np.arange(count)
    return np.unique(np.round(np.linspace(0, count - 1, limit)).astype(np.int64))


def chain_groups(groups: list[WindowGroup], index: WindowIndex,
                 max_points: int = MAX_CHAIN_POINTS) -> list[Similarity]:
    """Align every group to the first one through shared-frame point maps.

    Group 0 is pinned to the identity (gauge); each later group is fit by
    Umeyama against the already-aligned points of its overlapping frames,
    using all jointly valid pixels subsampled to ``max_points``.
    """
    if tuple(g.start for g in groups) != index.starts:
        raise ValueError("groups must be sorted by start and match the window index")
    if not groups:
        raise ValueError("no groups to chain")

    sims: list[Similarity] = [Similarity.identity()]
    # frame -> (aligned points, valid), registered by the earliest group
    registered: dict[int, tuple[np.ndarray, np.ndarray]] = {}
    for j, frame in enumerate(groups[0].frames):
        registered[frame] = (groups[0].points[j], groups[0].valid[j])

    for g in range(1, len(groups)):
        group = groups[g]
        shared = [f for f in group.frames if f in registered]
        if not shared:
            raise WindowError(
                f"group starting at {group.start} shares no frames with earlier groups "
                f"(stride >= window disconnects the chain)")
        src_parts, dst_parts = [], []
        for frame in shared:
            ref_pts, ref_valid = registered[frame]
            local = frame - group.start
            both = ref_valid & group.valid[local]
            src_parts.append(group.points[local][both])
            dst_parts.append(ref_pts[both])
        src = np.concatenate(src_parts, axis=0)
        dst = np.concatenate(dst_parts, axis=0)
        keep = _subsample(src.shape[0], max_points)
        sim = umeyama(src[keep], dst[keep], with_scale=True)
        sims.append(sim)
        for j, frame in enumerate(group.frames):
            if frame not in registered:
                registered[frame] = (sim.apply(group.points[j]), group.valid[j])
    return sims


def init_intrinsics(points: np.ndarray, valid: np.ndarray | None = None) -> float:
    """Focal length from a point map expressed in its own camera frame.

    Minimizes sum_uv |(u - cx, v - cy) - f (X/Z, Y/Z)| with the principal
    point fixed at the image center, via 10 Weiszfeld-style reweighted
    updates seeded from the closed-form least-squares focal.  Pixels with
    non-positive depth are ignored; raises DegenerateGeometryError when
    fewer than 10 remain.
    """
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 3 or points.shape[-1] != 3:
        raise ValueError(f"points must be (H, W, 3), got {points.shape}")
    height, width = points.shape[:2]
    mask = np.isfinite(points).all(axis=-1) & (points[..., 2] > 0)
    if valid is not None:
        mask &= np.asarray(valid, dtype=bool)
    if not mask.any():
        raise DegenerateGeometryError("all points are behind the camera")
    if mask.sum() < 10:
        raise DegenerateGeometryError(f"only {int(mask.sum())} usable pixels, need at least 10")

    cx, cy = principal_point(height, width)
    u, v = pixel_grid(height, width)
    a = np.stack([u[mask] - cx, v[mask] - cy], axis=1)
    pts = points[mask]
    b = pts[:, :2] / pts[:, 2:3]

    # leverage guard: near-zero-depth outliers get unbounded X/Z and would
    # dominate even the L1 fit
    lever = np.linalg.norm(b, axis=1)
    sane = lever <= 10.0 * max(float(np.median(lever)), 1e-6)
    if sane.sum() >= 10:
        a, b = a[sane], b[sane]

    ab = np.sum(a * b, axis=1)
    bb = np.sum(b * b, axis=1)
    denom = np.sum(bb)
    if denom < 1e-300:
        raise DegenerateGeometryError("points project onto the principal point only")
    f = float(np.sum(ab) / denom)
    for _ in range(10):
        r = np.linalg.norm(a - f * b, axis=1)
        w = 1.0 / np.maximum(r, 1e-12)
        f = float(np.sum(w * ab) / np.sum(w * bb))
    return f


def _dlt_projection(pts: np.ndarray, x2d: np.ndarray) -> np.ndarray | None:
    """Conditioned direct linear transform for x ~ P X, any image-side units.

    Both sides are centered and scaled before the solve (the rank test is
    meaningless otherwise); returns the denormalized 3x4 matrix, or None when
    the constraint matrix is rank-deficient (e.g. coplanar points).
    """
    n = pts.shape[0]
    mu_p, sc_p = pts.mean(axis=0), max(float(pts.std()), 1e-12)
    mu_x, sc_x = x2d.mean(axis=0), max(float(x2d.std()), 1e-12)
    Pn = (pts - mu_p) / sc_p
    xn = (x2d - mu_x) / sc_x

    A = np.zeros((2 * n, 12))
    Xh = np.concatenate([Pn, np.ones((n, 1))], axis=1)
    A[0::2, 0:4] = Xh
    A[0::2, 8:12] = -xn[:, 0:1] * Xh
    A[1::2, 4:8] = Xh
    A[1::2, 8:12] = -xn[:, 1:2] * Xh
    _, s, Vt = np.linalg.svd(A, full_matrices=False)
    if s[-2] <= 1e-9 * max(s[0], 1e-300):
        return None
    P = Vt[-1].reshape(3, 4)
    Tx_inv = np.array([[sc_x, 0, mu_x[0]], [0, sc_x, mu_x[1]], [0, 0, 1.0]])
    Tp = np.eye(4) / sc_p
    Tp[:3, 3] = -mu_p / sc_p
    Tp[3, 3] = 1.0
    return Tx_inv @ P @ Tp


def _dlt_pose(pts: np.ndarray, xn: np.ndarray) -> tuple[np.ndarray, np.ndarray] | None:
    """Direct linear pose from >= 6 points with pre-normalized image coords.

    Returns world-to-camera (R, t) or None when the sample is degenerate
    (coplanar points, rank loss) or violates cheirality.
    """
    P = _dlt_projection(pts, xn)
    if P is None:
        return None
    if np.linalg.det(P[:, :3]) < 0:
        P = -P
    M = P[:, :3]
    U, S, Vt2 = np.linalg.svd(M)
    if S[0] < 1e-12 or S[-1] <= 1e-6 * S[0]:
        return None
    R = U @ np.diag([1.0, 1.0, np.sign(np.linalg.det(U @ Vt2))]) @ Vt2
    scale = float(np.mean(S))
    t = P[:, 3] / scale
    if np.median(pts @ R[2] + t[2]) <= 0:
        return None
    return R, t


def ransac_pnp(points: np.ndarray, intrinsics: Intrinsics, iters: int = 256,
               thresh_px: float = 3.0, seed: int = 0,
               valid: np.ndarray | None = None) -> tuple[Pose, np.ndarray]:
    """Robust pose from a dense pixel-grid <-> point-map correspondence set.

    A 6-point direct linear solver runs inside RANSAC (intrinsics are only
    approximate at init time, so no minimal P3P), the best hypothesis by
    inlier count is refit on all its inliers, and the returned mask is the
    recomputed inlier set.  Deterministic for a fixed seed.
    """
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 3 or points.shape[-1] != 3:
        raise ValueError(f"points must be (H, W, 3), got {points.shape}")
    height, width = points.shape[:2]
    mask = np.isfinite(points).all(axis=-1)
    if valid is not None:
        mask &= np.asarray(valid, dtype=bool)
    vs, us = np.nonzero(mask)
    pts = points[mask]
    n = pts.shape[0]
    if n < 6:
        raise DegenerateGeometryError(f"need at least 6 correspondences, got {n}")

    xn = np.stack([(us - intrinsics.cx) / intrinsics.fx,
                   (vs - intrinsics.cy) / intrinsics.fy], axis=1)
    pix = np.stack([us, vs], axis=1).astype(np.float64)

    def reproject_inliers(R: np.ndarray, t: np.ndarray) -> np.ndarray:
        cam = pts @ R.T + t
        z = cam[:, 2]
        front = z > 1e-9
        zz = np.where(front, z, 1.0)
        du = intrinsics.fx * cam[:, 0] / zz + intrinsics.cx - pix[:, 0]
        dv = intrinsics.fy * cam[:, 1] / zz + intrinsics.cy - pix[:, 1]
        return front & (du * du + dv * dv < thresh_px * thresh_px)

    rng = np.random.default_rng(seed)
    best_count = -1
    best_inl = None
    best_pose = None
    for _ in range(iters):
        sample = rng.choice(n, size=6, replace=False)
        sol = _dlt_pose(pts[sample], xn[sample])
        if sol is None:
            continue
        inl = reproject_inliers(*sol)
        count = int(inl.sum())
        if count > best_count:
            best_count = count
            best_inl = inl
            best_pose = sol

    if best_inl is None or best_count < max(6, 0.1 * n):
        raise EstimationError(
            f"PnP failed: best hypothesis has {max(best_count, 0)}/{n} inliers (< 10%)")

    support = np.nonzero(best_inl)[0][_subsample(best_count, 2048)]
    refined = _dlt_pose(pts[support], xn[support])
    if refined is None:
        refined = best_pose  # near-planar inlier set: keep the sample pose
    R, t = refined
    inliers = reproject_inliers(R, t)
    full = np.zeros((height, width), dtype=bool)
    full[vs[inliers], us[inliers]] = True
    return Pose(R, -R.T @ t), full


def _resect_focal(points: np.ndarray, valid: np.ndarray, height: int, width: int) -> float | None:
    """Focal from a full projective resection of one frame's fused points.

    Solves the 11-dof projection matrix by DLT and splits off the calibration
    with an RQ decomposition.  Unlike the reference-map fit this is exact
    under any similarity gauge of the world points, so it bootstraps the
    focal/pose alternation.  Returns None when degenerate or implausible.
    """
    from .ray_solver import rq_decompose  # local import: avoids a module cycle

    vs, us = np.nonzero(valid & np.isfinite(points).all(axis=-1))
    if vs.size < 8:
        return None
    keep = _subsample(vs.size, 2048)
    pts = points[vs[keep], us[keep]]
    pix = np.stack([us[keep], vs[keep]], axis=1).astype(np.float64)

    # Hartley-style conditioning on both sides
    mu_p, sc_p = pts.mean(axis=0), max(float(pts.std()), 1e-9)
    mu_x, sc_x = pix.mean(axis=0), max(float(pix.std()), 1e-9)
    Pn = (pts - mu_p) / sc_p
    xn = (pix - mu_x) / sc_x

    n = Pn.shape[0]
    A = np.zeros((2 * n, 12))
    Xh = np.concatenate([Pn, np.ones((n, 1))], axis=1)
    A[0::2, 0:4] = Xh
    A[0::2, 8:12] = -xn[:, 0:1] * Xh
    A[1::2, 4:8] = Xh
    A[1::2, 8:12] = -xn[:, 1:2] * Xh
    _, s, Vt = np.linalg.svd(A, full_matrices=False)
    if s[-2] <= 1e-9 * max(s[0], 1e-300):
        return None
    P = Vt[-1].reshape(3, 4)
    # undo the conditioning: x = Tx^-1 xn, X = Tp^-1 Xn
    Tx_inv = np.array([[sc_x, 0, mu_x[0]], [0, sc_x, mu_x[1]], [0, 0, 1.0]])
    Tp = np.eye(4) / sc_p
    Tp[:3, 3] = -mu_p / sc_p
    Tp[3, 3] = 1.0
    P = Tx_inv @ P @ Tp
    M = P[:, :3]
    if abs(np.linalg.det(M)) < 1e-12:
        return None
    try:
        K, _ = rq_decompose(M)
    except DegenerateGeometryError:
        return None
    f = 0.5 * (K[0, 0] + K[1, 1])
    big = float(max(height, width))
    plausible = (0.2 * big < f < 50.0 * big
                 and abs(K[0, 1]) < 0.05 * f
                 and abs(K[0, 2] - (width - 1) / 2) < width
                 and abs(K[1, 2] - (height - 1) / 2) < height)
    return float(f) if plausible else None


def _fuse_points(groups: list[WindowGroup], sims: list[Similarity], num_frames: int,
                 sigma_floor: float) -> tuple[np.ndarray, np.ndarray]:
    """1/sigma-weighted mean of aligned group points per frame."""
    height, width = groups[0].height, groups[0].width
    acc = np.zeros((num_frames, height, width, 3))
    wacc = np.zeros((num_frames, height, width))
    for group, sim in zip(groups, sims):
        aligned = sim.apply(group.points)
        w = group.valid / np.maximum(group.sigma, sigma_floor)
        for j, frame in enumerate(group.frames):
            acc[frame] += w[j][..., None] * aligned[j]
            wacc[frame] += w[j]
    fused_valid = wacc > 0
    acc[fused_valid] /= wacc[fused_valid][..., None]
    return acc, fused_valid


def _regauge_to_frame0(init: InitState) -> InitState:
    """Rigidly re-express everything so frame 0 has identity pose."""
    R0 = init.rotations[0].copy()
    o0 = init.centers[0].copy()
    rotations = np.einsum('nij,kj->nik', init.rotations, R0)
    centers = (init.centers - o0) @ R0.T
    sims = [Similarity(s.scale, R0 @ s.rotation, R0 @ (s.shift - o0)) for s in init.group_sims]
    return InitState(sims, rotations, centers, init.focals, init.disparity)


def build_init(groups: list[WindowGroup], index: WindowIndex, *, pnp_iters: int = 256,
               pnp_thresh_px: float = 3.0, seed: int = 0, refine_rounds: int = 2,
               sigma_floor: float = SIGMA_FLOOR) -> InitState:
    """Full warm start: chain, estimate intrinsics, solve poses, seed disparity.

    Focal lengths start from each clip's reference-frame point map (earliest
    clip wins for shared frames); because those maps carry the clip's gauge
    error, a couple of rounds of (re-express fused points in the current
    camera -> refit focal -> refit pose) follow to break the intrinsics/pose
    circularity.
    """
    num_frames = index.num_frames
    height, width = groups[0].height, groups[0].width
    sims = chain_groups(groups, index)
    fused, fused_valid = _fuse_points(groups, sims, num_frames, sigma_floor)

    # focal bootstrap: projective resection of the fused points is exact
    # under the chained gauge; the clip-reference projection fit (which the
    # refinement rounds below also use) is the fallback
    ref_focal: dict[int, float] = {}
    for group in groups:
        try:
            f = init_intrinsics(group.points[0], group.valid[0])
        except DegenerateGeometryError:
            continue
        if np.isfinite(f) and f > 0 and group.start not in ref_focal:
            ref_focal[group.start] = f
    focals = np.empty(num_frames)
    default_f = float(np.median(list(ref_focal.values()))) if ref_focal else float(max(height, width))
    for i in range(num_frames):
        f = _resect_focal(fused[i], fused_valid[i], height, width)
        if f is None:
            owners = [g.start for g in groups if g.start <= i < g.start + g.num_frames]
            f = next((ref_focal[s] for s in owners if s in ref_focal), default_f)
        focals[i] = f

    cx, cy = principal_point(height, width)

    def robust_pnp(i: int, focal: float, seed_i: int) -> Pose:
        # the focal is only approximate before the refinement rounds, so a
        # tight reprojection gate can starve RANSAC; escalate it on failure
        last: EstimationError | None = None
        for factor in (1.0, 3.0, 9.0, 27.0):
            try:
                pose, _ = ransac_pnp(fused[i], Intrinsics(focal, focal, cx, cy),
                                     iters=pnp_iters, thresh_px=pnp_thresh_px * factor,
                                     seed=seed_i, valid=fused_valid[i])
                return pose
            except EstimationError as e:
                last = e
        raise EstimationError(f"frame {i}: {last}")

    rotations = np.empty((num_frames, 3, 3))
    centers = np.empty((num_frames, 3))
    for i in range(num_frames):
        pose = robust_pnp(i, focals[i], seed + i)
        rotations[i] = pose.rotation
        centers[i] = pose.center

    for round_idx in range(refine_rounds):
        for i in range(num_frames):
            pose = Pose(rotations[i], centers[i])
            try:
                f = init_intrinsics(pose.to_camera(fused[i]), fused_valid[i])
            except DegenerateGeometryError:
                f = focals[i]
            if np.isfinite(f) and f > 0:
                focals[i] = f
            pose = robust_pnp(i, focals[i], seed + (round_idx + 1) * 10_000 + i)
            rotations[i] = pose.rotation
            centers[i] = pose.center

    disparity = np.full((num_frames, height, width), D_MIN / 2)
    for i in range(num_frames):
        z = (fused[i] - centers[i]) @ rotations[i][2]
        ok = fused_valid[i] & (z > 1e-9)
        disparity[i][ok] = 1.0 / z[ok]

    init = InitState(sims, rotations, centers, focals, disparity)
    logger.info("init: %d groups chained, focal range [%.2f, %.2f]",
                len(groups), focals.min(), focals.max())
    return _regauge_to_frame0(init)
