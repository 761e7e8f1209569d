"""Joint alignment of point, disparity and ray-map predictions.

The global state holds one disparity field, focal, rotation and center per
video frame plus, per window group, a similarity for the point maps, an
affine map for the disparity maps and a rotation/scale/shift for the ray
cameras.  Point maps are reparameterized through the pinhole model

    X_uv^i = R_i^T K_i^-1 (u, v, 1)^T / D_uv^i + o_i

so minimizing the point loss disentangles depth, intrinsics and motion.

Optimization is staged: until ``align_start_iter`` only the point and
smoothness losses drive the point-map variables; at that iteration the
disparity and ray-camera group alignments are solved in closed form, and the
weighted combination of all four losses takes over.

Robust penalties use a smooth pseudo-Huber surrogate of |.| by default so
every loss is continuously differentiable and exactly stationary at zero
residual; set ``robust="l1"`` for the exact kinked objective.  All gradient
code is hand-written numpy with fixed reduction order, so runs are
bit-reproducible.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass

import numpy as np

from .exceptions import DegenerateGeometryError, OptimizationError
from .geometry import (D_MIN, SIGMA_FLOOR, Intrinsics, Pose, RayMap, pixel_grid,
                       principal_point)
from .initialization import InitState, build_init, umeyama
from .ray_solver import RayCameraSolution, camera_from_raymap
from .rotations import (normalize_quat, project_to_rotation, quat_to_rotmat,
                        rotmat_grad_to_quat_grad, rotmat_to_quat)
from .windows import WindowGroup, WindowIndex, build_window_index

logger = logging.getLogger("fuse4d")


@dataclass
class AlignConfig:
    """Loss weights, schedule and solver knobs.

    The four weights blend point, disparity, camera and smoothness terms in
    the joint stage.  ``align_start_iter`` must precede ``iters_total``
    (except for the no-op run with zero iterations).
    """

    alpha_point: float = 1.0
    alpha_depth: float = 0.5
    alpha_cam: float = 0.1
    alpha_smooth: float = 0.01
    iters_total: int = 500
    align_start_iter: int = 150
    lr_pose: float = 1e-2
    lr_disparity: float = 1e-3
    lr_focal: float = 1e-2
    lr_schedule: str = "cosine"    # adaptive steps otherwise dither at the lr scale
    lr_floor: float = 1e-3         # fraction of the base rate kept at the end
    sigma_floor: float = SIGMA_FLOOR
    d_min: float = D_MIN
    robust: str = "huber"
    huber_delta: float = 1e-3
    optimize_focal: bool = True
    log_every: int = 50

    def __post_init__(self):
        for name in ("alpha_point", "alpha_depth", "alpha_cam", "alpha_smooth"):
            if getattr(self, name) < 0:
                raise OptimizationError(f"{name} must be >= 0")
        if self.iters_total < 0 or self.align_start_iter < 0:
            raise OptimizationError("iteration counts must be >= 0")
        if self.iters_total > 0 and self.align_start_iter >= self.iters_total:
            raise OptimizationError(
                f"align_start_iter ({self.align_start_iter}) must be < iters_total ({self.iters_total})")
        if self.robust not in ("huber", "l1"):
            raise OptimizationError(f"robust must be 'huber' or 'l1', got {self.robust!r}")
        if self.lr_schedule not in ("cosine", "constant"):
            raise OptimizationError(f"lr_schedule must be 'cosine' or 'constant', got {self.lr_schedule!r}")


# names of the per-frame / per-group variable arrays, in update order
_VAR_NAMES = (
    "disparity", "log_focal", "quat", "center",
    "point_log_scale", "point_quat", "point_shift",
    "depth_log_scale", "depth_shift",
    "cam_quat", "cam_log_scale", "cam_shift",
)


@dataclass
class GlobalState:
    """All optimization variables; scales live in log space, rotations as
    quaternions renormalized after every step.

    Gauge: frame 0 stays at the identity pose and the first group's point
    scale stays 1 (those entries receive no updates).
    """

    disparity: np.ndarray        # (N, H, W)
    log_focal: np.ndarray        # (N,)
    quat: np.ndarray             # (N, 4) world-to-camera
    center: np.ndarray           # (N, 3)
    point_log_scale: np.ndarray  # (G,)
    point_quat: np.ndarray       # (G, 4)
    point_shift: np.ndarray      # (G, 3)
    depth_log_scale: np.ndarray  # (G,)
    depth_shift: np.ndarray      # (G,)
    cam_quat: np.ndarray         # (G, 4)
    cam_log_scale: np.ndarray    # (G,)
    cam_shift: np.ndarray        # (G, 3)
    starts: tuple[int, ...]
    cx: float
    cy: float

    @property
    def num_frames(self) -> int:
        return self.disparity.shape[0]

    @property
    def num_groups(self) -> int:
        return len(self.starts)

    @property
    def height(self) -> int:
        return self.disparity.shape[1]

    @property
    def width(self) -> int:
        return self.disparity.shape[2]

    def copy(self) -> "GlobalState":
        return GlobalState(
            *(getattr(self, n).copy() for n in _VAR_NAMES),
            starts=self.starts, cx=self.cx, cy=self.cy)

    def focals(self) -> np.ndarray:
        return np.exp(self.log_focal)

    def rotations(self) -> np.ndarray:
        return quat_to_rotmat(self.quat)

    def intrinsics(self, frame: int) -> Intrinsics:
        f = float(np.exp(self.log_focal[frame]))
        return Intrinsics(f, f, self.cx, self.cy)

    def pose(self, frame: int) -> Pose:
        return Pose(quat_to_rotmat(self.quat[frame]), self.center[frame])

    def poses(self) -> list[Pose]:
        R = self.rotations()
        return [Pose(R[i], self.center[i]) for i in range(self.num_frames)]

    def point_map(self, frame: int, d_min: float = D_MIN) -> tuple[np.ndarray, np.ndarray]:
        """Reconstructed world points of one frame plus the validity mask."""
        D = self.disparity[frame]
        valid = D >= d_min
        rays = np.empty((self.height, self.width, 3))
        u, v = pixel_grid(self.height, self.width)
        f = float(np.exp(self.log_focal[frame]))
        rays[..., 0] = (u - self.cx) / f
        rays[..., 1] = (v - self.cy) / f
        rays[..., 2] = 1.0
        R = quat_to_rotmat(self.quat[frame])
        pts = (rays / np.where(valid, D, 1.0)[..., None]) @ R + self.center[frame]
        return pts, valid

    @classmethod
    def from_init(cls, init: InitState, starts: tuple[int, ...], height: int, width: int) -> "GlobalState":
        n_groups = len(starts)
        cx, cy = principal_point(height, width)
        return cls(
            disparity=init.disparity.copy(),
            log_focal=np.log(init.focals),
            quat=rotmat_to_quat(init.rotations),
            center=init.centers.copy(),
            point_log_scale=np.log([s.scale for s in init.group_sims]),
            point_quat=rotmat_to_quat(np.stack([s.rotation for s in init.group_sims])),
            point_shift=np.stack([s.shift for s in init.group_sims]),
            depth_log_scale=np.zeros(n_groups),
            depth_shift=np.zeros(n_groups),
            cam_quat=np.tile([1.0, 0.0, 0.0, 0.0], (n_groups, 1)),
            cam_log_scale=np.zeros(n_groups),
            cam_shift=np.zeros((n_groups, 3)),
            starts=tuple(starts), cx=cx, cy=cy)


def zero_grads(state: GlobalState) -> dict[str, np.ndarray]:
    return {name: np.zeros_like(getattr(state, name)) for name in _VAR_NAMES}


def _robust_abs(x: np.ndarray, cfg: AlignConfig) -> tuple[np.ndarray, np.ndarray]:
    """Per-component |x| (or its smooth surrogate) and derivative."""
    if cfg.robust == "l1":
        return np.abs(x), np.sign(x)
    core = np.sqrt(x * x + cfg.huber_delta**2)
    return core - cfg.huber_delta, x / core


def _robust_norm(sq: np.ndarray, cfg: AlignConfig) -> tuple[np.ndarray, np.ndarray]:
    """Penalty of a vector/matrix norm given its squared value.

    Returns (value, w) with dL/dA = w * A for the residual tensor A whose
    squared norm is sq.
    """
    if cfg.robust == "l1":
        nrm = np.sqrt(sq)
        w = np.where(nrm > 1e-12, 1.0 / np.maximum(nrm, 1e-300), 0.0)
        return nrm, w
    core = np.sqrt(sq + cfg.huber_delta**2)
    return core - cfg.huber_delta, 1.0 / core


def _group_slice(state: GlobalState, group: WindowGroup) -> slice:
    return slice(group.start, group.start + group.num_frames)


def _frame_rays(state: GlobalState, idx: slice) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """K^-1 (u, v, 1) per frame of the slice: (V, H, W, 3), plus (kx, ky)."""
    u, v = pixel_grid(state.height, state.width)
    f = np.exp(state.log_focal[idx])[:, None, None]
    kx = (u - state.cx) / f
    ky = (v - state.cy) / f
    k = np.stack([kx, ky, np.ones_like(kx)], axis=-1)
    return k, kx, ky


def loss_point(state: GlobalState, groups: list[WindowGroup], cfg: AlignConfig | None = None,
               compute_grads: bool = True) -> tuple[float, dict[str, np.ndarray] | None]:
    """Weighted L1 mismatch between reparameterized global point maps and the
    similarity-aligned group predictions, per pixel divided by its
    uncertainty (clamped to sigma_floor).  Pixels whose global disparity
    falls below d_min contribute nothing.
    """
    cfg = cfg or AlignConfig()
    grads = zero_grads(state) if compute_grads else None
    total = 0.0
    for g, group in enumerate(groups):
        idx = _group_slice(state, group)
        k, kx, ky = _frame_rays(state, idx)
        R = quat_to_rotmat(state.quat[idx])
        D = state.disparity[idx]
        mask = group.valid & (D >= cfg.d_min)
        inv_d = np.where(mask, 1.0 / np.where(mask, D, 1.0), 0.0)
        rays_world = np.einsum('vba,vhwb->vhwa', R, k)
        X = rays_world * inv_d[..., None] + state.center[idx][:, None, None, :]

        Rg = quat_to_rotmat(state.point_quat[g])
        lam = float(np.exp(state.point_log_scale[g]))
        rotated = np.einsum('ab,vhwb->vhwa', Rg, group.points)
        Y = lam * rotated + state.point_shift[g]

        res = X - Y
        sig = np.maximum(group.sigma, cfg.sigma_floor)
        val, dval = _robust_abs(res, cfg)
        m3 = mask[..., None]
        total += float(np.sum(np.sum(val, axis=-1) / sig * mask))
        if not compute_grads:
            continue
        w = np.where(m3, dval / sig[..., None], 0.0)

        grads["center"][idx] += w.sum(axis=(1, 2))
        grads["disparity"][idx] += -np.sum(w * rays_world, axis=-1) * inv_d * inv_d
        if cfg.optimize_focal:
            a = np.einsum('vab,vhwb->vhwa', R, w)
            grads["log_focal"][idx] += -np.sum((a[..., 0] * kx + a[..., 1] * ky) * inv_d,
                                               axis=(1, 2))
        G_frames = np.einsum('vhwa,vhwb->vab', k * inv_d[..., None], w)
        grads["quat"][idx] += rotmat_grad_to_quat_grad(state.quat[idx], G_frames)

        grads["point_shift"][g] += -w.sum(axis=(0, 1, 2))
        grads["point_log_scale"][g] += -float(np.sum(w * (Y - state.point_shift[g])))
        G_group = -lam * np.einsum('vhwa,vhwb->ab', w, group.points)
        grads["point_quat"][g] += rotmat_grad_to_quat_grad(state.point_quat[g], G_group)
    return total, grads


def loss_depth(state: GlobalState, groups: list[WindowGroup], cfg: AlignConfig | None = None,
               compute_grads: bool = True) -> tuple[float, dict[str, np.ndarray] | None]:
    """L1 gap between the global disparity fields and affinely mapped group
    disparity predictions; masked pixels are skipped."""
    cfg = cfg or AlignConfig()
    grads = zero_grads(state) if compute_grads else None
    total = 0.0
    for g, group in enumerate(groups):
        idx = _group_slice(state, group)
        D = state.disparity[idx]
        mask = group.valid & (D >= cfg.d_min)
        lam = float(np.exp(state.depth_log_scale[g]))
        beta = float(state.depth_shift[g])
        res = D - lam * group.disparity - beta
        val, dval = _robust_abs(res, cfg)
        total += float(np.sum(val * mask))
        if not compute_grads:
            continue
        w = np.where(mask, dval, 0.0)
        grads["disparity"][idx] += w
        grads["depth_shift"][g] += -float(w.sum())
        grads["depth_log_scale"][g] += -lam * float(np.sum(w * group.disparity))
    return total, grads


def loss_cam(state: GlobalState, ray_solutions: list[list[RayCameraSolution | None]],
             cfg: AlignConfig | None = None,
             compute_grads: bool = True) -> tuple[float, dict[str, np.ndarray] | None]:
    """Trajectory consistency against per-(frame, group) ray-solved cameras:
    Frobenius gap of R_i^T (R_g R_ray) to the identity plus Euclidean gap of
    the scaled and shifted ray centers to the frame centers.  Frames whose
    ray solve failed are skipped.
    """
    cfg = cfg or AlignConfig()
    grads = zero_grads(state) if compute_grads else None
    total = 0.0
    R_frames = quat_to_rotmat(state.quat)
    for g, sols in enumerate(ray_solutions):
        if sols is None:
            continue
        frames = [state.starts[g] + j for j, s in enumerate(sols) if s is not None]
        if not frames:
            continue
        entries = [s for s in sols if s is not None]
        Rg = quat_to_rotmat(state.cam_quat[g])
        lam = float(np.exp(state.cam_log_scale[g]))
        beta = state.cam_shift[g]

        R_ray = np.stack([s.rotation for s in entries])          # (F, 3, 3)
        o_ray = np.stack([s.center for s in entries])            # (F, 3)
        Rp = R_frames[frames]                                    # (F, 3, 3)
        B = np.einsum('ab,fbc->fac', Rg, R_ray)                  # R_g R_ray
        A = np.einsum('fba,fbc->fac', Rp, B)                     # R_p^T B
        A = A - np.eye(3)
        sq = np.einsum('fij,fij->f', A, A)
        val_r, w_r = _robust_norm(sq, cfg)

        vvec = lam * o_ray + beta - state.center[frames]
        sq_t = np.einsum('fi,fi->f', vvec, vvec)
        val_t, w_t = _robust_norm(sq_t, cfg)
        total += float(val_r.sum() + val_t.sum())
        if not compute_grads:
            continue

        W = A * w_r[:, None, None]                               # dL/dA
        G_p = np.einsum('fac,fbc->fab', B, W)                    # d/dRp of tr(W^T Rp^T B)
        for j, i in enumerate(frames):
            grads["quat"][i] += rotmat_grad_to_quat_grad(state.quat[i], G_p[j])
        G_g = np.einsum('fab,fbc,fdc->ad', Rp, W, R_ray)         # sum_f Rp W R_ray^T
        grads["cam_quat"][g] += rotmat_grad_to_quat_grad(state.cam_quat[g], G_g)

        Wv = vvec * w_t[:, None]
        np.add.at(grads["center"], frames, -Wv)
        grads["cam_shift"][g] += Wv.sum(axis=0)
        grads["cam_log_scale"][g] += lam * float(np.sum(Wv * o_ray))
    return total, grads


def loss_smooth(state: GlobalState, cfg: AlignConfig | None = None,
                compute_grads: bool = True) -> tuple[float, dict[str, np.ndarray] | None]:
    """Penalize frame-to-frame rotation and center changes; the last frame
    has no successor term."""
    cfg = cfg or AlignConfig()
    grads = zero_grads(state) if compute_grads else None
    n = state.num_frames
    if n < 2:
        return 0.0, grads
    R = quat_to_rotmat(state.quat)
    A = np.einsum('nba,nbc->nac', R[:-1], R[1:]) - np.eye(3)
    sq = np.einsum('nij,nij->n', A, A)
    val_r, w_r = _robust_norm(sq, cfg)
    v = state.center[1:] - state.center[:-1]
    sq_t = np.einsum('ni,ni->n', v, v)
    val_t, w_t = _robust_norm(sq_t, cfg)
    total = float(val_r.sum() + val_t.sum())
    if not compute_grads:
        return total, None

    W = A * w_r[:, None, None]
    G_prev = np.einsum('nac,nbc->nab', R[1:], W)    # d/dR_i of tr(W^T R_i^T R_{i+1})
    G_next = np.einsum('nab,nbc->nac', R[:-1], W)   # d/dR_{i+1}
    G = np.zeros((n, 3, 3))
    G[:-1] += G_prev
    G[1:] += G_next
    grads["quat"] += rotmat_grad_to_quat_grad(state.quat, G)

    Wv = v * w_t[:, None]
    grads["center"][1:] += Wv
    grads["center"][:-1] -= Wv
    return total, grads


def align_depth_closed_form(state: GlobalState, groups: list[WindowGroup],
                            cfg: AlignConfig | None = None) -> list[tuple[float, float]]:
    """Per-group least-squares scale and shift mapping predicted disparities
    onto the current global fields (warm start for the L1 objective).

    Constant predictions degrade to a shift-only fit with scale 1.
    """
    cfg = cfg or AlignConfig()
    out = []
    for group in groups:
        idx = _group_slice(state, group)
        D = state.disparity[idx]
        mask = group.valid & (D >= cfg.d_min)
        dp = D[mask]
        dd = group.disparity[mask]
        if dp.size < 2:
            out.append((1.0, 0.0))
            continue
        var = float(np.var(dd))
        if var < 1e-12:
            out.append((1.0, float(dp.mean() - dd.mean())))
            continue
        lam = float(np.mean((dd - dd.mean()) * (dp - dp.mean())) / var)
        if lam < 1e-6:
            out.append((1.0, float(dp.mean() - dd.mean())))
            continue
        out.append((lam, float(dp.mean() - lam * dd.mean())))
    return out


def align_cam_closed_form(state: GlobalState,
                          ray_solutions: list[list[RayCameraSolution | None]]
                          ) -> list[tuple[np.ndarray, float, np.ndarray]]:
    """Per-group closed-form ray-camera alignment.

    The rotation is the polar projection of sum_i R_i R_ray^T onto SO(3);
    scale and shift come from a similarity fit of ray centers to frame
    centers (whose rotation is the identity when the data follow the
    scale-and-shift model).  Degenerate center sets fall back to scale 1.
    """
    R_frames = quat_to_rotmat(state.quat)
    out = []
    for g, sols in enumerate(ray_solutions):
        if sols is None:
            out.append((np.eye(3), 1.0, np.zeros(3)))
            continue
        frames = [state.starts[g] + j for j, s in enumerate(sols) if s is not None]
        entries = [s for s in sols if s is not None]
        if not entries:
            out.append((np.eye(3), 1.0, np.zeros(3)))
            continue
        R_ray = np.stack([s.rotation for s in entries])
        o_ray = np.stack([s.center for s in entries])
        o_frame = state.center[frames]
        M = np.einsum('fab,fcb->ac', R_frames[frames], R_ray)
        Rg = project_to_rotation(M)
        try:
            sim = umeyama(o_ray, o_frame, with_scale=True)
            lam = sim.scale
        except DegenerateGeometryError:
            lam = 1.0
        beta = o_frame.mean(axis=0) - lam * o_ray.mean(axis=0)
        out.append((Rg, lam, beta))
    return out


def solve_ray_cameras(groups: list[WindowGroup]) -> list[list[RayCameraSolution | None] | None] | None:
    """Run the ray solver once per (frame, group); None entries mark failures.

    Returns None when no group carries ray maps at all.
    """
    if not any(g.has_rays for g in groups):
        return None
    solutions: list[list[RayCameraSolution | None] | None] = []
    failures = 0
    for group in groups:
        if not group.has_rays:
            solutions.append(None)
            continue
        per_frame: list[RayCameraSolution | None] = []
        for j in range(group.num_frames):
            try:
                per_frame.append(camera_from_raymap(RayMap(group.ray_dirs[j], group.ray_moments[j])))
            except DegenerateGeometryError:
                per_frame.append(None)
                failures += 1
        solutions.append(per_frame)
    if failures:
        logger.warning("ray solver failed on %d frame/group pairs; those terms are skipped", failures)
    return solutions


@dataclass
class TraceRow:
    iteration: int
    point: float
    depth: float
    cam: float
    smooth: float
    total: float
    grad_norm: float


class _Adam:
    """Per-array Adam with a fixed learning rate per variable class."""

    def __init__(self, state: GlobalState, cfg: AlignConfig):
        self.lr = {}
        for name in _VAR_NAMES:
            if name == "disparity":
                self.lr[name] = cfg.lr_disparity
            elif name == "log_focal":
                self.lr[name] = cfg.lr_focal
            else:
                self.lr[name] = cfg.lr_pose
        self.m = {n: np.zeros_like(getattr(state, n)) for n in _VAR_NAMES}
        self.v = {n: np.zeros_like(getattr(state, n)) for n in _VAR_NAMES}
        self.t = 0
        self.beta1 = 0.9
        self.beta2 = 0.999
        self.eps = 1e-8

    def step(self, state: GlobalState, grads: dict[str, np.ndarray], scale: float = 1.0) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for name in _VAR_NAMES:
            g = grads[name]
            self.m[name] = self.beta1 * self.m[name] + (1 - self.beta1) * g
            self.v[name] = self.beta2 * self.v[name] + (1 - self.beta2) * g * g
            mhat = self.m[name] / c1
            vhat = self.v[name] / c2
            getattr(state, name)[...] -= scale * self.lr[name] * mhat / (np.sqrt(vhat) + self.eps)


def _accumulate(total: dict[str, np.ndarray], grads: dict[str, np.ndarray] | None,
                weight: float) -> None:
    if grads is None or weight == 0.0:
        return
    for name in _VAR_NAMES:
        total[name] += weight * grads[name]


def _freeze_gauge(grads: dict[str, np.ndarray]) -> None:
    grads["quat"][0] = 0.0
    grads["center"][0] = 0.0
    grads["point_log_scale"][0] = 0.0


def optimize(groups: list[WindowGroup], cfg: AlignConfig,
             init: InitState | GlobalState) -> tuple[GlobalState, list[TraceRow]]:
    """Run the staged alignment; returns the final state and per-iteration
    loss trace (point, depth, cam, smooth, weighted total, gradient norm).

    Deterministic for fixed inputs; aborts with OptimizationError naming the
    offending term if any loss turns non-finite.
    """
    starts = tuple(g.start for g in groups)
    if isinstance(init, GlobalState):
        state = init.copy()
    else:
        state = GlobalState.from_init(init, starts, groups[0].height, groups[0].width)
    if state.starts != starts:
        raise ValueError("state group starts do not match the provided groups")

    ray_solutions = solve_ray_cameras(groups)
    use_cam = ray_solutions is not None
    adam = _Adam(state, cfg)
    trace: list[TraceRow] = []

    for it in range(cfg.iters_total):
        if it == cfg.align_start_iter:
            for g, (lam, beta) in enumerate(align_depth_closed_form(state, groups, cfg)):
                state.depth_log_scale[g] = math.log(lam)
                state.depth_shift[g] = beta
            if use_cam:
                for g, (Rg, lam, beta) in enumerate(align_cam_closed_form(state, ray_solutions)):
                    state.cam_quat[g] = rotmat_to_quat(Rg)
                    state.cam_log_scale[g] = math.log(max(lam, 1e-12))
                    state.cam_shift[g] = beta

        stage1 = it < cfg.align_start_iter
        lp, gp = loss_point(state, groups, cfg)
        ls, gs = loss_smooth(state, cfg)
        ld, gd = loss_depth(state, groups, cfg, compute_grads=not stage1)
        if use_cam:
            lc, gc = loss_cam(state, ray_solutions, cfg, compute_grads=not stage1)
        else:
            lc, gc = 0.0, None

        for name, value in (("point", lp), ("depth", ld), ("cam", lc), ("smooth", ls)):
            if not np.isfinite(value):
                raise OptimizationError(f"{name} loss is non-finite at iteration {it}")

        total_grads = zero_grads(state)
        if stage1:
            _accumulate(total_grads, gp, 1.0)
            _accumulate(total_grads, gs, 1.0)
        else:
            _accumulate(total_grads, gp, cfg.alpha_point)
            _accumulate(total_grads, gd, cfg.alpha_depth)
            _accumulate(total_grads, gc, cfg.alpha_cam)
            _accumulate(total_grads, gs, cfg.alpha_smooth)
        _freeze_gauge(total_grads)
        if not cfg.optimize_focal:
            total_grads["log_focal"][:] = 0.0

        lall = cfg.alpha_point * lp + cfg.alpha_depth * ld + cfg.alpha_cam * lc + cfg.alpha_smooth * ls
        gnorm = math.sqrt(sum(float(np.sum(g * g)) for g in total_grads.values()))
        trace.append(TraceRow(it, lp, ld, lc, ls, lall, gnorm))
        if cfg.log_every and it % cfg.log_every == 0:
            logger.info("iter %4d  point %.6g  depth %.6g  cam %.6g  smooth %.6g  total %.6g  |g| %.3g",
                        it, lp, ld, lc, ls, lall, gnorm)

        if cfg.lr_schedule == "cosine":
            frac = it / max(cfg.iters_total - 1, 1)
            lr_scale = cfg.lr_floor + (1.0 - cfg.lr_floor) * 0.5 * (1.0 + math.cos(math.pi * frac))
        else:
            lr_scale = 1.0
        adam.step(state, total_grads, scale=lr_scale)
        state.quat[...] = normalize_quat(state.quat)
        state.point_quat[...] = normalize_quat(state.point_quat)
        state.cam_quat[...] = normalize_quat(state.cam_quat)

    return state, trace


@dataclass
class AlignResult:
    state: GlobalState
    trace: list[TraceRow]
    init: InitState
    config: AlignConfig

    def config_dict(self) -> dict:
        return asdict(self.config)


def align_windows(groups: list[WindowGroup], index: WindowIndex | None = None,
                  cfg: AlignConfig | None = None, seed: int = 0) -> AlignResult:
    """Initialization plus staged optimization in one call."""
    cfg = cfg or AlignConfig()
    if index is None:
        starts = tuple(g.start for g in groups)
        num_frames = max(g.start + g.num_frames for g in groups)
        index = WindowIndex(num_frames, groups[0].num_frames, 1, starts)
    init = build_init(groups, index, seed=seed, sigma_floor=cfg.sigma_floor)
    state, trace = optimize(groups, cfg, init)
    return AlignResult(state, trace, init, cfg)
