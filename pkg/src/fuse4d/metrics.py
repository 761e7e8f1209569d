"""Evaluation protocols: affine-invariant video depth and aligned trajectories.

Depth: one scale and shift is fitted in disparity space jointly over every
valid pixel of the whole sequence, then absolute relative error and the
delta < 1.25 inlier percentage are computed in depth space, pooled over all
pixels.  Trajectory: predicted poses are aligned to ground truth with a
similarity (scale on, because monocular reconstructions are defined up to
scale) before the absolute translation RMSE and the relative pose errors
over fixed frame intervals.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import DegenerateGeometryError
from .geometry import Pose, Similarity
from .initialization import umeyama
from .rotations import geodesic_angle

#: ground-truth disparities below this are treated as missing
GT_D_MIN = 1e-6


@dataclass
class DepthEvalReport:
    abs_rel: float
    delta_125: float              # percentage in [0, 100]
    per_frame_abs_rel: list[float]
    per_frame_delta: list[float]
    scale: float
    shift: float

    def to_text(self) -> str:
        lines = [
            f"abs_rel {self.abs_rel!r}",
            f"delta_125 {self.delta_125!r}",
            f"scale {self.scale!r}",
            f"shift {self.shift!r}",
        ]
        for i, (a, d) in enumerate(zip(self.per_frame_abs_rel, self.per_frame_delta)):
            lines.append(f"frame_{i}_abs_rel {a!r}")
            lines.append(f"frame_{i}_delta_125 {d!r}")
        return "\n".join(lines) + "\n"


@dataclass
class TrajEvalReport:
    ate: float
    rpe_trans: float
    rpe_rot_deg: float
    scale: float
    rotation: np.ndarray
    shift: np.ndarray

    def to_text(self) -> str:
        return (f"ate {self.ate!r}\n"
                f"rpe_trans {self.rpe_trans!r}\n"
                f"rpe_rot_deg {self.rpe_rot_deg!r}\n"
                f"scale {self.scale!r}\n")


def parse_report(text: str) -> dict[str, float]:
    out = {}
    for line in text.splitlines():
        line = line.strip()
        if not line:
            continue
        key, value = line.split()
        out[key] = float(value)
    return out


def _stack_masked(pred, gt, mask):
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch: pred {pred.shape} vs gt {gt.shape}")
    m = gt >= GT_D_MIN
    m &= np.isfinite(gt) & np.isfinite(pred)
    if mask is not None:
        m &= np.asarray(mask, dtype=bool)
    return pred, gt, m


def align_depth_global(pred: np.ndarray, gt: np.ndarray,
                       mask: np.ndarray | None = None) -> tuple[float, float]:
    """Single least-squares (scale, shift) with scale on the predictions,
    fitted in disparity space over all valid pixels of all frames jointly.

    Degenerate inputs (constant ground truth or constant predictions) fall
    back to a shift-only fit with scale 1.
    """
    pred, gt, m = _stack_masked(pred, gt, mask)
    p = pred[m]
    g = gt[m]
    if p.size < 2:
        raise DegenerateGeometryError("need at least 2 valid pixels to fit scale and shift")
    var_p = float(np.var(p))
    var_g = float(np.var(g))
    if var_p < 1e-18 or var_g < 1e-18:
        return 1.0, float(g.mean() - p.mean())
    scale = float(np.mean((p - p.mean()) * (g - g.mean())) / var_p)
    shift = float(g.mean() - scale * p.mean())
    return scale, shift


def depth_metrics(pred: np.ndarray, gt: np.ndarray, mask: np.ndarray | None = None,
                  scale: float = 1.0, shift: float = 0.0) -> DepthEvalReport:
    """Abs Rel and delta < 1.25 in depth space for already-aligned disparities.

    ``scale``/``shift`` are only recorded in the report.  Aligned predictions
    that are non-positive at a pixel count as gross failures (clamped to a
    tiny disparity, i.e. a huge depth).
    """
    pred, gt, m = _stack_masked(pred, gt, mask)
    depth_gt = np.where(m, 1.0 / np.where(m, gt, 1.0), np.nan)
    pred_clamped = np.maximum(pred, 1e-12)
    depth_pred = np.where(m, 1.0 / pred_clamped, np.nan)

    abs_rel_map = np.abs(depth_pred - depth_gt) / depth_gt
    ratio = np.maximum(depth_pred / depth_gt, depth_gt / depth_pred)
    inlier_map = ratio < 1.25

    abs_rel = float(np.mean(abs_rel_map[m]))
    delta = float(100.0 * np.mean(inlier_map[m]))

    per_abs, per_delta = [], []
    for i in range(pred.shape[0]):
        mi = m[i]
        if mi.any():
            per_abs.append(float(np.mean(abs_rel_map[i][mi])))
            per_delta.append(float(100.0 * np.mean(inlier_map[i][mi])))
        else:
            per_abs.append(float("nan"))
            per_delta.append(float("nan"))
    return DepthEvalReport(abs_rel, delta, per_abs, per_delta, scale, shift)


def evaluate_depth(pred: np.ndarray, gt: np.ndarray,
                   mask: np.ndarray | None = None) -> DepthEvalReport:
    """Global scale-shift alignment followed by the depth metrics."""
    scale, shift = align_depth_global(pred, gt, mask)
    pred = np.asarray(pred, dtype=np.float64)
    return depth_metrics(scale * pred + shift, gt, mask, scale=scale, shift=shift)


def _collinear_align(pred_c: np.ndarray, gt_c: np.ndarray) -> Similarity:
    # straight-line trajectories: match dominant directions, fit scale along them
    mu_p = pred_c.mean(axis=0)
    mu_g = gt_c.mean(axis=0)
    cp = pred_c - mu_p
    cg = gt_c - mu_g
    _, _, vp = np.linalg.svd(cp)
    _, _, vg = np.linalg.svd(cg)
    a = vp[0] / max(np.linalg.norm(vp[0]), 1e-300)
    b = vg[0] / max(np.linalg.norm(vg[0]), 1e-300)
    if float(np.dot(cp @ a, cg @ b)) < 0:
        b = -b
    v = np.cross(a, b)
    c = float(np.dot(a, b))
    if np.linalg.norm(v) < 1e-12:
        R = np.eye(3) if c > 0 else -np.eye(3) + 2 * np.outer(a, a)
    else:
        vx = np.array([[0, -v[2], v[1]], [v[2], 0, -v[0]], [-v[1], v[0], 0]])
        R = np.eye(3) + vx + vx @ vx / (1 + c)
    denom = float(np.sum((cp @ a) ** 2))
    scale = float(np.sum((cg @ b) * (cp @ a)) / denom) if denom > 1e-18 else 1.0
    scale = abs(scale) if scale != 0 else 1.0
    return Similarity(scale, R, mu_g - scale * R @ mu_p)


def traj_metrics(pred: list[Pose], gt: list[Pose], rpe_delta: int = 1) -> TrajEvalReport:
    """ATE / RPE-T / RPE-R after similarity alignment of the camera centers.

    ATE is the RMSE of aligned center errors; RPE compares relative motion
    over (i, i + rpe_delta) pairs on the aligned trajectory, translation as
    RMSE of vector differences, rotation as RMSE geodesic angle in degrees.
    """
    if len(pred) != len(gt):
        raise ValueError(f"trajectory length mismatch: {len(pred)} vs {len(gt)}")
    n = len(pred)
    if n < 3:
        raise ValueError(f"need at least 3 poses, got {n}")
    if rpe_delta < 1 or rpe_delta >= n:
        raise ValueError(f"rpe_delta must be in [1, {n - 1}], got {rpe_delta}")

    pred_c = np.stack([p.center for p in pred])
    gt_c = np.stack([p.center for p in gt])
    try:
        sim = umeyama(pred_c, gt_c, with_scale=True)
    except DegenerateGeometryError:
        sim = _collinear_align(pred_c, gt_c)

    aligned_c = sim.apply(pred_c)
    ate = float(np.sqrt(np.mean(np.sum((aligned_c - gt_c) ** 2, axis=1))))

    # world rotation by sim.rotation turns world-to-camera R into R @ sim.rotation^T
    pred_R = np.stack([p.rotation for p in pred]) @ sim.rotation.T
    gt_R = np.stack([p.rotation for p in gt])

    t_err2 = []
    r_err2 = []
    for i in range(n - rpe_delta):
        j = i + rpe_delta
        dt_pred = pred_R[i] @ (aligned_c[j] - aligned_c[i])
        dt_gt = gt_R[i] @ (gt_c[j] - gt_c[i])
        t_err2.append(float(np.sum((dt_pred - dt_gt) ** 2)))
        rel_pred = pred_R[j] @ pred_R[i].T
        rel_gt = gt_R[j] @ gt_R[i].T
        r_err2.append(geodesic_angle(rel_pred, rel_gt) ** 2)
    rpe_t = float(np.sqrt(np.mean(t_err2)))
    rpe_r = float(np.degrees(np.sqrt(np.mean(r_err2))))
    return TrajEvalReport(ate, rpe_t, rpe_r, sim.scale, sim.rotation, sim.shift)
