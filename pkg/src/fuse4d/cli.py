"""Command-line pipeline over scene bundles.

Subcommands: ``synth`` (synthetic ground-truth bundle), ``perturb`` (cut into
windows and corrupt), ``align`` (fuse a prediction bundle), ``eval-depth`` /
``eval-pose`` (reports against ground truth), ``export-ply`` and
``export-traj``.  Exit codes: 0 success, 1 usage error, 2 data error.
Logging verbosity comes from the GEO4D_LOG environment variable
(quiet | info | debug).
"""

from __future__ import annotations

import argparse
import logging
import os
import sys

import numpy as np

from . import __version__
from .alignment import AlignConfig, align_windows
from .bundle import (ResultPayload, SceneBundle, export_ply, export_trajectory,
                     read_bundle, write_bundle)
from .exceptions import BundleError
from .metrics import evaluate_depth, traj_metrics
from .oracle import PerturbSpec, SceneSpec, generate_scene, make_predictions
from .windows import build_window_index

logger = logging.getLogger("fuse4d")


class _Parser(argparse.ArgumentParser):
    """argparse that exits 1 on usage errors instead of 2."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _configure_logging() -> None:
    level = os.environ.get("GEO4D_LOG", "info").strip().lower()
    mapping = {"quiet": logging.WARNING, "info": logging.INFO, "debug": logging.DEBUG}
    logging.basicConfig(stream=sys.stderr, level=mapping.get(level, logging.INFO),
                        format="%(levelname)s %(name)s: %(message)s")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="fuse4d", description=__doc__)
    parser.add_argument("--version", action="version", version=f"fuse4d {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="generate a synthetic ground-truth bundle")
    p.add_argument("--out", required=True, help="output bundle directory")
    p.add_argument("--frames", type=int, default=30)
    p.add_argument("--height", type=int, default=48)
    p.add_argument("--width", type=int, default=64)
    p.add_argument("--trajectory", choices=["orbit", "dolly", "sinusoid"], default="orbit")
    p.add_argument("--spheres", type=int, default=4)
    p.add_argument("--moving", type=int, default=2)
    p.add_argument("--focal-min", type=float, default=80.0)
    p.add_argument("--focal-max", type=float, default=160.0)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("perturb", help="cut ground truth into corrupted window predictions")
    p.add_argument("--in", dest="src", required=True, help="ground-truth bundle")
    p.add_argument("--out", required=True, help="output prediction bundle")
    p.add_argument("--window", type=int, default=16)
    p.add_argument("--stride", type=int, default=4)
    p.add_argument("--rot-deg", type=float, default=0.0, help="max point-map group rotation")
    p.add_argument("--scale-range", type=float, nargs=2, default=(1.0, 1.0), metavar=("LO", "HI"))
    p.add_argument("--shift", type=float, default=0.0, help="point-map group shift magnitude")
    p.add_argument("--disp-scale-range", type=float, nargs=2, default=(1.0, 1.0), metavar=("LO", "HI"))
    p.add_argument("--disp-shift", type=float, default=0.0)
    p.add_argument("--ray-rot-deg", type=float, default=0.0)
    p.add_argument("--ray-scale-range", type=float, nargs=2, default=(1.0, 1.0), metavar=("LO", "HI"))
    p.add_argument("--ray-shift", type=float, default=0.0)
    p.add_argument("--noise-points", type=float, default=0.0)
    p.add_argument("--noise-disparity", type=float, default=0.0)
    p.add_argument("--noise-rays", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("align", help="fuse a prediction bundle into one reconstruction")
    p.add_argument("--in", dest="src", required=True, help="prediction bundle")
    p.add_argument("--out", required=True, help="output bundle with the result section")
    p.add_argument("--window", type=int, default=16)
    p.add_argument("--stride", type=int, default=4)
    p.add_argument("--iters", type=int, default=500)
    p.add_argument("--align-start", type=int, default=150)
    p.add_argument("--alpha1", type=float, default=1.0, help="point loss weight")
    p.add_argument("--alpha2", type=float, default=0.5, help="disparity loss weight")
    p.add_argument("--alpha3", type=float, default=0.1, help="camera loss weight")
    p.add_argument("--alpha4", type=float, default=0.01, help="smoothness loss weight")
    p.add_argument("--robust", choices=["huber", "l1"], default="huber")
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("eval-depth", help="affine-invariant depth report vs ground truth")
    p.add_argument("--pred", required=True, help="bundle with a result section")
    p.add_argument("--gt", default=None, help="bundle with ground truth (default: --pred)")
    p.add_argument("--out", default=None, help="write the report here instead of stdout")

    p = sub.add_parser("eval-pose", help="trajectory report vs ground truth")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", default=None)
    p.add_argument("--rpe-delta", type=int, default=1)
    p.add_argument("--out", default=None)

    p = sub.add_parser("export-ply", help="write the fused point cloud")
    p.add_argument("--in", dest="src", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--stride", type=int, default=1)

    p = sub.add_parser("export-traj", help="write the trajectory as TUM text")
    p.add_argument("--in", dest="src", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--source", choices=["result", "scene"], default="result")
    return parser


def _cmd_synth(args) -> int:
    spec = SceneSpec(num_frames=args.frames, height=args.height, width=args.width,
                     trajectory=args.trajectory, num_spheres=args.spheres,
                     num_moving=args.moving, focal_range=(args.focal_min, args.focal_max),
                     seed=args.seed)
    gt = generate_scene(spec)
    bundle = SceneBundle(num_frames=gt.num_frames, height=gt.height, width=gt.width,
                         scene=gt, provenance={"kind": "synthetic", "seed": args.seed,
                                               "trajectory": args.trajectory})
    write_bundle(bundle, args.out)
    logger.info("wrote ground-truth bundle with %d frames to %s", gt.num_frames, args.out)
    return 0


def _cmd_perturb(args) -> int:
    src = read_bundle(args.src)
    if src.scene is None:
        raise BundleError(f"{args.src} has no scene section to perturb")
    index = build_window_index(src.num_frames, args.window, args.stride)
    spec = PerturbSpec(rot_deg=args.rot_deg, scale_range=tuple(args.scale_range),
                       shift_mag=args.shift, disp_scale_range=tuple(args.disp_scale_range),
                       disp_shift_mag=args.disp_shift, ray_rot_deg=args.ray_rot_deg,
                       ray_scale_range=tuple(args.ray_scale_range), ray_shift_mag=args.ray_shift,
                       noise_points=args.noise_points, noise_disparity=args.noise_disparity,
                       noise_rays=args.noise_rays, seed=args.seed)
    groups, _ = make_predictions(src.scene, index, spec)
    out = SceneBundle(num_frames=src.num_frames, height=src.height, width=src.width,
                      window=index, scene=src.scene, groups=groups,
                      provenance={"kind": "perturbed", "perturb_seed": args.seed})
    write_bundle(out, args.out)
    logger.info("wrote %d window groups (V=%d, s=%d) to %s",
                len(groups), args.window, args.stride, args.out)
    return 0


def _cmd_align(args) -> int:
    src = read_bundle(args.src)
    if src.groups is None:
        raise BundleError(f"{args.src} has no window groups; run perturb first")
    index = build_window_index(src.num_frames, args.window, args.stride)
    by_start = {g.start: g for g in src.groups}
    missing = [s for s in index.starts if s not in by_start]
    if missing:
        raise BundleError(f"{args.src} lacks groups for window starts {missing} "
                          f"(available: {sorted(by_start)})")
    groups = [by_start[s] for s in index.starts]
    cfg = AlignConfig(alpha_point=args.alpha1, alpha_depth=args.alpha2,
                      alpha_cam=args.alpha3, alpha_smooth=args.alpha4,
                      iters_total=args.iters, align_start_iter=args.align_start,
                      robust=args.robust)
    result = align_windows(groups, index, cfg, seed=args.seed)
    out = SceneBundle(num_frames=src.num_frames, height=src.height, width=src.width,
                      window=index, scene=src.scene, groups=None,
                      result=ResultPayload(result.state, result.config_dict(), result.trace),
                      provenance={"kind": "aligned", "align_seed": args.seed})
    write_bundle(out, args.out)
    logger.info("aligned %d groups over %d frames -> %s", len(groups), src.num_frames, args.out)
    return 0


def _load_pred_gt(pred_path: str, gt_path: str | None):
    pred = read_bundle(pred_path)
    if pred.result is None:
        raise BundleError(f"{pred_path} has no result section; run align first")
    gt_bundle = read_bundle(gt_path) if gt_path else pred
    if gt_bundle.scene is None:
        raise BundleError("no ground-truth scene available; pass --gt")
    return pred, gt_bundle.scene


def _emit(text: str, out: str | None) -> None:
    if out:
        with open(out, "w") as fh:
            fh.write(text)
    sys.stdout.write(text)


def _cmd_eval_depth(args) -> int:
    pred, scene = _load_pred_gt(args.pred, args.gt)
    report = evaluate_depth(pred.result.state.disparity, scene.disparity())
    _emit(report.to_text(), args.out)
    return 0


def _cmd_eval_pose(args) -> int:
    pred, scene = _load_pred_gt(args.pred, args.gt)
    report = traj_metrics(pred.result.state.poses(), scene.poses, rpe_delta=args.rpe_delta)
    _emit(report.to_text(), args.out)
    return 0


def _cmd_export_ply(args) -> int:
    src = read_bundle(args.src)
    if src.result is None:
        raise BundleError(f"{args.src} has no result section")
    count = export_ply(src.result.state, args.out, stride=args.stride)
    logger.info("wrote %d vertices to %s", count, args.out)
    return 0


def _cmd_export_traj(args) -> int:
    src = read_bundle(args.src)
    if args.source == "result":
        if src.result is None:
            raise BundleError(f"{args.src} has no result section")
        poses = src.result.state.poses()
    else:
        if src.scene is None:
            raise BundleError(f"{args.src} has no scene section")
        poses = src.scene.poses
    export_trajectory(poses, args.out)
    logger.info("wrote %d poses to %s", len(poses), args.out)
    return 0


_COMMANDS = {
    "synth": _cmd_synth,
    "perturb": _cmd_perturb,
    "align": _cmd_align,
    "eval-depth": _cmd_eval_depth,
    "eval-pose": _cmd_eval_pose,
    "export-ply": _cmd_export_ply,
    "export-traj": _cmd_export_traj,
}


def main(argv: list[str] | None = None) -> int:
    _configure_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        return _COMMANDS[args.command](args)
    except (ValueError, RuntimeError, OSError) as e:
        print(f"fuse4d {args.command}: error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
