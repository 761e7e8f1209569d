"""fuse4d: fuse per-window point, disparity and ray-map predictions into a
globally consistent trajectory, per-frame depth and intrinsics."""

__version__ = "0.1.0"

from .alignment import (AlignConfig, AlignResult, GlobalState, TraceRow,
                        align_cam_closed_form, align_depth_closed_form,
                        align_windows, loss_cam, loss_depth, loss_point,
                        loss_smooth, optimize, solve_ray_cameras)
from .bundle import (ResultPayload, SceneBundle, export_ply, export_trajectory,
                     read_bundle, read_ply_vertices, read_trajectory, write_bundle)
from .exceptions import (BundleError, DegenerateGeometryError, EstimationError,
                         GeometryError, OptimizationError, WindowError)
from .geometry import (D_MIN, SIGMA_FLOOR, Intrinsics, Pose, RayMap, Similarity,
                       apply_similarity, camera_depths, pixel_grid, pixel_rays,
                       point_map_from_depth, principal_point, project_points,
                       raymap_from_camera)
from .initialization import (InitState, build_init, chain_groups, init_intrinsics,
                             ransac_pnp, umeyama)
from .metrics import (DepthEvalReport, TrajEvalReport, align_depth_global,
                      depth_metrics, evaluate_depth, parse_report, traj_metrics)
from .oracle import (PerturbRecord, PerturbSpec, SceneGroundTruth, SceneSpec,
                     canonical_trajectory, generate_scene, make_predictions)
from .ray_solver import (RayCameraSolution, camera_from_raymap, rq_decompose,
                         solve_H, solve_center)
from .windows import WindowGroup, WindowIndex, build_window_index, overlap

__all__ = [name for name in dir() if not name.startswith("_")]
