"""On-disk scene bundle plus PLY and trajectory exports.

A bundle is a directory with a ``manifest.json`` and raw binary blobs:

- manifest: schema version, dtype/endianness/layout tags, frame count and
  image size, window layout, per-map blob paths, poses and intrinsics as
  JSON numbers (floats round-trip exactly), and free-form provenance;
- blobs: IEEE-754 binary32, little-endian, row-major, index order
  (row, column, channel); each blob's byte length must equal
  H * W * channels * 4.

Also writes binary little-endian PLY point clouds (float32 xyz + uint8 rgb
colored by frame index) and TUM-style trajectory text files
``timestamp tx ty tz qx qy qz qw`` with the camera-to-world quaternion.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np

from .alignment import AlignConfig, GlobalState, TraceRow
from .exceptions import BundleError
from .geometry import Intrinsics, Pose
from .oracle import SceneGroundTruth
from .rotations import quat_to_rotmat, rotmat_to_quat
from .windows import WindowGroup, WindowIndex

SCHEMA_VERSION = 1


@dataclass
class ResultPayload:
    state: GlobalState
    config: dict
    trace: list[TraceRow] | None = None


@dataclass
class SceneBundle:
    """In-memory view of a bundle directory; any section may be absent."""

    num_frames: int
    height: int
    width: int
    window: WindowIndex | None = None
    scene: SceneGroundTruth | None = None
    groups: list[WindowGroup] | None = None
    result: ResultPayload | None = None
    provenance: dict | None = None


def _write_blob(root: str, rel: str, array: np.ndarray) -> str:
    path = os.path.join(root, rel)
    os.makedirs(os.path.dirname(path), exist_ok=True)
    np.ascontiguousarray(array, dtype="<f4").tofile(path)
    return rel


def _read_blob(root: str, rel: str, shape: tuple[int, ...]) -> np.ndarray:
    path = os.path.join(root, rel)
    if not os.path.exists(path):
        raise BundleError(f"missing blob: {path}")
    expected = int(np.prod(shape)) * 4
    actual = os.path.getsize(path)
    if actual != expected:
        raise BundleError(f"blob length mismatch for {path}: expected {expected} bytes, found {actual}")
    return np.fromfile(path, dtype="<f4").reshape(shape).astype(np.float64)


def _pose_to_json(pose: Pose) -> dict:
    return {"rotation": pose.rotation.tolist(), "center": pose.center.tolist()}


def _pose_from_json(d: dict) -> Pose:
    return Pose(np.array(d["rotation"]), np.array(d["center"]))


def write_bundle(bundle: SceneBundle, path: str) -> None:
    """Serialize a bundle; maps become float32 little-endian blobs."""
    os.makedirs(path, exist_ok=True)
    h, w = bundle.height, bundle.width
    manifest: dict = {
        "schema_version": SCHEMA_VERSION,
        "dtype": "float32",
        "endianness": "little",
        "layout": "row-major",
        "frames": bundle.num_frames,
        "height": h,
        "width": w,
        "provenance": bundle.provenance or {},
    }
    if bundle.window is not None:
        manifest["window"] = {
            "size": bundle.window.window,
            "stride": bundle.window.stride,
            "starts": list(bundle.window.starts),
        }
    if bundle.scene is not None:
        sc = bundle.scene
        manifest["scene"] = {
            "intrinsics": {"fx": sc.intrinsics.fx, "fy": sc.intrinsics.fy,
                           "cx": sc.intrinsics.cx, "cy": sc.intrinsics.cy},
            "poses": [_pose_to_json(p) for p in sc.poses],
            "depth": [_write_blob(path, f"maps/scene_depth_{i:04d}.f32", sc.depth[i])
                      for i in range(sc.num_frames)],
            "points": [_write_blob(path, f"maps/scene_points_{i:04d}.f32", sc.points[i])
                       for i in range(sc.num_frames)],
            "ray_dirs": [_write_blob(path, f"maps/scene_raydirs_{i:04d}.f32", sc.ray_dirs[i])
                         for i in range(sc.num_frames)],
            "ray_moments": [_write_blob(path, f"maps/scene_raymoms_{i:04d}.f32", sc.ray_moments[i])
                            for i in range(sc.num_frames)],
        }
    if bundle.groups is not None:
        entries = []
        for k, g in enumerate(bundle.groups):
            base = f"maps/group_{k:03d}"
            entry = {
                "start": g.start,
                "points": [_write_blob(path, f"{base}/points_{j:04d}.f32", g.points[j])
                           for j in range(g.num_frames)],
                "disparity": [_write_blob(path, f"{base}/disparity_{j:04d}.f32", g.disparity[j])
                              for j in range(g.num_frames)],
                "sigma": [_write_blob(path, f"{base}/sigma_{j:04d}.f32", g.sigma[j])
                          for j in range(g.num_frames)],
                "valid": [_write_blob(path, f"{base}/valid_{j:04d}.f32", g.valid[j].astype(np.float32))
                          for j in range(g.num_frames)],
            }
            if g.has_rays:
                entry["ray_dirs"] = [_write_blob(path, f"{base}/raydirs_{j:04d}.f32", g.ray_dirs[j])
                                     for j in range(g.num_frames)]
                entry["ray_moments"] = [_write_blob(path, f"{base}/raymoms_{j:04d}.f32", g.ray_moments[j])
                                        for j in range(g.num_frames)]
            entries.append(entry)
        manifest["groups"] = entries
    if bundle.result is not None:
        st = bundle.result.state
        manifest["result"] = {
            "focals": st.focals().tolist(),
            "poses": [_pose_to_json(p) for p in st.poses()],
            "principal_point": [st.cx, st.cy],
            "starts": list(st.starts),
            "group_alignment": {
                "point_scale": np.exp(st.point_log_scale).tolist(),
                "point_rotation": quat_to_rotmat(st.point_quat).tolist(),
                "point_shift": st.point_shift.tolist(),
                "depth_scale": np.exp(st.depth_log_scale).tolist(),
                "depth_shift": st.depth_shift.tolist(),
                "cam_rotation": quat_to_rotmat(st.cam_quat).tolist(),
                "cam_scale": np.exp(st.cam_log_scale).tolist(),
                "cam_shift": st.cam_shift.tolist(),
            },
            "disparity": [_write_blob(path, f"maps/result_disparity_{i:04d}.f32", st.disparity[i])
                          for i in range(st.num_frames)],
            "config": bundle.result.config,
        }
        if bundle.result.trace is not None:
            rows = ["iter point depth cam smooth total grad_norm"]
            rows += [f"{r.iteration} {r.point!r} {r.depth!r} {r.cam!r} {r.smooth!r} "
                     f"{r.total!r} {r.grad_norm!r}" for r in bundle.result.trace]
            with open(os.path.join(path, "trace.txt"), "w") as fh:
                fh.write("\n".join(rows) + "\n")
            manifest["result"]["trace"] = "trace.txt"
    with open(os.path.join(path, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=1)


def read_bundle(path: str) -> SceneBundle:
    """Load a bundle directory; raises BundleError on any malformed pieces."""
    mpath = os.path.join(path, "manifest.json")
    if not os.path.exists(mpath):
        raise BundleError(f"missing manifest: {mpath}")
    with open(mpath) as fh:
        try:
            manifest = json.load(fh)
        except json.JSONDecodeError as e:
            raise BundleError(f"malformed manifest {mpath}: {e}") from e
    version = manifest.get("schema_version")
    if version != SCHEMA_VERSION:
        raise BundleError(f"unsupported schema version {version!r} in {mpath} "
                          f"(this reader supports {SCHEMA_VERSION})")
    for key, expected in (("dtype", "float32"), ("endianness", "little"), ("layout", "row-major")):
        if manifest.get(key) != expected:
            raise BundleError(f"unsupported {key} {manifest.get(key)!r} in {mpath}")

    n = int(manifest["frames"])
    h = int(manifest["height"])
    w = int(manifest["width"])
    bundle = SceneBundle(num_frames=n, height=h, width=w,
                         provenance=manifest.get("provenance") or {})

    if "window" in manifest:
        wi = manifest["window"]
        bundle.window = WindowIndex(n, int(wi["size"]), int(wi["stride"]),
                                    tuple(int(s) for s in wi["starts"]))
    if "scene" in manifest:
        sc = manifest["scene"]
        ii = sc["intrinsics"]
        intr = Intrinsics(ii["fx"], ii["fy"], ii["cx"], ii["cy"])
        poses = [_pose_from_json(p) for p in sc["poses"]]
        depth = np.stack([_read_blob(path, r, (h, w)) for r in sc["depth"]])
        points = np.stack([_read_blob(path, r, (h, w, 3)) for r in sc["points"]])
        rd = np.stack([_read_blob(path, r, (h, w, 3)) for r in sc["ray_dirs"]])
        rm = np.stack([_read_blob(path, r, (h, w, 3)) for r in sc["ray_moments"]])
        bundle.scene = SceneGroundTruth(intr, poses, depth, points, rd, rm)
    if "groups" in manifest:
        groups = []
        for entry in manifest["groups"]:
            pts = np.stack([_read_blob(path, r, (h, w, 3)) for r in entry["points"]])
            disp = np.stack([_read_blob(path, r, (h, w)) for r in entry["disparity"]])
            sigma = np.stack([_read_blob(path, r, (h, w)) for r in entry["sigma"]])
            valid = np.stack([_read_blob(path, r, (h, w)) for r in entry["valid"]]) > 0.5
            rd = rm = None
            if "ray_dirs" in entry:
                rd = np.stack([_read_blob(path, r, (h, w, 3)) for r in entry["ray_dirs"]])
                rm = np.stack([_read_blob(path, r, (h, w, 3)) for r in entry["ray_moments"]])
            groups.append(WindowGroup(start=int(entry["start"]), points=pts, disparity=disp,
                                      sigma=sigma, ray_dirs=rd, ray_moments=rm, valid=valid))
        bundle.groups = groups
    if "result" in manifest:
        res = manifest["result"]
        ga = res["group_alignment"]
        disparity = np.stack([_read_blob(path, r, (h, w)) for r in res["disparity"]])
        poses = [_pose_from_json(p) for p in res["poses"]]
        state = GlobalState(
            disparity=disparity,
            log_focal=np.log(np.asarray(res["focals"], dtype=np.float64)),
            quat=rotmat_to_quat(np.stack([p.rotation for p in poses])),
            center=np.stack([p.center for p in poses]),
            point_log_scale=np.log(np.asarray(ga["point_scale"], dtype=np.float64)),
            point_quat=rotmat_to_quat(np.asarray(ga["point_rotation"], dtype=np.float64)),
            point_shift=np.asarray(ga["point_shift"], dtype=np.float64),
            depth_log_scale=np.log(np.asarray(ga["depth_scale"], dtype=np.float64)),
            depth_shift=np.asarray(ga["depth_shift"], dtype=np.float64),
            cam_quat=rotmat_to_quat(np.asarray(ga["cam_rotation"], dtype=np.float64)),
            cam_log_scale=np.log(np.asarray(ga["cam_scale"], dtype=np.float64)),
            cam_shift=np.asarray(ga["cam_shift"], dtype=np.float64),
            starts=tuple(int(s) for s in res["starts"]),
            cx=float(res["principal_point"][0]), cy=float(res["principal_point"][1]))
        bundle.result = ResultPayload(state=state, config=res.get("config", {}))
    return bundle


_PLY_HEADER = """ply
format binary_little_endian 1.0
element vertex {count}
property float x
property float y
property float z
property uchar red
property uchar green
property uchar blue
end_header
"""


def _frame_color(i: int, n: int) -> tuple[int, int, int]:
    # simple HSV sweep over the sequence
    hue = 0.8 * (i / max(n - 1, 1))
    h6 = hue * 6.0
    k = int(h6) % 6
    f = h6 - int(h6)
    v, p = 255, 0
    q = int(round(255 * (1 - f)))
    t = int(round(255 * f))
    return [(v, t, p), (q, v, p), (p, v, t), (p, q, v), (t, p, v), (v, p, q)][k]


def export_ply(state: GlobalState, path: str, stride: int = 1) -> int:
    """Write the fused point cloud as binary little-endian PLY.

    The pixel grid is subsampled by ``stride`` in both axes; vertices carry
    a frame-index color.  Returns the vertex count (0 makes a valid file).
    """
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    vertex_dtype = np.dtype([("x", "<f4"), ("y", "<f4"), ("z", "<f4"),
                             ("red", "u1"), ("green", "u1"), ("blue", "u1")])
    chunks = []
    for i in range(state.num_frames):
        pts, valid = state.point_map(i)
        pts = pts[::stride, ::stride]
        valid = valid[::stride, ::stride]
        sel = pts[valid]
        block = np.empty(sel.shape[0], dtype=vertex_dtype)
        block["x"], block["y"], block["z"] = sel[:, 0], sel[:, 1], sel[:, 2]
        r, g, b = _frame_color(i, state.num_frames)
        block["red"], block["green"], block["blue"] = r, g, b
        chunks.append(block)
    data = np.concatenate(chunks) if chunks else np.empty(0, dtype=vertex_dtype)
    with open(path, "wb") as fh:
        fh.write(_PLY_HEADER.format(count=data.shape[0]).encode("ascii"))
        fh.write(data.tobytes())
    return int(data.shape[0])


def read_ply_vertices(path: str) -> np.ndarray:
    """Parse back a PLY written by export_ply (positions + colors)."""
    with open(path, "rb") as fh:
        header = b""
        while not header.endswith(b"end_header\n"):
            chunk = fh.readline()
            if not chunk:
                raise BundleError(f"truncated PLY header in {path}")
            header += chunk
        count = 0
        for line in header.decode("ascii").splitlines():
            if line.startswith("element vertex"):
                count = int(line.split()[-1])
        vertex_dtype = np.dtype([("x", "<f4"), ("y", "<f4"), ("z", "<f4"),
                                 ("red", "u1"), ("green", "u1"), ("blue", "u1")])
        return np.frombuffer(fh.read(count * vertex_dtype.itemsize), dtype=vertex_dtype)


def export_trajectory(poses: list[Pose], path: str) -> None:
    """One line per frame: ``timestamp tx ty tz qx qy qz qw`` where the
    translation is the camera center and the quaternion the camera-to-world
    rotation; timestamps are frame indices."""
    lines = []
    for i, pose in enumerate(poses):
        q = rotmat_to_quat(pose.rotation.T)  # camera-to-world
        vals = [pose.center[0], pose.center[1], pose.center[2], q[1], q[2], q[3], q[0]]
        lines.append(f"{float(i)} " + " ".join(format(v, ".12g") for v in vals))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_trajectory(path: str) -> list[Pose]:
    """Parse a TUM-style trajectory file back into poses."""
    poses = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 8:
                raise BundleError(f"bad trajectory line in {path}: {line!r}")
            _, tx, ty, tz, qx, qy, qz, qw = map(float, parts)
            R_c2w = quat_to_rotmat(np.array([qw, qx, qy, qz]))
            poses.append(Pose(R_c2w.T, np.array([tx, ty, tz])))
    return poses
