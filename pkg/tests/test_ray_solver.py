import numpy as np
import pytest
from numpy.testing import assert_allclose

from fuse4d.exceptions import DegenerateGeometryError
from fuse4d.geometry import Intrinsics, Pose, RayMap, principal_point, raymap_from_camera
from fuse4d.ray_solver import camera_from_raymap, rq_decompose, solve_H, solve_center
from fuse4d.rotations import geodesic_angle, random_rotation


def rot_z(deg):
    c, s = np.cos(np.deg2rad(deg)), np.sin(np.deg2rad(deg))
    return np.array([[c, -s, 0], [s, c, 0], [0, 0, 1.0]])


class TestSolveCenter:
    def test_known_center(self):
        rng = np.random.default_rng(0)
        c = np.array([1.0, 2.0, 3.0])
        d = rng.normal(size=(4, 4, 3))
        m = np.cross(np.broadcast_to(c, d.shape), d)
        center, rms = solve_center(RayMap(d, m))
        assert_allclose(center, c, atol=1e-9)
        assert rms < 1e-9

    def test_zero_moments(self):
        rng = np.random.default_rng(1)
        d = rng.normal(size=(3, 3, 3))
        center, _ = solve_center(RayMap(d, np.zeros_like(d)))
        assert_allclose(center, 0.0, atol=1e-12)

    def test_parallel_rays_degenerate(self):
        d = np.tile(np.array([0.0, 0.0, 1.0]), (3, 3, 1))
        with pytest.raises(DegenerateGeometryError):
            solve_center(RayMap(d, np.zeros_like(d)))


class TestSolveH:
    def test_canonical_directions_give_identity(self):
        u, v = np.meshgrid(np.arange(6.0), np.arange(5.0))
        d = np.stack([u, v, np.ones_like(u)], axis=-1)
        H = solve_H(RayMap(d, np.zeros_like(d)))
        assert_allclose(H, np.eye(3) / np.sqrt(3.0), atol=1e-9)

    def test_recovers_K_R_up_to_scale(self):
        cx, cy = 32.0, 24.0
        intr = Intrinsics(100.0, 100.0, cx, cy)
        pose = Pose(rot_z(30.0), np.array([0.5, -1.0, 2.0]))
        rm = raymap_from_camera(intr, pose, 48, 64)
        H = solve_H(rm)
        expected = intr.matrix() @ pose.rotation
        expected = expected / np.linalg.norm(expected)
        assert_allclose(H, expected, atol=1e-6)

    def test_sign_ambiguity_resolved_downstream(self):
        rng = np.random.default_rng(2)
        intr = Intrinsics(120.0, 120.0, 15.5, 11.5)
        pose = Pose(random_rotation(rng), rng.normal(size=3))
        rm = raymap_from_camera(intr, pose, 24, 32)
        H = solve_H(rm)
        K1, R1 = rq_decompose(H)
        K2, R2 = rq_decompose(-H)
        assert_allclose(K1, K2, atol=1e-12)
        assert_allclose(R1, R2, atol=1e-12)

    def test_degenerate_directions(self):
        d = np.tile(np.array([0.0, 0.0, 1.0]), (4, 4, 1))
        with pytest.raises(DegenerateGeometryError):
            solve_H(RayMap(d, np.zeros_like(d)))


class TestRQDecompose:
    def test_identity(self):
        K, R = rq_decompose(np.eye(3))
        assert_allclose(K, np.eye(3), atol=1e-12)
        assert_allclose(R, np.eye(3), atol=1e-12)

    def test_compose_then_decompose(self):
        Kt = np.diag([2.0, 2.0, 1.0])
        Rt = rot_z(30.0)
        K, R = rq_decompose(Kt @ Rt)
        assert_allclose(K, Kt, atol=1e-10)
        assert_allclose(R, Rt, atol=1e-10)

    def test_sign_fixing_contract(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            Hm = rng.normal(size=(3, 3))
            if abs(np.linalg.det(Hm)) < 1e-6:
                continue
            K, R = rq_decompose(Hm)
            assert np.all(np.diag(K) > 0)
            assert K[2, 2] == pytest.approx(1.0)
            assert np.linalg.det(R) == pytest.approx(1.0, abs=1e-12)
            assert_allclose(np.tril(K, -1), 0.0, atol=1e-12)
            # K R reconstructs +-Hm up to positive scale
            recon = K @ R
            ratio = recon.ravel()[np.abs(Hm).argmax()] / Hm.ravel()[np.abs(Hm).argmax()]
            assert_allclose(recon, ratio * Hm, atol=1e-9 * np.abs(Hm).max())

    def test_singular_rejected(self):
        with pytest.raises(DegenerateGeometryError):
            rq_decompose(np.diag([1.0, 1.0, 0.0]))


class TestCameraFromRaymap:
    def test_identity_camera(self):
        cx, cy = principal_point(12, 16)
        intr = Intrinsics(30.0, 30.0, cx, cy)
        sol = camera_from_raymap(raymap_from_camera(intr, Pose.identity(), 12, 16))
        assert_allclose(sol.center, 0.0, atol=1e-9)
        assert geodesic_angle(sol.rotation, np.eye(3)) < 1e-9
        assert sol.intrinsics.fx == pytest.approx(30.0, rel=1e-9)

    def test_round_trip_100_random_cameras(self):
        rng = np.random.default_rng(4)
        for _ in range(100):
            f = rng.uniform(50, 500)
            cx, cy = principal_point(24, 32)
            intr = Intrinsics(f, f, cx, cy)
            pose = Pose(random_rotation(rng), rng.uniform(-10, 10, size=3))
            sol = camera_from_raymap(raymap_from_camera(intr, pose, 24, 32))
            assert np.linalg.norm(sol.center - pose.center) < 1e-6
            assert geodesic_angle(sol.rotation, pose.rotation) < 1e-6
            assert abs(sol.intrinsics.fx - f) / f < 1e-4
            assert abs(sol.intrinsics.fy - f) / f < 1e-4

    def test_noisy_rays(self):
        # moderate field of view; narrow-FOV cameras are intrinsically
        # ill-conditioned for rotation-vs-principal-point separation
        rng = np.random.default_rng(5)
        cx, cy = principal_point(24, 32)
        intr = Intrinsics(40.0, 40.0, cx, cy)
        pose = Pose(random_rotation(rng), np.array([1.0, -2.0, 0.5]))
        rm = raymap_from_camera(intr, pose, 24, 32)
        sd = 0.01 * np.sqrt(np.mean(rm.directions**2))
        sm = 0.01 * np.sqrt(np.mean(rm.moments**2))
        noisy = RayMap(rm.directions + rng.normal(size=rm.directions.shape) * sd,
                       rm.moments + rng.normal(size=rm.moments.shape) * sm)
        sol = camera_from_raymap(noisy)
        assert sol.center_rms > 0
        assert sol.direction_rms > 0
        assert geodesic_angle(sol.rotation, pose.rotation) < np.deg2rad(1.0)

    def test_moment_shift_gauge(self):
        # constant moment offsets shift only the recovered center
        rng = np.random.default_rng(6)
        cx, cy = principal_point(16, 20)
        intr = Intrinsics(70.0, 70.0, cx, cy)
        pose = Pose(random_rotation(rng), np.array([0.3, 0.6, -0.2]))
        rm = raymap_from_camera(intr, pose, 16, 20)
        shifted = RayMap(rm.directions, rm.moments + np.array([0.05, -0.02, 0.01]))
        a = camera_from_raymap(rm)
        b = camera_from_raymap(shifted)
        assert_allclose(b.rotation, a.rotation, atol=1e-12)
        assert b.intrinsics.fx == pytest.approx(a.intrinsics.fx, rel=1e-12)
        assert np.linalg.norm(b.center - a.center) < 1.0  # bounded least-squares response

    def test_moment_scale_gauge(self):
        rng = np.random.default_rng(7)
        cx, cy = principal_point(16, 20)
        intr = Intrinsics(110.0, 110.0, cx, cy)
        pose = Pose(random_rotation(rng), np.array([2.0, -1.0, 0.7]))
        rm = raymap_from_camera(intr, pose, 16, 20)
        scaled = RayMap(rm.directions, 3.5 * rm.moments)
        a = camera_from_raymap(rm)
        b = camera_from_raymap(scaled)
        assert_allclose(b.center, 3.5 * a.center, atol=1e-9)
        assert_allclose(b.rotation, a.rotation, atol=1e-12)
        assert b.intrinsics.fx == pytest.approx(a.intrinsics.fx, rel=1e-12)
