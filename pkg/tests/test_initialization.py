import numpy as np
import pytest
from numpy.testing import assert_allclose

from fuse4d.exceptions import DegenerateGeometryError, EstimationError, WindowError
from fuse4d.geometry import (Intrinsics, Pose, Similarity, point_map_from_depth,
                             principal_point)
from fuse4d.initialization import chain_groups, init_intrinsics, ransac_pnp, umeyama
from fuse4d.rotations import geodesic_angle, random_rotation
from fuse4d.windows import WindowGroup, WindowIndex, build_window_index


def rot_z(deg):
    c, s = np.cos(np.deg2rad(deg)), np.sin(np.deg2rad(deg))
    return np.array([[c, -s, 0], [s, c, 0], [0, 0, 1.0]])


class TestUmeyama:
    def test_identity(self):
        pts = np.random.default_rng(0).normal(size=(10, 3))
        sim = umeyama(pts, pts)
        assert sim.scale == pytest.approx(1.0, abs=1e-12)
        assert_allclose(sim.rotation, np.eye(3), atol=1e-12)
        assert_allclose(sim.shift, 0.0, atol=1e-12)

    def test_known_similarity_recovered(self):
        rng = np.random.default_rng(1)
        src = rng.normal(size=(50, 3))
        R = rot_z(45.0)
        dst = 2.0 * src @ R.T + np.array([1.0, 2.0, 3.0])
        sim = umeyama(src, dst)
        assert sim.scale == pytest.approx(2.0, abs=1e-9)
        assert_allclose(sim.rotation, R, atol=1e-9)
        assert_allclose(sim.shift, [1.0, 2.0, 3.0], atol=1e-9)

    def test_pure_translation_without_scale(self):
        rng = np.random.default_rng(2)
        src = rng.normal(size=(20, 3))
        sim = umeyama(src, src + np.array([5.0, 0.0, 0.0]), with_scale=False)
        assert sim.scale == 1.0
        assert_allclose(sim.rotation, np.eye(3), atol=1e-10)
        assert_allclose(sim.shift, [5.0, 0.0, 0.0], atol=1e-10)

    def test_reflection_corrected(self):
        # mirrored planar points would fit a reflection; the solver must not return one
        rng = np.random.default_rng(3)
        src = np.zeros((40, 3))
        src[:, :2] = rng.normal(size=(40, 2))
        src[:, 2] = 0.01 * rng.normal(size=40)   # slight thickness, mirrored away
        dst = src.copy()
        dst[:, 0] = -dst[:, 0]
        sim = umeyama(src, dst)
        assert np.linalg.det(sim.rotation) == pytest.approx(1.0, abs=1e-12)

    def test_too_few_points(self):
        with pytest.raises(DegenerateGeometryError):
            umeyama(np.zeros((2, 3)), np.zeros((2, 3)))

    def test_collinear_points(self):
        t = np.linspace(0, 1, 10)
        line = np.stack([t, 2 * t, -t], axis=1)
        with pytest.raises(DegenerateGeometryError):
            umeyama(line, line + 1.0)

    def test_local_optimality(self):
        rng = np.random.default_rng(4)
        src = rng.normal(size=(30, 3))
        dst = 1.3 * src @ rot_z(20.0).T + rng.normal(size=3) + 0.02 * rng.normal(size=(30, 3))
        sim = umeyama(src, dst)

        def objective(s, R, t):
            return np.sum((dst - (s * src @ R.T + t)) ** 2)

        base = objective(sim.scale, sim.rotation, sim.shift)
        for _ in range(30):
            ds = 1 + 1e-4 * rng.normal()
            dR = random_rotation(rng, 1e-4)
            dt = 1e-4 * rng.normal(size=3)
            assert objective(sim.scale * ds, dR @ sim.rotation, sim.shift + dt) >= base - 1e-12


class TestChainGroups:
    def _make_groups(self, index, world_pts, sims=None):
        groups = []
        for g, start in enumerate(index.starts):
            pts = world_pts[start:start + index.window]
            if sims is not None:
                pts = sims[g].apply(pts)
            groups.append(WindowGroup(start=start, points=pts,
                                      disparity=np.ones(pts.shape[:3])))
        return groups

    def test_identity_when_consistent(self):
        rng = np.random.default_rng(5)
        index = build_window_index(12, 6, 3)
        world = rng.normal(size=(12, 6, 8, 3))
        sims = chain_groups(self._make_groups(index, world), index)
        for sim in sims:
            assert sim.scale == pytest.approx(1.0, abs=1e-9)
            assert_allclose(sim.rotation, np.eye(3), atol=1e-9)
            assert_allclose(sim.shift, 0.0, atol=1e-9)

    def test_recovers_inverse_of_injected(self):
        rng = np.random.default_rng(6)
        index = build_window_index(14, 6, 4)
        world = rng.normal(size=(14, 6, 8, 3)) * 3.0
        injected = [Similarity.identity()]
        for _ in index.starts[1:]:
            injected.append(Similarity(rng.uniform(0.7, 1.7), random_rotation(rng),
                                       rng.normal(size=3)))
        sims = chain_groups(self._make_groups(index, world, injected), index)
        for inj, rec in zip(injected, sims):
            inv = inj.inverse()
            assert rec.scale == pytest.approx(inv.scale, rel=1e-6)
            assert geodesic_angle(rec.rotation, inv.rotation) < 1e-6
            assert_allclose(rec.shift, inv.shift, atol=1e-6)

    def test_disconnected_groups(self):
        rng = np.random.default_rng(7)
        world = rng.normal(size=(12, 6, 8, 3))
        index = WindowIndex(12, 6, 6, (0, 6))   # stride == window: no shared frames
        with pytest.raises(WindowError):
            chain_groups(self._make_groups(index, world), index)

    def test_gauge_invariance_of_relative_transforms(self):
        # a global similarity G on all group inputs conjugates every relative
        # transform: rel' = G o rel o G^-1 (same scales, same rotation angles)
        rng = np.random.default_rng(8)
        index = build_window_index(10, 6, 2)
        world = rng.normal(size=(10, 6, 8, 3)) * 2.0
        injected = [Similarity.identity()]
        for _ in index.starts[1:]:
            injected.append(Similarity(rng.uniform(0.8, 1.4), random_rotation(rng),
                                       rng.normal(size=3)))
        groups_a = self._make_groups(index, world, injected)
        sims_a = chain_groups(groups_a, index)

        gauge = Similarity(1.6, random_rotation(rng), rng.normal(size=3))
        groups_b = [WindowGroup(start=g.start, points=gauge.apply(g.points),
                                disparity=g.disparity) for g in groups_a]
        sims_b = chain_groups(groups_b, index)

        for a_i, b_i in zip(sims_a, sims_b):
            for a_j, b_j in zip(sims_a, sims_b):
                rel_a = a_i.inverse().compose(a_j)
                rel_b = b_i.inverse().compose(b_j)
                expected = gauge.compose(rel_a).compose(gauge.inverse())
                assert rel_b.scale == pytest.approx(expected.scale, rel=1e-8)
                assert geodesic_angle(rel_b.rotation, expected.rotation) < 1e-7
                assert_allclose(rel_b.shift, expected.shift, atol=1e-6)
                assert rel_b.scale == pytest.approx(rel_a.scale, rel=1e-8)
                assert geodesic_angle(np.eye(3), rel_b.rotation) == pytest.approx(
                    geodesic_angle(np.eye(3), rel_a.rotation), abs=1e-7)


class TestInitIntrinsics:
    def _point_map(self, f, height, width, disparity):
        cx, cy = principal_point(height, width)
        return point_map_from_depth(disparity, Intrinsics(f, f, cx, cy), Pose.identity())

    def test_exact_focal(self):
        rng = np.random.default_rng(9)
        disp = rng.uniform(0.2, 1.5, size=(12, 16))
        pts = self._point_map(120.0, 12, 16, disp)
        assert init_intrinsics(pts) == pytest.approx(120.0, abs=1e-6)

    def test_frontoparallel_plane(self):
        pts = self._point_map(90.0, 10, 14, np.full((10, 14), 0.25))
        assert init_intrinsics(pts) == pytest.approx(90.0, abs=1e-9)

    def test_robust_to_corruption(self):
        rng = np.random.default_rng(10)
        disp = rng.uniform(0.2, 1.5, size=(24, 32))
        pts = self._point_map(150.0, 24, 32, disp)
        corrupt = rng.random((24, 32)) < 0.10
        noisy = pts.copy()
        noisy[corrupt] += rng.normal(scale=5.0, size=(int(corrupt.sum()), 3))
        f = init_intrinsics(noisy)
        assert abs(f - 150.0) / 150.0 < 0.02

    def test_behind_camera(self):
        pts = -np.ones((8, 8, 3))
        with pytest.raises(DegenerateGeometryError):
            init_intrinsics(pts)


class TestRansacPnP:
    def _scene(self, rng, f=100.0, height=24, width=32):
        cx, cy = principal_point(height, width)
        intr = Intrinsics(f, f, cx, cy)
        pose = Pose(random_rotation(rng), rng.uniform(-3, 3, size=3))
        disp = rng.uniform(0.1, 0.8, size=(height, width))
        pts = point_map_from_depth(disp, intr, pose)
        return intr, pose, pts

    def test_noiseless_recovery(self):
        rng = np.random.default_rng(11)
        for _ in range(5):
            intr, pose, pts = self._scene(rng)
            est, inliers = ransac_pnp(pts, intr, iters=64, seed=3)
            assert geodesic_angle(est.rotation, pose.rotation) < 1e-6
            assert np.linalg.norm(est.center - pose.center) < 1e-6
            assert inliers.all()

    def test_identity_camera(self):
        rng = np.random.default_rng(12)
        height, width = 16, 20
        cx, cy = principal_point(height, width)
        intr = Intrinsics(60.0, 60.0, cx, cy)
        disp = rng.uniform(0.2, 1.0, size=(height, width))
        pts = point_map_from_depth(disp, intr, Pose.identity())
        est, _ = ransac_pnp(pts, intr, iters=64, seed=0)
        assert geodesic_angle(est.rotation, np.eye(3)) < 1e-6
        assert np.linalg.norm(est.center) < 1e-6

    def test_outlier_robustness(self):
        rng = np.random.default_rng(13)
        intr, pose, pts = self._scene(rng)
        scale = np.linalg.norm(pts.reshape(-1, 3).max(0) - pts.reshape(-1, 3).min(0))
        corrupted = pts.copy()
        out = rng.random(pts.shape[:2]) < 0.30
        corrupted[out] += rng.normal(scale=2.0, size=(int(out.sum()), 3))
        est, inliers = ransac_pnp(corrupted, intr, iters=256, seed=7)
        assert geodesic_angle(est.rotation, pose.rotation) < np.deg2rad(0.5)
        assert np.linalg.norm(est.center - pose.center) < 0.01 * scale
        assert not inliers[out].any() or inliers[out].mean() < 0.2

    def test_deterministic_mask(self):
        rng = np.random.default_rng(14)
        intr, pose, pts = self._scene(rng)
        noisy = pts + rng.normal(scale=0.01, size=pts.shape)
        _, mask_a = ransac_pnp(noisy, intr, iters=128, seed=42)
        _, mask_b = ransac_pnp(noisy, intr, iters=128, seed=42)
        assert np.array_equal(mask_a, mask_b)

    def test_too_few_points(self):
        intr = Intrinsics(50, 50, 2, 2)
        with pytest.raises(DegenerateGeometryError):
            ransac_pnp(np.full((2, 2, 3), np.nan), intr)

    def test_failure_on_garbage(self):
        rng = np.random.default_rng(15)
        intr = Intrinsics(50, 50, 16, 12)
        garbage = rng.normal(size=(24, 32, 3)) * 100
        with pytest.raises(EstimationError):
            ransac_pnp(garbage, intr, iters=16, thresh_px=0.01, seed=1)
