import numpy as np
import pytest

from fuse4d.exceptions import WindowError
from fuse4d.windows import WindowGroup, build_window_index, overlap


class TestBuildWindowIndex:
    def test_exact_fit_single_window(self):
        assert build_window_index(16, 16, 4).starts == (0,)

    def test_short_tail(self):
        assert build_window_index(20, 16, 4).starts == (0, 4)

    def test_tail_appended(self):
        assert build_window_index(30, 16, 4).starts == (0, 4, 8, 12, 14)

    def test_stride_one(self):
        assert build_window_index(17, 16, 1).starts == (0, 1)

    def test_too_short(self):
        with pytest.raises(WindowError):
            build_window_index(10, 16, 4)

    def test_bad_stride(self):
        with pytest.raises(WindowError):
            build_window_index(20, 16, 0)

    def test_coverage_and_bounds_random(self):
        # coverage is only promised for stride <= window
        rng = np.random.default_rng(0)
        for _ in range(1000):
            n = int(rng.integers(1, 200))
            v = int(rng.integers(1, n + 1))
            s = int(rng.integers(1, v + 1))
            idx = build_window_index(n, v, s)
            starts = idx.starts
            assert starts[0] == 0
            assert starts[-1] == n - v
            assert list(starts) == sorted(set(starts))
            covered = set()
            for a in starts:
                covered.update(range(a, a + v))
            assert covered == set(range(n))

    def test_monotone_refinement(self):
        # halving the stride keeps every start that is a multiple of both
        n, v = 64, 16
        for coarse, fine in [(8, 4), (4, 2), (8, 2)]:
            sc = set(build_window_index(n, v, coarse).starts)
            sf = set(build_window_index(n, v, fine).starts)
            common = {a for a in sc if a % coarse == 0 and a % fine == 0}
            assert common <= sf

    def test_chain_connectivity(self):
        # consecutive windows share frames whenever stride < window
        for n, v, s in [(30, 16, 4), (50, 12, 11), (40, 8, 3)]:
            starts = build_window_index(n, v, s).starts
            for a, b in zip(starts, starts[1:]):
                assert len(overlap(a, b, v)) > 0


class TestOverlap:
    def test_partial(self):
        assert overlap(0, 4, 16).tolist() == list(range(4, 16))

    def test_self(self):
        assert overlap(0, 0, 16).tolist() == list(range(16))

    def test_disjoint(self):
        assert overlap(0, 16, 16).size == 0


class TestWindowGroup:
    def test_defaults(self):
        g = WindowGroup(start=2, points=np.zeros((3, 4, 5, 3)), disparity=np.ones((3, 4, 5)))
        assert g.sigma.shape == (3, 4, 5)
        assert g.valid.all()
        assert not g.has_rays
        assert list(g.frames) == [2, 3, 4]
        assert (g.num_frames, g.height, g.width) == (3, 4, 5)

    def test_shape_checks(self):
        with pytest.raises(ValueError):
            WindowGroup(start=0, points=np.zeros((3, 4, 5, 3)), disparity=np.ones((2, 4, 5)))
        with pytest.raises(ValueError):
            WindowGroup(start=0, points=np.zeros((3, 4, 5, 3)), disparity=np.ones((3, 4, 5)),
                        ray_dirs=np.zeros((3, 4, 5, 3)))
