"""Overlapping temporal windows over an N-frame video.

Start indices follow {0, s, 2s, ..., floor((N-V)/s)*s} plus N-V so the last
window always reaches the final frame; duplicates are stored once.  Frames
shared by several windows have a single set of global variables downstream.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import WindowError


@dataclass(frozen=True)
class WindowIndex:
    """Sliding-window layout: sorted, deduplicated start indices."""

    num_frames: int
    window: int
    stride: int
    starts: tuple[int, ...]


def build_window_index(num_frames: int, window: int, stride: int) -> WindowIndex:
    """Construct the start-index set for an N-frame video.

    Raises WindowError when the video is shorter than one window or the
    stride is not positive.
    """
    if window < 1:
        raise WindowError(f"window size must be >= 1, got {window}")
    if window > num_frames:
        raise WindowError(f"video too short: {num_frames} frames < window of {window}")
    if stride < 1:
        raise WindowError(f"stride must be >= 1, got {stride}")
    last = num_frames - window
    starts = sorted(set(range(0, last + 1, stride)) | {last})
    return WindowIndex(num_frames, window, stride, tuple(starts))


def overlap(start_a: int, start_b: int, window: int) -> np.ndarray:
    """Global frame indices shared by two windows of the same size, sorted."""
    lo = max(start_a, start_b)
    hi = min(start_a + window, start_b + window)
    return np.arange(lo, max(lo, hi), dtype=np.int64)


@dataclass
class WindowGroup:
    """Predictions of one window: clip-relative point maps, disparity maps,
    optional Plucker ray maps, and per-pixel point uncertainties.

    Array layouts: points (V, H, W, 3), disparity/sigma/valid (V, H, W),
    ray_dirs/ray_moments (V, H, W, 3).  Point maps are expressed relative to
    the clip's first frame; global frame i of the video corresponds to local
    index i - start.
    """

    start: int
    points: np.ndarray
    disparity: np.ndarray
    sigma: np.ndarray | None = None
    ray_dirs: np.ndarray | None = None
    ray_moments: np.ndarray | None = None
    valid: np.ndarray | None = None

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64)
        self.disparity = np.asarray(self.disparity, dtype=np.float64)
        if self.points.ndim != 4 or self.points.shape[-1] != 3:
            raise ValueError(f"points must be (V, H, W, 3), got {self.points.shape}")
        vhw = self.points.shape[:3]
        if self.disparity.shape != vhw:
            raise ValueError(f"disparity must be {vhw}, got {self.disparity.shape}")
        if self.sigma is None:
            self.sigma = np.ones(vhw)
        else:
            self.sigma = np.asarray(self.sigma, dtype=np.float64)
            if self.sigma.shape != vhw:
                raise ValueError(f"sigma must be {vhw}, got {self.sigma.shape}")
        if self.valid is None:
            self.valid = np.ones(vhw, dtype=bool)
        else:
            self.valid = np.asarray(self.valid, dtype=bool)
            if self.valid.shape != vhw:
                raise ValueError(f"valid must be {vhw}, got {self.valid.shape}")
        if (self.ray_dirs is None) != (self.ray_moments is None):
            raise ValueError("ray_dirs and ray_moments must be provided together")
        if self.ray_dirs is not None:
            self.ray_dirs = np.asarray(self.ray_dirs, dtype=np.float64)
            self.ray_moments = np.asarray(self.ray_moments, dtype=np.float64)
            if self.ray_dirs.shape != vhw + (3,) or self.ray_moments.shape != vhw + (3,):
                raise ValueError(f"ray maps must be {vhw + (3,)}")

    @property
    def num_frames(self) -> int:
        return self.points.shape[0]

    @property
    def height(self) -> int:
        return self.points.shape[1]

    @property
    def width(self) -> int:
        return self.points.shape[2]

    @property
    def frames(self) -> range:
        """Global frame indices covered by this window."""
        return range(self.start, self.start + self.num_frames)

    @property
    def has_rays(self) -> bool:
        return self.ray_dirs is not None
