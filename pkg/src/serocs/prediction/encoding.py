"""Trajectory windows and their three-view raster encoding."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import InputDomainError

DEFAULT_TS = 1.0 / 15.0

# (row axis, column axis) per channel: XY, YZ, ZX projections.
CHANNEL_AXES = ((1, 0), (2, 1), (0, 2))


@dataclass(frozen=True, eq=False)
class TrajectoryWindow:
    """``N`` consecutive 3D samples at period ``t_s``; row 0 is the oldest."""

    samples: np.ndarray
    t_s: float = DEFAULT_TS

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=float)
        if s.ndim != 2 or s.shape[1] != 3 or s.shape[0] < 1:
            raise InputDomainError(f"trajectory samples must be (N, 3), got shape {s.shape}")
        if not np.all(np.isfinite(s)):
            raise InputDomainError("trajectory has non-finite samples")
        if not self.t_s > 0:
            raise InputDomainError("sampling period must be > 0")
        s = s.copy()
        s.setflags(write=False)
        object.__setattr__(self, "samples", s)

    @property
    def N(self) -> int:
        return self.samples.shape[0]

    def flat(self) -> np.ndarray:
        return self.samples.reshape(-1)

    def prefix(self, fraction: float) -> "TrajectoryWindow":
        n = max(1, int(np.ceil(fraction * self.N)))
        return TrajectoryWindow(self.samples[:n], self.t_s)


@dataclass(frozen=True, eq=False)
class Bounds:
    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.lo, dtype=float).reshape(3)
        hi = np.asarray(self.hi, dtype=float).reshape(3)
        if not np.all(hi - lo > 0):
            raise InputDomainError(f"bounds need positive extent on every axis, got {lo} .. {hi}")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @classmethod
    def around(cls, points, pad: float = 0.05) -> "Bounds":
        """Axis-aligned box of ``points`` grown by ``pad`` times its extent (at least 1e-3)."""
        P = np.asarray(points, dtype=float).reshape(-1, 3)
        lo, hi = P.min(0), P.max(0)
        m = np.maximum(pad * (hi - lo), 1e-3)
        return cls(lo - m, hi + m)


@dataclass(frozen=True, eq=False)
class TrajectoryImage:
    channels: np.ndarray  # (3, S, S); XY, YZ, ZX
    bounds: Bounds

    @property
    def S(self) -> int:
        return self.channels.shape[1]


def to_pixels(points, bounds: Bounds, S: int) -> np.ndarray:
    """Integer pixel index per axis, clipped to ``[0, S-1]``."""
    u = (np.asarray(points, dtype=float) - bounds.lo) / (bounds.hi - bounds.lo) * S
    return np.clip(np.floor(u), 0, S - 1).astype(np.int64)


def rasterize_segment(img: np.ndarray, r0: int, c0: int, r1: int, c1: int) -> None:
    """DDA line from (r0, c0) to (r1, c1), both endpoints lit."""
    n = max(abs(r1 - r0), abs(c1 - c0))
    if n == 0:
        img[r0, c0] = 1.0
        return
    k = np.arange(n + 1)
    rr = np.floor(r0 + k * (r1 - r0) / n + 0.5).astype(np.int64)
    cc = np.floor(c0 + k * (c1 - c0) / n + 0.5).astype(np.int64)
    img[rr, cc] = 1.0


def encode_trajectory_image(traj: TrajectoryWindow, bounds: Bounds, S: int = 224) -> TrajectoryImage:
    """Project the trajectory onto the XY, YZ and ZX planes and draw it as binary strokes.

    Consecutive samples are joined by rasterized line segments; samples outside
    ``bounds`` land on the border pixels.
    """
    if S < 1:
        raise InputDomainError("image size must be >= 1")
    pix = to_pixels(traj.samples, bounds, S)
    img = np.zeros((3, S, S))
    for ch, (ra, ca) in enumerate(CHANNEL_AXES):
        r, c = pix[:, ra], pix[:, ca]
        if len(r) == 1:
            img[ch, r[0], c[0]] = 1.0
        for i in range(len(r) - 1):
            rasterize_segment(img[ch], r[i], c[i], r[i + 1], c[i + 1])
    return TrajectoryImage(img, bounds)


def max_pool(channels: np.ndarray, k: int) -> np.ndarray:
    """``k x k`` non-overlapping max pooling; ``S`` must be divisible by ``k``."""
    C, S, _ = channels.shape
    if S % k:
        raise InputDomainError(f"image size {S} not divisible by pool {k}")
    return channels.reshape(C, S // k, k, S // k, k).max(axis=(2, 4))
