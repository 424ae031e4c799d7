"""Synthetic human-motion data: constant-velocity tracks and two-plan reaching sequences."""
from __future__ import annotations

import numpy as np

from .encoding import DEFAULT_TS, TrajectoryWindow

HOME = np.array([0.6, 0.0, 1.0])
STATION_A = np.array([0.9, 0.45, 1.0])
STATION_B = np.array([0.9, -0.45, 1.0])
# Plan 1 visits A then B, plan 2 visits B then A; both start at home.
PLAN_WAYPOINTS = {1: (HOME, STATION_A, STATION_B), 2: (HOME, STATION_B, STATION_A)}


def constant_velocity_track(rng, n_steps: int, t_s: float = DEFAULT_TS, noise: float = 0.005,
                            speed=(0.05, 0.4)) -> np.ndarray:
    """Noisy samples of a straight constant-velocity walk starting near home."""
    start = HOME + rng.uniform(-0.3, 0.3, 3)
    d = rng.normal(size=3)
    d /= np.linalg.norm(d)
    v = d * rng.uniform(*speed)
    t = np.arange(n_steps) * t_s
    return start + t[:, None] * v + rng.normal(scale=noise, size=(n_steps, 3))


def windows_from_track(track: np.ndarray, N: int, plan: int = 1, t_s: float = DEFAULT_TS, stride: int = 1):
    """``(window, plan, next_N_positions)`` triples sliding over one track."""
    out = []
    for k in range(N, track.shape[0] - N + 1, stride):
        out.append((TrajectoryWindow(track[k - N:k], t_s), plan, track[k:k + N].copy()))
    return out


def constant_velocity_dataset(rng, n_tracks: int = 60, N: int = 10, track_len: int = 50,
                              t_s: float = DEFAULT_TS, noise: float = 0.005, stride: int = 1):
    data = []
    for _ in range(n_tracks):
        data += windows_from_track(constant_velocity_track(rng, track_len, t_s, noise), N, 1, t_s, stride)
    return data


def _moving_average(x: np.ndarray, width: int) -> np.ndarray:
    if width <= 1:
        return x
    pad = np.pad(x, ((width // 2, width - 1 - width // 2), (0, 0)), mode="edge")
    k = np.ones(width) / width
    return np.stack([np.convolve(pad[:, j], k, mode="valid") for j in range(x.shape[1])], axis=1)


def two_plan_trajectory(plan: int, rng, t_s: float = DEFAULT_TS, noise: float = 0.005,
                        jitter: float = 0.03, segment_time=(1.6, 2.4), smooth: int = 5) -> np.ndarray:
    """One noisy home-to-stations reach for ``plan`` in {1, 2}.

    Legs are traversed at constant speed and the path is smoothed with a
    moving-average filter, as done for tracked wrist positions.
    """
    wps = [w + rng.uniform(-jitter, jitter, 3) for w in PLAN_WAYPOINTS[plan]]
    segs = []
    for a, b in zip(wps[:-1], wps[1:]):
        n = max(2, int(round(rng.uniform(*segment_time) / t_s)))
        s = np.arange(n) / n
        segs.append(a + s[:, None] * (b - a))
    segs.append(wps[-1][None, :])
    traj = _moving_average(np.vstack(segs), smooth)
    return traj + rng.normal(scale=noise, size=traj.shape)


def two_plan_dataset(rng, n_per_plan: int = 50, t_s: float = DEFAULT_TS, noise: float = 0.005):
    """List of ``(TrajectoryWindow, plan)`` with plans interleaved 1, 2, 1, 2, ..."""
    out = []
    for _ in range(n_per_plan):
        for plan in (1, 2):
            out.append((TrajectoryWindow(two_plan_trajectory(plan, rng, t_s, noise), t_s), plan))
    return out
