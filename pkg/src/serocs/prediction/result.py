"""Predicted human positions with per-step uncertainty ellipsoids."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True, eq=False)
class PredictionResult:
    """A-priori prediction of ``N`` future positions.

    ``semi_axes[i]`` and ``axes[i]`` describe the ``n_sigma`` ellipsoid of step
    ``i`` (columns of ``axes`` are principal directions); ``radii[i]`` is the
    bounding-ball radius used by the planner and safety filter.
    """

    mean: np.ndarray  # (N, 3)
    msee: np.ndarray  # (3N, 3N)
    semi_axes: np.ndarray  # (N, 3)
    axes: np.ndarray  # (N, 3, 3)
    radii: np.ndarray  # (N,)
    t_s: float
    n_sigma: float = 3.0

    @property
    def N(self) -> int:
        return self.mean.shape[0]

    @property
    def centers(self) -> np.ndarray:
        return self.mean

    def block(self, i: int) -> np.ndarray:
        return self.msee[3 * i:3 * i + 3, 3 * i:3 * i + 3]

    def mahalanobis2(self, points) -> np.ndarray:
        """Squared Mahalanobis distance of ``points[i]`` from step ``i``'s mean."""
        P = np.asarray(points, dtype=float).reshape(self.N, 3)
        out = np.empty(self.N)
        for i in range(self.N):
            e = P[i] - self.mean[i]
            out[i] = e @ np.linalg.solve(self.block(i), e)
        return out

    def in_ellipsoids(self, points) -> np.ndarray:
        return self.mahalanobis2(points) <= self.n_sigma ** 2

    def in_balls(self, points) -> np.ndarray:
        P = np.asarray(points, dtype=float).reshape(self.N, 3)
        return np.linalg.norm(P - self.mean, axis=1) <= self.radii


def from_covariance(mean, msee, t_s: float, n_sigma: float = 3.0) -> PredictionResult:
    mean = np.asarray(mean, dtype=float).reshape(-1, 3)
    msee = 0.5 * (msee + msee.T)
    N = mean.shape[0]
    semi = np.empty((N, 3))
    axes = np.empty((N, 3, 3))
    for i in range(N):
        w, V = np.linalg.eigh(msee[3 * i:3 * i + 3, 3 * i:3 * i + 3])
        semi[i] = n_sigma * np.sqrt(np.maximum(w, 0.0))
        axes[i] = V
    return PredictionResult(mean, msee, semi, axes, semi.max(axis=1), t_s, n_sigma)
