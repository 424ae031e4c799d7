"""Constant-speed human predictor with acceleration-bounded uncertainty."""
from __future__ import annotations

import numpy as np

from ..errors import InputDomainError
from .encoding import TrajectoryWindow
from .result import PredictionResult


def constant_speed_predictor(window: TrajectoryWindow, horizon: int, a_max: float = 1.0) -> PredictionResult:
    """Extrapolate the last finite-difference velocity for ``horizon`` steps.

    Step ``i`` (1-based) gets radius ``a_max (i t_s)^2 / 2``; the MSEE blocks are
    ``(r / 3)^2 I`` so the 3-sigma ellipsoid is that ball.
    """
    if window.N < 2:
        raise InputDomainError("constant-speed prediction needs at least two samples")
    if horizon < 1 or a_max < 0:
        raise InputDomainError("horizon >= 1 and a_max >= 0 are required")
    ts = window.t_s
    last = window.samples[-1]
    vel = (window.samples[-1] - window.samples[-2]) / ts
    i = np.arange(1, horizon + 1, dtype=float)
    mean = last[None, :] + (i * ts)[:, None] * vel[None, :]
    r = 0.5 * a_max * (i * ts) ** 2
    msee = np.kron(np.diag((r / 3.0) ** 2), np.eye(3))
    semi = np.repeat(r[:, None], 3, axis=1)
    axes = np.repeat(np.eye(3)[None], horizon, axis=0)
    return PredictionResult(mean, msee, semi, axes, r, ts, 3.0)
