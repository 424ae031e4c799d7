"""Scripted human motion: cubic-spline playback of sampled 3D positions."""
from __future__ import annotations

import logging

import numpy as np
from scipy.interpolate import CubicSpline

from ..errors import InputDomainError
from ..prediction.encoding import DEFAULT_TS
from ..prediction.synthetic import two_plan_trajectory

log = logging.getLogger(__name__)


class ScriptedHuman:
    """Natural cubic spline through ``(times, positions)``; exact at the knots.

    Queries outside the script clamp to the end points (zero velocity) and are
    counted in ``clamp_events``.
    """

    def __init__(self, times, positions, plan: int = 0):
        t = np.asarray(times, float).reshape(-1)
        P = np.atleast_2d(np.asarray(positions, float))
        if P.shape[1] == 2:
            P = np.column_stack([P, np.zeros(len(P))])
        if P.ndim != 2 or P.shape[1] != 3 or P.shape[0] != t.shape[0] or t.shape[0] < 1:
            raise InputDomainError("human script needs matching times and (n, 3) positions")
        if not (np.all(np.isfinite(t)) and np.all(np.isfinite(P))):
            raise InputDomainError("human script must be finite")
        if t.shape[0] > 1 and np.any(np.diff(t) <= 0):
            raise InputDomainError("human script times must be strictly increasing")
        self.times, self.positions, self.plan = t, P, int(plan)
        self._spline = CubicSpline(t, P, bc_type="natural", axis=0) if t.shape[0] > 1 else None
        self._velocity = self._spline.derivative() if self._spline is not None else None
        self.clamp_events = 0

    @property
    def t0(self) -> float:
        return float(self.times[0])

    @property
    def t1(self) -> float:
        return float(self.times[-1])

    def state(self, t: float):
        """Position and velocity at time ``t``."""
        if self._spline is None:
            return self.positions[0].copy(), np.zeros(3)
        if t < self.t0 or t > self.t1:
            self.clamp_events += 1
            if self.clamp_events == 1:
                log.info("human script queried at t=%.3f outside [%.3f, %.3f]; clamping", t, self.t0, self.t1)
            tc = min(max(t, self.t0), self.t1)
            return self._spline(tc), np.zeros(3)
        return self._spline(t), self._velocity(t)


def sweep_script(start, end, speed: float, duration: float, t_s: float = DEFAULT_TS) -> ScriptedHuman:
    """Straight constant-speed pass from ``start`` toward ``end`` (continuing past it) over ``duration``."""
    a = np.asarray(start, float)
    b = np.asarray(end, float)
    if a.shape != b.shape or not np.linalg.norm(b - a) > 0 or not speed > 0:
        raise InputDomainError("sweep needs distinct start/end and speed > 0")
    d = (b - a) / np.linalg.norm(b - a)
    t = np.arange(int(np.ceil(duration / t_s)) + 1) * t_s
    return ScriptedHuman(t, a[None, :] + t[:, None] * speed * d[None, :])


def two_plan_script(plan: int, rng, duration: float, t_s: float = DEFAULT_TS, **kw) -> ScriptedHuman:
    """A synthetic reach sequence for ``plan``, holding the final position until ``duration``."""
    P = two_plan_trajectory(plan, rng, t_s, **kw)
    n_total = max(P.shape[0], int(np.ceil(duration / t_s)) + 1)
    P = np.vstack([P, np.repeat(P[-1:], n_total - P.shape[0], axis=0)])
    return ScriptedHuman(np.arange(n_total) * t_s, P, plan)


def make_human(spec: dict | None, rng, duration: float):
    """Build a script from a scenario ``human`` entry; ``None`` or ``absent`` means no human."""
    if spec is None:
        return None
    kind = spec.get("generator", "absent")
    if kind == "absent":
        return None
    if kind == "sweep":
        return sweep_script(spec["start"], spec["end"], spec["speed"], spec.get("duration", duration) + 1.0)
    if kind == "two_plan":
        return two_plan_script(int(spec["plan"]), rng, duration + 1.0)
    if kind == "static":
        return ScriptedHuman([0.0], [spec["position"]])
    if kind == "file":
        from ..io import load_trajectory_csv

        t, P, plan = load_trajectory_csv(spec["path"])
        return ScriptedHuman(t, P, int(plan[0]) if len(plan) else 0)
    raise InputDomainError(f"unknown human generator {kind!r}")
