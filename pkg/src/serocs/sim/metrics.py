"""Run summaries computed from a :class:`SimLog`."""
from __future__ import annotations

import numpy as np

from ..errors import InputDomainError
from ..safety import RELAXED

# Discrete-time slack constant for separation checks, d >= d_min - c * dt^2.
# Calibrated once on the idle-sweep suite at 100-1000 Hz and frozen.
SLACK_C = 1.0


def activation_intervals(active) -> list:
    """Maximal runs of active ticks as inclusive ``[first, last]`` tick pairs."""
    a = np.asarray(active, bool).astype(int)
    if a.size == 0:
        return []
    d = np.diff(np.concatenate([[0], a, [0]]))
    starts = np.flatnonzero(d == 1)
    ends = np.flatnonzero(d == -1) - 1
    return [[int(s), int(e)] for s, e in zip(starts, ends)]


def _count_events(events, name):
    return sum(1 for e in events if e and name in e.split(";"))


def metrics(log, slack_c: float = SLACK_C) -> dict:
    """Summary report: separation, completion time, effort, safety activity and failure counts."""
    n = len(log)
    if n == 0:
        raise InputDomainError("empty log")
    dt = float(log.meta.get("dt", log.t[1] - log.t[0] if n > 1 else 0.0))
    sep = np.asarray(log.separation, float)
    i_min = int(np.argmin(sep))
    intervals = activation_intervals(log.active)
    d_min = log.meta.get("d_min")
    report = {
        "n_ticks": n,
        "min_separation": float(sep[i_min]),
        "min_separation_t": float(log.t[i_min]),
        "time_to_goal": float(log.meta.get("time_to_goal", np.nan)),
        "control_effort": float(np.sum(np.asarray(log.u) ** 2) * dt),
        "activation_intervals": intervals,
        "activation_time_intervals": [[float(log.t[a]), float(log.t[b])] for a, b in intervals],
        "n_relaxed": int(sum(1 for s in log.status if s == RELAXED)),
        "n_plan_infeasible": _count_events(log.events, "plan_infeasible"),
        "n_replans": _count_events(log.events, "replan"),
    }
    if d_min is not None:
        floor = float(d_min) - slack_c * dt * dt
        report["separation_floor"] = floor
        report["n_violations"] = int(np.sum(sep < floor))
    return report
