"""Deterministic two-rate closed loop: efficiency planner plus safety projection.

Time advances in safety ticks of ``1 / safety_hz``.  Each tick reads the
human, computes the reference control (plan tracking or idle regulation),
projects it through the safety controller and integrates the double
integrator exactly.  Every ``safety_hz / efficiency_hz`` ticks the plan
label, prediction and CFS plan are refreshed.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np

from ..errors import InputDomainError, PlanningError
from ..geometry import RobotState, integrate, link_point
from ..planning.cfs import PlannerConfig, build_problem, cfs_solve
from ..prediction.baseline import constant_speed_predictor
from ..prediction.classifier import classify_plan, train_plan_classifier
from ..prediction.encoding import TrajectoryWindow
from ..prediction.motion import adapt_online, predict_with_uncertainty, train_nn_offline
from ..prediction.synthetic import constant_velocity_dataset, two_plan_dataset
from ..registration.benchmark import CATEGORIES, category_template, smooth_deform
from ..registration.cpd import PointCloud, cpd_register
from ..registration.grasp import GraspPose, select_target, transfer_grasp
from ..safety import PASS, HumanInfo, SafetyConfig, human_velocity_bounds, safety_controller, separation
from .human import make_human
from .scenario import ScenarioConfig

log = logging.getLogger(__name__)


@dataclass
class SimLog:
    """Columnar per-tick record plus replan records and run metadata."""

    t: np.ndarray
    q: np.ndarray
    dq: np.ndarray
    human: np.ndarray  # (n, 3), NaN when no human
    phi: np.ndarray  # NaN when no human
    active: np.ndarray
    L: np.ndarray
    S: np.ndarray
    u_o: np.ndarray
    u: np.ndarray
    status: list
    separation: np.ndarray  # inf when no human
    events: list  # per tick, ';'-joined
    replans: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return self.t.shape[0]


# ---- cached offline learning ----------------------------------------------------------

@lru_cache(maxsize=8)
def _trained_classifier(n_per_plan: int, seed: int):
    return train_plan_classifier(two_plan_dataset(np.random.default_rng(seed), n_per_plan))


@lru_cache(maxsize=4)
def _trained_predictor(n_tracks: int, N: int, t_s: float, seed: int, epochs: int):
    data = constant_velocity_dataset(np.random.default_rng(seed), n_tracks, N, t_s=t_s)
    return train_nn_offline(data, epochs=epochs, seed=seed, t_s=t_s)


def object_cloud(category: str, seed: int) -> np.ndarray:
    """A scene object: deformed, noisy copy of the category template (unit scale, local frame)."""
    base = category_template(category, 60, np.random.default_rng(CATEGORIES.index(category)))
    rng = np.random.default_rng(seed)
    return smooth_deform(base, rng) + rng.normal(scale=0.01, size=base.shape)


TEMPLATE_GRASP = GraspPose(np.array([0.0, 0.0, 0.3]), np.eye(3))


def grasp_goal(task: dict, category: str):
    """Select the scene object matching ``category`` and carry the template grasp onto it.

    Registration runs in object-local unit frames; the returned 2D goal is the
    object position plus the scaled planar part of the transferred grasp point.
    """
    source = PointCloud(category_template(category, 60, np.random.default_rng(CATEGORIES.index(category))))
    clouds = [PointCloud(object_cloud(o["category"], int(o["seed"]))) for o in task["objects"]]
    idx, scores = select_target(source, clouds)
    g = transfer_grasp(cpd_register(source, clouds[idx]), TEMPLATE_GRASP)
    pos = np.asarray(task["objects"][idx]["position"], float)
    return pos + float(task.get("object_scale", 0.1)) * g.t[:2], idx, g


# ---- predictor wrapper -----------------------------------------------------------------

class _Predictor:
    def __init__(self, spec: dict, t_s: float, horizon_s: float):
        self.kind = spec["kind"]
        self.t_s = t_s
        self.N = int(spec.get("N", 10))
        self.a_max = float(spec.get("a_max", 0.5))
        self.adapt = bool(spec.get("adapt", False))
        self.horizon = max(1, int(np.ceil(horizon_s / t_s - 1e-9)))
        self.model = None
        if self.kind == "adaptive_nn":
            if "model" in spec:
                from ..io import load_predictor

                self.model = load_predictor(spec["model"])
            else:
                tr = spec.get("train", {})
                self.model = _trained_predictor(int(tr.get("n_tracks", 60)), self.N, t_s,
                                                int(tr.get("seed", 0)), int(tr.get("epochs", 100)))
            self.N = self.model.N
            if self.N * t_s < horizon_s - 1e-9:
                raise InputDomainError(
                    f"predictor covers {self.N * t_s:.2f} s but the planner needs {horizon_s:.2f} s")

    def window(self, history):
        H = np.asarray(history)
        if H.shape[0] < self.N:
            H = np.vstack([np.repeat(H[:1], self.N - H.shape[0], axis=0), H])
        return TrajectoryWindow(H[-self.N:], self.t_s)

    def predict(self, history, plan: int):
        w = self.window(history)
        if self.kind == "constant_speed":
            return constant_speed_predictor(w, self.horizon, self.a_max)
        return predict_with_uncertainty(self.model, w, plan)

    def observe(self, history, plan: int):
        if self.kind != "adaptive_nn" or not self.adapt or len(history) < 2 * self.N:
            return
        H = np.asarray(history)
        self.model, _ = adapt_online(self.model, H[-self.N:], TrajectoryWindow(H[-2 * self.N:-self.N], self.t_s),
                                     plan)


# ---- the loop --------------------------------------------------------------------------

def _safety_config(cfg: ScenarioConfig) -> SafetyConfig:
    kw = dict(cfg.safety)
    if "critical_points" in kw:
        kw["critical_points"] = tuple(tuple(c) for c in kw["critical_points"])
    if "Q" in kw and kw["Q"] is not None:
        kw["Q"] = np.asarray(kw["Q"], float)
    return SafetyConfig(chain=cfg.chain, **kw)


def _planner_config(cfg: ScenarioConfig, scfg: SafetyConfig) -> PlannerConfig:
    kw = {"N": 11, "t_s": 1.0 / cfg.efficiency_hz}
    kw.update(cfg.planner)
    return PlannerConfig(chain=cfg.chain, u_max=cfg.u_max, static_obstacles=tuple(cfg.static_obstacles),
                         d_min=scfg.d_min, human_radius=scfg.human_radius,
                         critical_points=scfg.critical_points, **kw)


def run_scenario(cfg: ScenarioConfig, seed: int | None = None) -> SimLog:
    """Simulate ``cfg``; ``seed`` overrides ``cfg.seed``.  Equal inputs give identical logs."""
    seed = cfg.seed if seed is None else int(seed)
    if cfg.sensor_hz % cfg.efficiency_hz:
        raise InputDomainError("the efficiency rate must divide the sensor rate")
    rng = np.random.default_rng(seed)
    human = make_human(cfg.human, rng, cfg.duration)
    scfg = _safety_config(cfg)
    pcfg = _planner_config(cfg, scfg)
    t_pred = 1.0 / cfg.sensor_hz
    predictor = _Predictor(cfg.predictor, t_pred, (pcfg.N - 1) * pcfg.t_s) if human is not None else None

    n, dof, dt = cfg.n_ticks, cfg.chain.dof, cfg.dt
    eff_every = cfg.safety_hz // cfg.efficiency_hz
    sense_every = cfg.safety_hz // cfg.sensor_hz
    lo, hi = np.full(dof, -cfg.u_max), np.full(dof, cfg.u_max)
    cols = {k: np.full((n, dof), np.nan) for k in ("q", "dq", "L", "u_o", "u")}
    hum = np.full((n, 3), np.nan)
    phi = np.full(n, np.nan)
    S = np.full(n, np.nan)
    active = np.zeros(n, bool)
    sep = np.full(n, np.inf)
    status, events, replans = [PASS] * n, [""] * n, []

    # task state
    task = cfg.task
    goals = list(cfg.goals)
    goal_idx = 0
    label, cand, cand_count = None, None, 0
    hysteresis = int(task.get("hysteresis", 3)) if task else 3
    clf = None
    if task is not None:
        c = task.get("classifier", {})
        clf = _trained_classifier(int(c.get("n_per_plan", 50)), int(c.get("seed", 0)))
        goals = []
    done_time = np.nan
    ee = (cfg.chain.dof - 1, 1.0) if not cfg.chain.is_point else (0, 0.0)

    x = cfg.start
    q_hold = cfg.start.q.copy()
    plan, plan_t0, pending = None, 0.0, None
    history, last_obs_t = [], -np.inf
    v_hat, v_rad, pred = np.zeros(3), 0.0, None

    for k in range(n):
        t = k * dt
        ev = []
        pH = vH = None
        if human is not None:
            pH, vH = human.state(t)
            hum[k] = pH
            occluded = any(a <= t < b for a, b in cfg.occlusions)
            if k % sense_every == 0 and not occluded:
                obs = pH + (rng.normal(scale=cfg.sensor_noise, size=3) if cfg.sensor_noise > 0 else 0.0)
                obs = np.asarray(obs, float)
                missed = int(round((t - last_obs_t) / t_pred)) - 1 if history else 0
                if missed > 0:
                    # keep the window uniform after a gap: fill missed samples linearly
                    last = history[-1]
                    for j in range(1, missed + 1):
                        history.append(last + (obs - last) * j / (missed + 1))
                history.append(obs)
                last_obs_t = t
                predictor.observe(history, label or 1)
            if occluded and k % sense_every == 0:
                ev.append("occluded")

        if k % eff_every == 0:
            if pending is not None:
                plan, plan_t0 = pending
                pending = None
            # T1: plan recognition with hysteresis, T2 on label change
            if clf is not None and len(history) >= 2:
                lab, _ = classify_plan(clf, TrajectoryWindow(np.asarray(history), t_pred))
                cand_count = cand_count + 1 if lab == cand else 1
                cand = lab
                if cand_count >= hysteresis and lab != label:
                    label = lab
                    ev.append(f"label:{lab}")
                    category = task["plan_objects"][str(lab)]
                    goal, idx, _ = grasp_goal(task, category)
                    goals = [goal, np.asarray(task["deliver_to"], float)]
                    goal_idx = 0
                    ev.append(f"target:{idx}")
            if human is not None and history:
                pred = predictor.predict(history, label or 1)
                v_hat, v_rad = human_velocity_bounds(pred, history[-1], t_pred)
            if goal_idx < len(goals):
                try:
                    human_pred = pred if human is not None else None
                    prob = build_problem(pcfg, x, human_pred, goals[goal_idx],
                                         human_now=history[-1] if human is not None else None)
                    new = cfs_solve(prob)
                    replans.append({"tick": k, "t": t, "cost": new.cost, "iterations": new.iterations,
                                    "converged": new.converged, "status": "ok"})
                    ev.append("replan")
                    if cfg.plan_delay:
                        pending = (new, t + eff_every * dt)
                    else:
                        plan, plan_t0 = new, t
                except PlanningError as exc:
                    replans.append({"tick": k, "t": t, "cost": np.nan, "iterations": 0, "converged": False,
                                    "status": "infeasible"})
                    ev.append("plan_infeasible")
                    log.info("t=%.3f planning failed: %s", t, exc)

        # reference control
        if plan is not None and goal_idx < len(goals) + 1:
            tau = t - plan_t0
            ref = plan.state_at(tau)
            u_ff = plan.control_at(tau) if tau < plan.horizon else np.zeros(dof)
            u_o = u_ff + cfg.kp * (ref.q - x.q) + cfg.kd * (ref.dq - x.dq)
        else:
            u_o = cfg.kp * (q_hold - x.q) - cfg.kd * x.dq

        # safety projection
        if human is not None:
            pos = pH
            sc = scfg
            if t - last_obs_t > t_pred + 1e-12:
                # no fresh observation: extrapolate the last one, inflate by the prediction radius
                el = t - last_obs_t
                pos = history[-1] + el * v_hat
                grow = float(np.interp(el, (np.arange(pred.N) + 1) * pred.t_s, pred.radii)) if pred else 0.0
                sc = replace(scfg, human_radius=scfg.human_radius + grow)
            info = HumanInfo(pos, v_hat, v_rad)
            u, st, cset = safety_controller(x, u_o, info, sc, lo, hi, dt=cfg.dt)
            phi[k], S[k], active[k] = cset.phi, cset.S, cset.active
            cols["L"][k] = cset.L
            sep[k] = float(separation(cfg.chain, x.q, pH, scfg).min())
        else:
            u, st = np.clip(u_o, lo, hi), PASS
        cols["q"][k], cols["dq"][k], cols["u_o"][k], cols["u"][k] = x.q, x.dq, u_o, u
        status[k] = st

        x = integrate(x, u, dt)

        # goal progress (checked on the post-step state)
        if goal_idx < len(goals):
            p = link_point(cfg.chain, x.q, *ee)
            if np.linalg.norm(p - goals[goal_idx]) < cfg.goal_tolerance and np.linalg.norm(x.dq) < 0.1:
                ev.append(f"goal:{goal_idx}")
                goal_idx += 1
                if goal_idx == len(goals):
                    done_time = t + dt
                    q_hold = x.q.copy()
                    plan = None
        events[k] = ";".join(ev)

    meta = {"name": cfg.name, "seed": seed, "dof": dof, "safety_hz": cfg.safety_hz,
            "efficiency_hz": cfg.efficiency_hz, "d_min": scfg.d_min, "dt": dt, "time_to_goal": done_time,
            "human_clamps": human.clamp_events if human is not None else 0, "label": label}
    return SimLog(np.arange(n) * dt, cols["q"], cols["dq"], hum, phi, active, cols["L"], S, cols["u_o"],
                  cols["u"], status, sep, events, replans, meta)
