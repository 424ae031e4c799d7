"""Scenario description for the closed-loop simulator and its dict (JSON) form."""
from __future__ import annotations

from dataclasses import dataclass, field, fields, replace

import numpy as np

from ..errors import InputDomainError
from ..geometry import KinematicChain, Polytope, RobotState, Sphere

FORMAT_VERSION = 1
PRESETS = {"paper": (5, 1000), "fast": (5, 100)}  # (efficiency_hz, safety_hz)


@dataclass(frozen=True, eq=False)
class ScenarioConfig:
    name: str = "scenario"
    chain: KinematicChain = KinematicChain()
    start: RobotState = RobotState.at_rest([0.0, 0.0])
    goals: tuple = ()  # ordered 2D waypoints; empty and no task means idle mode
    static_obstacles: tuple = ()
    human: dict | None = None  # generator spec, see sim.human.make_human
    efficiency_hz: int = 5
    safety_hz: int = 100
    sensor_hz: int = 10
    duration: float = 5.0
    seed: int = 0
    safety: dict = field(default_factory=dict)  # SafetyConfig keyword overrides
    predictor: dict = field(default_factory=lambda: {"kind": "constant_speed", "a_max": 0.5, "N": 10})
    planner: dict = field(default_factory=dict)  # PlannerConfig keyword overrides (N, t_s, w_g, w_v, inflation)
    u_max: float = 5.0
    kp: float = 25.0
    kd: float = 10.0
    goal_tolerance: float = 0.02
    sensor_noise: float = 0.0
    plan_delay: bool = False  # activate each plan one efficiency period after it is computed
    task: dict | None = None  # end-to-end delivery task, see runtime
    occlusions: tuple = ()  # (t0, t1) intervals without human observations

    def __post_init__(self):
        if self.safety_hz < self.efficiency_hz or self.efficiency_hz <= 0:
            raise InputDomainError("need safety_hz >= efficiency_hz > 0")
        if self.safety_hz % self.efficiency_hz or self.safety_hz % self.sensor_hz:
            raise InputDomainError("efficiency and sensor rates must divide the safety rate")
        if not self.duration > 0:
            raise InputDomainError("duration must be > 0")
        if self.start.q.shape != (self.chain.dof,):
            raise InputDomainError("start state dimension does not match the chain")
        goals = tuple(np.asarray(g, float).reshape(2) for g in self.goals)
        object.__setattr__(self, "goals", goals)
        for s in self.static_obstacles:
            if not isinstance(s, (Sphere, Polytope)):
                raise InputDomainError("static obstacles must be spheres or polytopes")
        if self.predictor.get("kind") not in ("constant_speed", "adaptive_nn"):
            raise InputDomainError(f"unknown predictor {self.predictor.get('kind')!r}")

    @property
    def idle(self) -> bool:
        return not self.goals and self.task is None

    @property
    def dt(self) -> float:
        return 1.0 / self.safety_hz

    @property
    def n_ticks(self) -> int:
        return int(round(self.duration * self.safety_hz))

    def with_preset(self, preset: str) -> "ScenarioConfig":
        if preset not in PRESETS:
            raise InputDomainError(f"unknown rate preset {preset!r}")
        eff, saf = PRESETS[preset]
        return replace(self, efficiency_hz=eff, safety_hz=saf)


# ---- dict form --------------------------------------------------------------------

def _shape_to_dict(s):
    if isinstance(s, Sphere):
        return {"type": "sphere", "center": s.center.tolist(), "radius": s.radius}
    return {"type": "polytope", "normals": s.normals.tolist(), "offsets": s.offsets.tolist()}


def _shape_from_dict(d):
    if d.get("type") == "sphere":
        return Sphere(d["center"], d["radius"])
    if d.get("type") == "polytope":
        return Polytope(d["normals"], d["offsets"])
    if d.get("type") == "box":
        return Polytope.box(d["lo"], d["hi"])
    raise InputDomainError(f"unknown obstacle type {d.get('type')!r}")


def scenario_to_dict(cfg: ScenarioConfig) -> dict:
    out = {"version": FORMAT_VERSION}
    for f in fields(cfg):
        v = getattr(cfg, f.name)
        if f.name == "chain":
            v = {"link_lengths": list(v.link_lengths), "base": v.base.tolist(), "link_radius": v.link_radius}
        elif f.name == "start":
            v = {"q": v.q.tolist(), "dq": v.dq.tolist()}
        elif f.name == "goals":
            v = [g.tolist() for g in v]
        elif f.name == "static_obstacles":
            v = [_shape_to_dict(s) for s in v]
        elif f.name == "occlusions":
            v = [list(o) for o in v]
        out[f.name] = v
    return out


def scenario_from_dict(d: dict) -> ScenarioConfig:
    d = dict(d)
    version = d.pop("version", None)
    if version != FORMAT_VERSION:
        raise InputDomainError(f"unsupported scenario version {version!r}")
    known = {f.name for f in fields(ScenarioConfig)}
    unknown = set(d) - known
    if unknown:
        raise InputDomainError(f"unknown scenario keys: {sorted(unknown)}")
    if "chain" in d:
        c = d["chain"]
        d["chain"] = KinematicChain(tuple(c.get("link_lengths", ())), np.asarray(c.get("base", [0, 0])),
                                    c.get("link_radius", 0.0))
    if "start" in d:
        s = d["start"]
        d["start"] = RobotState(s["q"], s.get("dq", np.zeros(len(s["q"]))))
    if "goals" in d:
        d["goals"] = tuple(d["goals"])
    if "static_obstacles" in d:
        d["static_obstacles"] = tuple(_shape_from_dict(s) for s in d["static_obstacles"])
    if "occlusions" in d:
        d["occlusions"] = tuple(tuple(o) for o in d["occlusions"])
    return ScenarioConfig(**d)


def scenarios_equal(a: ScenarioConfig, b: ScenarioConfig, tol: float = 1e-12) -> bool:
    """Structural equality of two scenarios with float tolerance."""
    def close(x, y):
        if isinstance(x, dict) and isinstance(y, dict):
            return x.keys() == y.keys() and all(close(x[k], y[k]) for k in x)
        if isinstance(x, (list, tuple)) and isinstance(y, (list, tuple)):
            return len(x) == len(y) and all(close(p, q) for p, q in zip(x, y))
        if isinstance(x, (int, float)) and isinstance(y, (int, float)) and not isinstance(x, bool):
            return abs(x - y) <= tol
        return x == y
    return close(scenario_to_dict(a), scenario_to_dict(b))


# ---- shipped scenarios ----------------------------------------------------------------

IDLE_ARM = KinematicChain((0.5, 0.4), link_radius=0.03)
IDLE_Q = np.array([0.4, 0.9])


def idle_sweep_scenario(preset: str = "paper", seed: int = 0, speed: float = 0.4,
                        pass_radius: float = 0.95) -> ScenarioConfig:
    """Idle arm at its neutral pose; a head-sized sphere walks tangentially past the end effector.

    The walking line is tangent to the circle of ``pass_radius`` around the
    base at the end-effector bearing, so without evasion the gap would shrink
    to ``pass_radius - |ee| - link_radius - human_radius``.
    """
    eff, saf = PRESETS[preset]
    ee = IDLE_ARM.link_lengths[0] * np.array([np.cos(IDLE_Q[0]), np.sin(IDLE_Q[0])]) + \
        IDLE_ARM.link_lengths[1] * np.array([np.cos(IDLE_Q.sum()), np.sin(IDLE_Q.sum())])
    bearing = ee / np.linalg.norm(ee)
    closest = pass_radius * bearing
    along = np.array([-bearing[1], bearing[0]])
    half = 0.5 * speed * 7.0
    return ScenarioConfig(
        name=f"idle_sweep_{preset}", chain=IDLE_ARM, start=RobotState.at_rest(IDLE_Q),
        human={"generator": "sweep", "start": (closest - half * along).tolist(),
               "end": (closest + half * along).tolist(), "speed": speed},
        efficiency_hz=eff, safety_hz=saf, sensor_hz=10, duration=7.0, seed=seed,
        safety={"d_min": 0.2, "k_phi": 1.0, "eta_R": 0.1, "human_radius": 0.1},
        predictor={"kind": "constant_speed", "a_max": 0.5, "N": 10}, u_max=5.0)


def delivery_scenario(plan: int = 1, preset: str = "fast", seed: int = 0) -> ScenarioConfig:
    """End-to-end analog: recognize the human's plan, fetch the matching part, deliver it near the human."""
    eff, saf = PRESETS[preset]
    return ScenarioConfig(
        name=f"delivery_plan{plan}_{preset}", chain=KinematicChain((0.5, 0.45), base=[0.0, 0.0],
                                                                  link_radius=0.03),
        start=RobotState.at_rest([1.6, 0.8]),
        human={"generator": "two_plan", "plan": plan},
        efficiency_hz=eff, safety_hz=saf, sensor_hz=10, duration=12.0, seed=seed,
        safety={"d_min": 0.2, "k_phi": 1.0, "eta_R": 0.1, "human_radius": 0.1},
        predictor={"kind": "constant_speed", "a_max": 0.2, "N": 10},
        planner={"N": 11, "t_s": 0.2, "w_g": 1.0, "w_v": 0.1, "inflation": 0.05},
        u_max=4.0,
        task={
            "objects": [{"category": "box", "position": [0.0, 0.6], "seed": 11},
                        {"category": "cylinder", "position": [-0.4, 0.45], "seed": 12},
                        {"category": "torus", "position": [0.25, 0.7], "seed": 13}],
            "plan_objects": {"1": "box", "2": "cylinder"},
            "deliver_to": [0.5, 0.05],
            "object_scale": 0.1,
            "classifier": {"n_per_plan": 50, "seed": 0},
            "hysteresis": 3,
        })
