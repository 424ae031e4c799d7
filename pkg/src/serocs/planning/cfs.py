"""Convex feasible set planning for the long-horizon efficiency controller.

The decision variables are the controls ``u_0 .. u_{N-2}`` of a double
integrator; states are affine in them, so the tracking/smoothness cost is a
convex quadratic.  Obstacle avoidance ``d*(p_c(q_k), O) >= 0`` is convexified
at a reference trajectory by first-order expansion of the signed distance and
the resulting QP is solved repeatedly.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from ..errors import InputDomainError, PlanningError
from ..geometry import (KinematicChain, Polytope, RobotState, Sphere, inverse_kinematics, link_point,
                        link_point_jacobian, signed_distance, signed_distance_gradient)
from ..prediction.result import PredictionResult
from ..registration.grasp import GraspPose
from .qp import INFEASIBLE, solve_qp

log = logging.getLogger(__name__)

@dataclass(frozen=True, eq=False)
class PlanningProblem:
    chain: KinematicChain
    start: RobotState
    q_goal: np.ndarray
    t_s: float
    N: int
    w_g: float = 1.0
    w_v: float = 0.1
    u_lo: np.ndarray = None
    u_hi: np.ndarray = None
    obstacles: tuple = ()  # obstacles[k] = shapes constraining step k (k = 0 unused)
    critical_points: tuple = ()  # (link, fraction) pairs
    margin: float = 0.05

    def __post_init__(self):
        dof = self.chain.dof
        if self.N < 2:
            raise InputDomainError("planning needs N >= 2 steps")
        if not self.t_s > 0:
            raise InputDomainError("t_s must be > 0")
        if self.w_g < 0 or self.w_v < 0 or (self.w_g == 0 and self.w_v == 0):
            raise InputDomainError("weights must be >= 0 and not both zero")
        lo = np.full(dof, -np.inf) if self.u_lo is None else np.broadcast_to(np.asarray(self.u_lo, float), (dof,))
        hi = np.full(dof, np.inf) if self.u_hi is None else np.broadcast_to(np.asarray(self.u_hi, float), (dof,))
        if np.any(lo > hi):
            raise InputDomainError("control box is empty")
        object.__setattr__(self, "u_lo", lo.copy())
        object.__setattr__(self, "u_hi", hi.copy())
        object.__setattr__(self, "q_goal", np.asarray(self.q_goal, float).reshape(dof))
        obs = tuple(tuple(o) for o in self.obstacles) if self.obstacles else tuple(() for _ in range(self.N))
        if len(obs) != self.N:
            raise InputDomainError(f"need obstacle lists for all {self.N} steps, got {len(obs)}")
        object.__setattr__(self, "obstacles", obs)
        cps = tuple(self.critical_points) or (default_critical_point(self.chain),)
        object.__setattr__(self, "critical_points", cps)
        if self.start.q.shape != (dof,):
            raise InputDomainError("start state dimension does not match the chain")

    @property
    def dof(self) -> int:
        return self.chain.dof

    @property
    def horizon(self) -> float:
        return (self.N - 1) * self.t_s


def default_critical_point(chain: KinematicChain):
    return (0, 0.0) if chain.is_point else (chain.dof - 1, 1.0)


@dataclass
class TrajectoryPlan:
    q: np.ndarray  # (N, dof)
    dq: np.ndarray  # (N, dof)
    controls: np.ndarray  # (N-1, dof)
    t_s: float
    cost: float = np.nan
    iterations: int = 0
    converged: bool = True
    costs: list = field(default_factory=list)
    diagnostics: list = field(default_factory=list)  # (iter, cost, step_norm, active_constraints)

    @property
    def N(self) -> int:
        return self.q.shape[0]

    @property
    def states(self) -> list:
        return [RobotState(self.q[k], self.dq[k]) for k in range(self.N)]

    def times(self) -> np.ndarray:
        return np.arange(self.N) * self.t_s

    def dynamics_residual(self) -> float:
        """Max-norm mismatch between consecutive states and the ZOH double integrator."""
        ts = self.t_s
        qn = self.q[:-1] + ts * self.dq[:-1] + 0.5 * ts * ts * self.controls
        vn = self.dq[:-1] + ts * self.controls
        return float(max(np.abs(qn - self.q[1:]).max(), np.abs(vn - self.dq[1:]).max()))

    def state_at(self, t: float) -> RobotState:
        """Exact state of the piecewise-constant-control trajectory at time ``t``."""
        t = float(np.clip(t, 0.0, self.horizon))
        k = int(min(np.floor(t / self.t_s), self.N - 2))
        tau = t - k * self.t_s
        u = self.controls[k]
        return RobotState(self.q[k] + tau * self.dq[k] + 0.5 * tau * tau * u, self.dq[k] + tau * u)

    def control_at(self, t: float) -> np.ndarray:
        k = int(np.clip(np.floor(t / self.t_s), 0, self.N - 2))
        return self.controls[k]

    @property
    def horizon(self) -> float:
        return (self.N - 1) * self.t_s


@dataclass(frozen=True)
class LinearizedConstraint:
    """``coeffs @ u <= bound``, from step ``k``, obstacle ``j`` and critical point ``c``."""

    coeffs: np.ndarray
    bound: float
    origin: tuple
    degenerate: bool = False


# ---- dynamics and cost ----------------------------------------------------------

def state_maps(problem: PlanningProblem):
    """Affine maps ``q = q_off + Gq u`` and ``dq = v_off + Gv u`` over all N steps.

    Arrays have shape ``(N, dof)`` for offsets and ``(N, dof, (N-1) dof)`` for maps.
    """
    N, n, ts = problem.N, problem.dof, problem.t_s
    k = np.arange(N)
    q_off = problem.start.q[None, :] + (k * ts)[:, None] * problem.start.dq[None, :]
    v_off = np.repeat(problem.start.dq[None, :], N, axis=0)
    Gq = np.zeros((N, n, (N - 1) * n))
    Gv = np.zeros((N, n, (N - 1) * n))
    eye = np.eye(n)
    for kk in range(1, N):
        for j in range(kk):
            Gq[kk, :, j * n:(j + 1) * n] = ts * ts * (kk - j - 0.5) * eye
            Gv[kk, :, j * n:(j + 1) * n] = ts * eye
    return q_off, v_off, Gq, Gv


def trapezoid_weights(N: int) -> np.ndarray:
    w = np.ones(N)
    w[0] = w[-1] = 0.5
    return w


def trajectory_cost(problem: PlanningProblem, q, dq) -> float:
    """Trapezoidal discretization of ``int w_g |q - q_g|^2 + w_v |dq|^2 dt``."""
    q, dq = np.asarray(q, float), np.asarray(dq, float)
    tw = trapezoid_weights(q.shape[0]) * problem.t_s
    e = q - problem.q_goal
    return float(tw @ (problem.w_g * np.sum(e * e, 1) + problem.w_v * np.sum(dq * dq, 1)))


def quadratic_cost(problem: PlanningProblem, maps=None):
    """Return ``(H, f, c)`` with cost ``1/2 u'Hu + f'u + c``."""
    q_off, v_off, Gq, Gv = maps or state_maps(problem)
    tw = trapezoid_weights(problem.N) * problem.t_s
    m = Gq.shape[2]
    H = np.zeros((m, m))
    f = np.zeros(m)
    c = 0.0
    for k in range(problem.N):
        eq = q_off[k] - problem.q_goal
        H += 2 * tw[k] * (problem.w_g * Gq[k].T @ Gq[k] + problem.w_v * Gv[k].T @ Gv[k])
        f += 2 * tw[k] * (problem.w_g * Gq[k].T @ eq + problem.w_v * Gv[k].T @ v_off[k])
        c += tw[k] * (problem.w_g * eq @ eq + problem.w_v * v_off[k] @ v_off[k])
    return 0.5 * (H + H.T), f, c


def rollout(problem: PlanningProblem, controls) -> TrajectoryPlan:
    """Propagate the start state through the exact discrete dynamics."""
    U = np.asarray(controls, float).reshape(problem.N - 1, problem.dof)
    ts = problem.t_s
    q = np.empty((problem.N, problem.dof))
    dq = np.empty_like(q)
    q[0], dq[0] = problem.start.q, problem.start.dq
    for k in range(problem.N - 1):
        q[k + 1] = q[k] + ts * dq[k] + 0.5 * ts * ts * U[k]
        dq[k + 1] = dq[k] + ts * U[k]
    plan = TrajectoryPlan(q, dq, U.copy(), ts)
    plan.cost = trajectory_cost(problem, q, dq)
    return plan


def _box_rows(problem: PlanningProblem):
    m = (problem.N - 1) * problem.dof
    lo = np.tile(problem.u_lo, problem.N - 1)
    hi = np.tile(problem.u_hi, problem.N - 1)
    rows, rhs = [], []
    fin_hi, fin_lo = np.isfinite(hi), np.isfinite(lo)
    if fin_hi.any():
        rows.append(np.eye(m)[fin_hi])
        rhs.append(hi[fin_hi])
    if fin_lo.any():
        rows.append(-np.eye(m)[fin_lo])
        rhs.append(-lo[fin_lo])
    if not rows:
        return np.zeros((0, m)), np.zeros(0)
    return np.vstack(rows), np.concatenate(rhs)


# ---- problem construction -----------------------------------------------------

def goal_configuration(chain: KinematicChain, goal, q_seed=None) -> np.ndarray:
    """Configuration waypoint for a workspace goal point or grasp pose (IK for chains)."""
    point = goal.t if isinstance(goal, GraspPose) else np.asarray(goal, float).reshape(-1)
    if point.shape != (2,):
        raise InputDomainError("planar goals must be 2D points")
    return inverse_kinematics(chain, point, q_seed)


def human_obstacles(prediction: PredictionResult, times, human_now=None, extra_radius: float = 0.0,
                    dims: int = 2) -> list:
    """Spheres around the predicted human position, linearly interpolated at ``times``.

    Prediction step ``i`` is taken to describe time ``(i + 1) t_s``; times
    before the first step interpolate from ``human_now`` (zero uncertainty).
    """
    tp = (np.arange(prediction.N) + 1) * prediction.t_s
    centers = prediction.mean[:, :dims]
    radii = prediction.radii
    if human_now is not None:
        tp = np.concatenate([[0.0], tp])
        centers = np.vstack([np.asarray(human_now, float).reshape(-1)[:dims], centers])
        radii = np.concatenate([[0.0], radii])
    times = np.asarray(times, float)
    if times.max() > tp[-1] + 1e-12:
        raise InputDomainError(f"prediction covers {tp[-1]:.3f} s but planning needs {times.max():.3f} s")
    out = []
    for t in times:
        c = np.array([np.interp(t, tp, centers[:, a]) for a in range(dims)])
        out.append(Sphere(c, float(np.interp(t, tp, radii)) + extra_radius))
    return out


@dataclass(frozen=True)
class PlannerConfig:
    """Static planning setup; per-call data (start, prediction, goal) go to :func:`build_problem`."""

    chain: KinematicChain = KinematicChain()
    t_s: float = 0.2
    N: int = 21
    w_g: float = 1.0
    w_v: float = 0.1
    u_max: float = 5.0
    static_obstacles: tuple = ()
    d_min: float = 0.2
    human_radius: float = 0.0
    inflation: float = 0.05
    critical_points: tuple = ()


def build_problem(config: PlannerConfig, start: RobotState, prediction: PredictionResult | None, goal,
                  human_now=None) -> PlanningProblem:
    """Assemble a planning problem from predicted human occupancy and static shapes.

    Human spheres have radius ``r_uncertainty + d_min + human_radius +
    link_radius + inflation``; static shapes are grown by ``link_radius + inflation``.
    """
    chain = config.chain
    times = np.arange(config.N) * config.t_s
    grow = chain.link_radius + config.inflation
    static = []
    for s in config.static_obstacles:
        if not isinstance(s, (Sphere, Polytope)):
            raise InputDomainError("obstacle pieces must be spheres or convex polytopes")
        static.append(s.inflated(grow))
    per_step = [list(static) for _ in range(config.N)]
    if prediction is not None:
        hum = human_obstacles(prediction, times, human_now,
                              config.d_min + config.human_radius + grow)
        for k in range(config.N):
            per_step[k].append(hum[k])
    per_step[0] = []
    q_goal = goal_configuration(chain, goal, start.q)
    return PlanningProblem(chain, start, q_goal, config.t_s, config.N, config.w_g, config.w_v,
                           -config.u_max, config.u_max, tuple(tuple(p) for p in per_step),
                           tuple(config.critical_points), config.inflation)


# ---- convexification ------------------------------------------------------------

def convex_feasible_set(reference: TrajectoryPlan, problem: PlanningProblem, maps=None) -> list:
    """Linearize every (step, obstacle, critical point) constraint at the reference.

    Each row is ``d(r) + g'(q_k - r_k) >= 0`` with ``g = J_c(r_k)' grad d``,
    rewritten over the controls as ``-g' Gq[k] u <= d(r) + g'(q_off[k] - r_k)``.
    """
    if reference.N != problem.N:
        raise InputDomainError("reference length does not match the problem")
    q_off, _, Gq, _ = maps or state_maps(problem)
    out = []
    for k in range(1, problem.N):
        r = reference.q[k]
        for j, shape in enumerate(problem.obstacles[k]):
            for ci, (link, s) in enumerate(problem.critical_points):
                p = link_point(problem.chain, r, link, s)
                d = signed_distance(p, shape)
                grad = signed_distance_gradient(p, shape)
                g = link_point_jacobian(problem.chain, r, link, s).T @ grad.vector
                row = -g @ Gq[k]
                bound = d + g @ (q_off[k] - r)
                out.append(LinearizedConstraint(row, float(bound), (k, j, ci), grad.degenerate))
    return out


def _stack(constraints, m):
    """Stack rows; all-zero rows are dropped when satisfied and kept (infeasible) otherwise."""
    keep = [c for c in constraints if np.any(c.coeffs != 0.0) or c.bound < 0.0]
    if not keep:
        return np.zeros((0, m)), np.zeros(0)
    return np.vstack([c.coeffs for c in keep]), np.array([c.bound for c in keep])


def min_clearance(plan: TrajectoryPlan, problem: PlanningProblem) -> float:
    """Smallest true signed distance over all constrained steps, obstacles and critical points."""
    best = np.inf
    for k in range(1, problem.N):
        for shape in problem.obstacles[k]:
            for link, s in problem.critical_points:
                best = min(best, signed_distance(link_point(problem.chain, plan.q[k], link, s), shape))
    return float(best)


def initial_reference(problem: PlanningProblem, maps=None) -> TrajectoryPlan:
    """Minimum-cost dynamics-consistent trajectory subject only to the control box."""
    maps = maps or state_maps(problem)
    H, f, _ = quadratic_cost(problem, maps)
    A, b = _box_rows(problem)
    res = solve_qp(H, f, A, b)
    if not res.ok:
        raise PlanningError(f"obstacle-free subproblem failed ({res.status})", {"status": res.status})
    plan = rollout(problem, _clip_box(res.x, problem))
    plan.costs = [plan.cost]
    plan.iterations = 0
    return plan


def _clip_box(u, problem):
    return np.clip(u, np.tile(problem.u_lo, problem.N - 1), np.tile(problem.u_hi, problem.N - 1))


def _lateral_nudge(problem: PlanningProblem, ref: TrajectoryPlan, peak: float = 1e-3) -> TrajectoryPlan:
    """Shift a colliding reference sideways (left of start-to-goal) so the iteration can pick a side.

    A reference lying exactly on a symmetry line has obstacle gradients along
    that line, and the linearized problem then never leaves it.
    """
    link, s = problem.critical_points[0]
    p0 = link_point(problem.chain, problem.start.q, link, s)
    d = link_point(problem.chain, problem.q_goal, link, s) - p0
    if not np.linalg.norm(d) > 0:
        d = np.array([1.0, 0.0])
    left = np.array([-d[1], d[0]]) / np.linalg.norm(d)
    direction = np.linalg.pinv(link_point_jacobian(problem.chain, problem.start.q, link, s)) @ left
    k = np.arange(problem.N - 1)
    pattern = np.where(k < (problem.N - 1) / 2, 1.0, -1.0)[:, None] * direction[None, :]
    shift = rollout(problem, pattern).q - rollout(problem, np.zeros_like(pattern)).q
    scale = peak / max(np.abs(shift).max(), 1e-300)
    return rollout(problem, ref.controls + scale * pattern)


def braking_reference(problem: PlanningProblem) -> TrajectoryPlan:
    """Decelerate to rest as hard as the box allows, then hold.

    Collision-free whenever the start is (for a resting start it never moves),
    so its convexified set always contains it.
    """
    U = np.zeros((problem.N - 1, problem.dof))
    dq = problem.start.dq.copy()
    for k in range(problem.N - 1):
        U[k] = np.clip(-dq / problem.t_s, problem.u_lo, problem.u_hi)
        dq = dq + problem.t_s * U[k]
    return rollout(problem, U)


class _FirstSolveFailed(Exception):
    pass


def cfs_solve(problem: PlanningProblem, reference: TrajectoryPlan | None = None, max_iters: int = 50,
              step_tol: float = 1e-6, cost_tol: float = 1e-8) -> TrajectoryPlan:
    """Iterate ``x <- argmin J over F(x)`` from ``reference``.

    The default reference is the obstacle-free optimum; if it collides it is
    nudged 1e-3 to the left of the start-to-goal direction (the mirror tie-break).
    If its first convexified subproblem is empty the iteration restarts from
    :func:`braking_reference`.
    """
    maps = state_maps(problem)
    if reference is not None:
        return _iterate(problem, reference, maps, max_iters, step_tol, cost_tol, first_fatal=True)
    ref = initial_reference(problem, maps)
    if any(len(o) for o in problem.obstacles) and min_clearance(ref, problem) < 0:
        ref = _lateral_nudge(problem, ref)
    try:
        return _iterate(problem, ref, maps, max_iters, step_tol, cost_tol, first_fatal=False)
    except _FirstSolveFailed:
        log.info("obstacle-free reference gives an empty convexified set; restarting from braking")
        return _iterate(problem, braking_reference(problem), maps, max_iters, step_tol, cost_tol,
                        first_fatal=True)


def _iterate(problem, ref, maps, max_iters, step_tol, cost_tol, first_fatal):
    H, f, _ = quadratic_cost(problem, maps)
    A_box, b_box = _box_rows(problem)
    m = H.shape[0]
    costs = [ref.cost]
    diags = []
    x_warm = ref.controls.reshape(-1)
    y_warm = None
    converged = False
    it = 0
    for it in range(1, max_iters + 1):
        cons = convex_feasible_set(ref, problem, maps)
        Ac, bc = _stack(cons, m)
        A = np.vstack([A_box, Ac])
        b = np.concatenate([b_box, bc])
        if y_warm is not None and y_warm.shape[0] != A.shape[0]:
            y_warm = None
        res = solve_qp(H, f, A, b, x0=x_warm, y0=y_warm)
        if not res.ok:
            if it == 1:
                if not first_fatal:
                    raise _FirstSolveFailed()
                worst = sorted(cons, key=lambda cc: cc.bound)[:3]
                raise PlanningError(
                    f"convexified subproblem {res.status} at the first iteration "
                    f"(start or goal likely inside an inflated obstacle)",
                    {"status": res.status, "tightest": [(cc.origin, cc.bound) for cc in worst],
                     "certificate_residual": res.certificate_residual})
            log.warning("CFS subproblem %s at iteration %d; keeping previous iterate", res.status, it)
            break
        new = rollout(problem, _clip_box(res.x, problem))
        step = float(np.abs(np.hstack([new.q - ref.q, new.dq - ref.dq])).max())
        n_active = int(np.sum(res.y_ineq[A_box.shape[0]:] > 1e-9)) if Ac.shape[0] else 0
        diags.append((it, new.cost, step, n_active))
        rel = (costs[-1] - new.cost) / max(abs(costs[-1]), 1e-12)
        costs.append(new.cost)
        x_warm = res.x
        y_warm = res.y_ineq
        ref = new
        # The first solve may raise the cost (the obstacle-free start is infeasible).
        if step < step_tol or (it > 1 and 0 <= rel < cost_tol):
            converged = True
            break
    ref.costs = costs
    ref.iterations = it
    ref.converged = converged
    ref.diagnostics = diags
    return ref
