"""Short-horizon safety controller: safety index, safe-control halfspace and projection.

The robot is a double integrator in configuration space, ``x_R = (q, dq)``
with ``ddq = u``.  The human is a sphere of radius ``human_radius`` whose
center moves with velocity ``v_H``.  With ``d`` the surface gap between the
closest robot critical point and the human sphere, the safety index is

    phi = d_min^2 - d^2 - k_phi * d_dot

and the safe set of controls is the halfspace ``L u <= S``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import InputDomainError
from .geometry import (KinematicChain, RobotState, link_point, link_point_jacobian,
                       link_point_velocity_partial)
from .planning.cfs import default_critical_point
from .planning.qp import solve_qp
from .prediction.result import PredictionResult

log = logging.getLogger(__name__)

ASSUME_HUMAN = "assume_human"  # U_S^1: the human helps keep the distance
NOMINAL = "nominal"  # U_S^2: human follows the predicted velocity
ROBUST = "robust"  # U_S^3: any velocity in the predicted set
VARIANTS = {1: ASSUME_HUMAN, 2: NOMINAL, 3: ROBUST,
            ASSUME_HUMAN: ASSUME_HUMAN, NOMINAL: NOMINAL, ROBUST: ROBUST}

PASS = "pass"
PROJECTED = "projected"
RELAXED = "relaxed"


@dataclass(frozen=True, eq=False)
class SafetyConfig:
    chain: KinematicChain = KinematicChain()
    d_min: float = 0.2
    k_phi: float = 1.0
    eta_R: float = 0.1
    variant: str = ROBUST
    Q: np.ndarray | None = None
    human_radius: float = 0.0
    critical_points: tuple = ()

    def __post_init__(self):
        if not self.d_min > 0:
            raise InputDomainError("d_min must be > 0")
        if not self.k_phi > 0 or not self.eta_R > 0:
            raise InputDomainError("k_phi and eta_R must be > 0")
        if self.variant not in VARIANTS:
            raise InputDomainError(f"unknown safety variant {self.variant!r}")
        object.__setattr__(self, "variant", VARIANTS[self.variant])
        if self.human_radius < 0:
            raise InputDomainError("human_radius must be >= 0")
        dof = self.chain.dof
        Q = np.eye(dof) if self.Q is None else np.asarray(self.Q, float)
        if Q.shape != (dof, dof) or np.abs(Q - Q.T).max() > 1e-12 * max(1.0, np.abs(Q).max()):
            raise InputDomainError("Q must be a symmetric dof x dof matrix")
        if np.linalg.eigvalsh(Q).min() < -1e-12:
            raise InputDomainError("Q must be positive semidefinite")
        object.__setattr__(self, "Q", Q)
        cps = tuple(self.critical_points) or (default_critical_point(self.chain),)
        object.__setattr__(self, "critical_points", cps)


@dataclass(frozen=True)
class HumanInfo:
    """Current human center, its estimated velocity and the radius of the velocity ball."""

    position: np.ndarray
    velocity: np.ndarray
    velocity_radius: float = 0.0

    def __post_init__(self):
        p = np.asarray(self.position, float).reshape(-1)[:2]
        v = np.asarray(self.velocity, float).reshape(-1)[:2]
        if p.shape != (2,) or v.shape != (2,):
            raise InputDomainError("human position and velocity need (at least) 2 coordinates")
        if not np.isfinite(self.velocity_radius) or self.velocity_radius < 0:
            raise InputDomainError("the human velocity set is empty (radius < 0)")
        object.__setattr__(self, "position", p)
        object.__setattr__(self, "velocity", v)


class SafetyIndex(NamedTuple):
    phi: float
    d: float
    d_dot: float
    dphi_dq: np.ndarray
    dphi_ddq: np.ndarray
    dphi_dpH: np.ndarray
    dphi_dvH: np.ndarray
    point: int  # index of the active critical point
    degenerate: bool


@dataclass
class SafeControlSet:
    L: np.ndarray
    S: float
    active: bool
    phi: float = np.nan
    degenerate: bool = False

    def contains(self, u, tol: float = 1e-9) -> bool:
        return (not self.active) or float(self.L @ np.asarray(u, float)) <= self.S + tol


def separation(chain: KinematicChain, q, human_center, cfg: SafetyConfig):
    """Surface gap from each critical point to the human sphere (critical points have the link radius)."""
    c = np.asarray(human_center, float)[:2]
    return np.array([np.linalg.norm(c - link_point(chain, q, link, s)) for link, s in cfg.critical_points]) \
        - chain.link_radius - cfg.human_radius


def safety_index(x_R: RobotState, human_position, human_velocity, cfg: SafetyConfig) -> SafetyIndex:
    """Safety index at the closest critical point with its analytic partial derivatives."""
    chain = cfg.chain
    q, dq = x_R.q, x_R.dq
    c = np.asarray(human_position, float)[:2]
    vH = np.asarray(human_velocity, float)[:2]
    gaps = separation(chain, q, c, cfg)
    i = int(np.argmin(gaps))
    link, s = cfg.critical_points[i]
    p = link_point(chain, q, link, s)
    J = link_point_jacobian(chain, q, link, s)
    diff = c - p
    rho = float(np.linalg.norm(diff))
    degenerate = rho == 0.0
    n = np.array([1.0, 0.0]) if degenerate else diff / rho
    P = np.zeros((2, 2)) if degenerate else (np.eye(2) - np.outer(n, n)) / rho  # dn/dc
    vrel = vH - J @ dq
    d = float(gaps[i])
    d_dot = float(n @ vrel)
    k = cfg.k_phi
    phi = cfg.d_min ** 2 - d * d - k * d_dot
    # d(d)/dq = -n'J; d(d_dot)/dq = vrel' dn/dq - n' d(J dq)/dq with dn/dq = -P J
    dd_dq = -n @ J
    ddot_dq = -vrel @ P @ J - n @ link_point_velocity_partial(chain, q, dq, link, s)
    dphi_dq = -2 * d * dd_dq - k * ddot_dq
    dphi_ddq = k * (n @ J)
    dphi_dpH = -2 * d * n - k * (vrel @ P)
    dphi_dvH = -k * n
    if degenerate:
        log.warning("safety index: robot point coincides with the human center; direction tie-broken")
    return SafetyIndex(phi, d, d_dot, dphi_dq, dphi_ddq, dphi_dpH, dphi_dvH, i, degenerate)


def safe_control_set(x_R: RobotState, human: HumanInfo, cfg: SafetyConfig, variant=None,
                     force: bool = False) -> SafeControlSet:
    """Halfspace ``L u <= S`` that makes ``phi`` decrease at rate ``eta_R`` when ``phi >= 0``.

    ``S = -eta_R - dphi/dp_H . v_H - dphi/dq . dq`` (the human acceleration is
    taken as zero).  Variants differ in the human velocity used: the estimate
    (nominal), the worst case over the velocity ball (robust) or the best
    case (assume_human).  ``force`` builds the ``phi >= 0`` halfspace regardless of ``phi``.
    """
    variant = VARIANTS.get(variant if variant is not None else cfg.variant)
    if variant is None:
        raise InputDomainError(f"unknown safety variant {variant!r}")
    idx = safety_index(x_R, human.position, human.velocity, cfg)
    L = idx.dphi_ddq
    if idx.phi < 0 and not force:
        return SafeControlSet(L, np.inf, False, idx.phi, idx.degenerate)
    S = -cfg.eta_R - idx.dphi_dpH @ human.velocity - idx.dphi_dq @ x_R.dq
    spread = human.velocity_radius * float(np.linalg.norm(idx.dphi_dpH))
    if variant == ROBUST:
        S -= spread
    elif variant == ASSUME_HUMAN:
        S += spread
    degenerate = idx.degenerate or not np.any(L != 0.0)
    if not np.any(L != 0.0):
        log.warning("safety index: control has no effect on phi (L = 0)")
    return SafeControlSet(L, float(S), True, idx.phi, degenerate)


def _box(lo, hi, n):
    lo = np.broadcast_to(np.asarray(lo, float), (n,)).copy()
    hi = np.broadcast_to(np.asarray(hi, float), (n,)).copy()
    if np.any(lo > hi):
        raise InputDomainError("control box is empty")
    return lo, hi


def project_control(u_o, cset: SafeControlSet, u_lo, u_hi, Q=None):
    """``argmin |u - u_o|_Q^2`` over the box and ``L u <= S``; returns ``(u, status)``.

    ``u_o`` is returned unchanged when it already satisfies both.  When the box
    misses the halfspace, the box point with the smallest ``L u`` (nearest to
    ``u_o`` among ties) is returned with status ``relaxed``.
    """
    u_o = np.asarray(u_o, float)
    n = u_o.shape[0]
    lo, hi = _box(u_lo, u_hi, n)
    Q = np.eye(n) if Q is None else np.asarray(Q, float)
    in_box = np.all(u_o >= lo) and np.all(u_o <= hi)
    if in_box and cset.contains(u_o, tol=0.0):
        return u_o.copy(), PASS
    A, b = [], []
    if cset.active:
        L = cset.L
        corner = np.where(L > 0, lo, np.where(L < 0, hi, np.clip(u_o, lo, hi)))
        if L @ corner > cset.S:
            log.info("safe set misses the control box; braking to the least-unsafe control")
            return corner, RELAXED
        A.append(L[None, :])
        b.append([cset.S])
    fin = np.isfinite(hi)
    A.append(np.eye(n)[fin])
    b.append(hi[fin])
    fin = np.isfinite(lo)
    A.append(-np.eye(n)[fin])
    b.append(-lo[fin])
    res = solve_qp(2 * Q, -2 * Q @ u_o, np.vstack(A), np.concatenate(b), tol=1e-12)
    u = np.clip(res.x, lo, hi)
    if not res.ok:
        log.warning("projection QP returned %s", res.status)
    return u, PROJECTED


def human_velocity_bounds(pred: PredictionResult, x_H_now, t_s: float):
    """Velocity estimate toward the first predicted position and the radius of the velocity ball."""
    if not t_s > 0:
        raise InputDomainError("t_s must be > 0")
    if pred.N < 1:
        raise InputDomainError("prediction has no steps")
    x = np.asarray(x_H_now, float).reshape(-1)
    d = pred.mean.shape[1]
    v = (pred.mean[0] - x[:d]) / t_s
    return v, float(pred.radii[0]) / t_s


def safety_controller(x_R: RobotState, u_o, human: HumanInfo | None, cfg: SafetyConfig, u_lo, u_hi,
                      dt: float | None = None):
    """One safety tick: returns ``(u, status, SafeControlSet or None)``.

    With a tick length ``dt`` the constraint is also enforced when ``phi < 0``
    but holding ``u_o`` for one tick would carry ``phi`` (to first order) past
    zero; otherwise a single unconstrained tick can raise ``phi`` by ``O(dt)``.
    """
    if human is None:
        return np.asarray(u_o, float).copy(), PASS, None
    cset = safe_control_set(x_R, human, cfg)
    if not cset.active and dt is not None:
        forced = safe_control_set(x_R, human, cfg, force=True)
        rate = float(forced.L @ np.asarray(u_o, float)) - forced.S - cfg.eta_R  # variant-consistent phi_dot(u_o)
        if forced.phi + dt * rate >= 0.0:
            cset = forced
    u, status = project_control(u_o, cset, u_lo, u_hi, cfg.Q)
    return u, status, cset
