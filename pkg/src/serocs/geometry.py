"""Convex shapes, signed distances, a planar kinematic chain and small-matrix helpers.

Everything in here is a pure function over immutable values.  Shapes store
read-only numpy arrays so they can be shared between threads and simulator
ticks without copying.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence, Union

import numpy as np

from .errors import DegenerateInputError, InputDomainError

_NORMAL_TOL = 1e-9
_TIE_TOL = 1e-12


def _frozen(a, dtype=float) -> np.ndarray:
    arr = np.array(a, dtype=dtype)
    arr.setflags(write=False)
    return arr


def _as_point(p, dim=None) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    if p.ndim != 1 or (dim is not None and p.shape[0] != dim):
        raise InputDomainError(f"expected a point of dimension {dim}, got shape {p.shape}")
    if not np.all(np.isfinite(p)):
        raise InputDomainError("point has non-finite coordinates")
    return p


def _canonical(dim: int) -> np.ndarray:
    e = np.zeros(dim)
    e[0] = 1.0
    return e


# --------------------------------------------------------------------------- shapes


@dataclass(frozen=True, eq=False)
class Sphere:
    center: np.ndarray
    radius: float

    def __post_init__(self):
        c = _as_point(self.center)
        if c.shape[0] not in (2, 3):
            raise InputDomainError("only 2D and 3D shapes are supported")
        if not np.isfinite(self.radius) or self.radius < 0:
            raise InputDomainError(f"sphere radius must be >= 0, got {self.radius}")
        object.__setattr__(self, "center", _frozen(c))
        object.__setattr__(self, "radius", float(self.radius))

    @property
    def dim(self) -> int:
        return self.center.shape[0]

    def inflated(self, margin: float) -> "Sphere":
        return Sphere(self.center, self.radius + margin)


@dataclass(frozen=True, eq=False)
class Capsule:
    """Segment ``a``-``b`` swept by a ball of ``radius``; ``a == b`` is allowed."""

    a: np.ndarray
    b: np.ndarray
    radius: float = 0.0

    def __post_init__(self):
        a = _as_point(self.a)
        b = _as_point(self.b, a.shape[0])
        if a.shape[0] not in (2, 3):
            raise InputDomainError("only 2D and 3D shapes are supported")
        if not np.isfinite(self.radius) or self.radius < 0:
            raise InputDomainError(f"capsule radius must be >= 0, got {self.radius}")
        object.__setattr__(self, "a", _frozen(a))
        object.__setattr__(self, "b", _frozen(b))
        object.__setattr__(self, "radius", float(self.radius))

    @property
    def dim(self) -> int:
        return self.a.shape[0]


@dataclass(frozen=True, eq=False)
class Polytope:
    """Bounded convex polytope ``{x : normals @ x <= offsets}`` with unit normals."""

    normals: np.ndarray
    offsets: np.ndarray
    _checked: bool = field(default=False, repr=False)

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.normals, dtype=float))
        b = np.atleast_1d(np.asarray(self.offsets, dtype=float))
        if A.shape[0] == 0 or A.shape[0] != b.shape[0]:
            raise InputDomainError("polytope needs a nonempty, matching list of halfspaces")
        if A.shape[1] not in (2, 3):
            raise InputDomainError("only 2D and 3D shapes are supported")
        if not (np.all(np.isfinite(A)) and np.all(np.isfinite(b))):
            raise InputDomainError("polytope halfspaces must be finite")
        if np.any(np.abs(np.linalg.norm(A, axis=1) - 1.0) > _NORMAL_TOL):
            raise InputDomainError("polytope normals must be unit length within 1e-9")
        if not self._checked:
            _check_bounded_nonempty(A, b)
        object.__setattr__(self, "normals", _frozen(A))
        object.__setattr__(self, "offsets", _frozen(b))

    @property
    def dim(self) -> int:
        return self.normals.shape[1]

    @classmethod
    def box(cls, lo, hi) -> "Polytope":
        lo = np.asarray(lo, dtype=float)
        hi = np.asarray(hi, dtype=float)
        if lo.shape != hi.shape or np.any(hi <= lo):
            raise InputDomainError("box needs lo < hi in every axis")
        d = lo.shape[0]
        eye = np.eye(d)
        return cls(np.vstack([eye, -eye]), np.concatenate([hi, -lo]), _checked=True)

    def inflated(self, margin: float) -> "Polytope":
        if margin < 0:
            return Polytope(self.normals, self.offsets + margin)
        return Polytope(self.normals, self.offsets + margin, _checked=True)


def _check_bounded_nonempty(A: np.ndarray, b: np.ndarray) -> None:
    from scipy.optimize import linprog

    m, d = A.shape
    if np.linalg.matrix_rank(A) < d:
        raise InputDomainError("polytope is unbounded (normals do not span the space)")
    # Stiemke: {x: Ax <= 0} = {0} iff some strictly positive lambda has A^T lambda = 0.
    res = linprog(np.ones(m), A_eq=A.T, b_eq=np.zeros(d), bounds=[(1.0, None)] * m, method="highs")
    if res.status != 0:
        raise InputDomainError("polytope is unbounded")
    # Chebyshev radius must be nonnegative for a nonempty set.
    c = np.zeros(d + 1)
    c[-1] = -1.0
    res = linprog(c, A_ub=np.hstack([A, np.ones((m, 1))]), b_ub=b,
                  bounds=[(None, None)] * d + [(None, None)], method="highs")
    if res.status != 0 or -res.fun < -1e-12:
        raise InputDomainError("polytope is empty")


ConvexShape = Union[Sphere, Polytope, Capsule]


def shape_dim(shape: ConvexShape) -> int:
    return shape.dim


# ----------------------------------------------------------------- signed distance


def closest_point_on_segment(p: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    ab = b - a
    denom = float(ab @ ab)
    if denom == 0.0:
        return np.array(a, dtype=float)
    t = float(np.clip((p - a) @ ab / denom, 0.0, 1.0))
    return a + t * ab


def _project_polytope(p: np.ndarray, A: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Euclidean projection of an exterior point, by enumerating candidate faces.

    The projection lies in the relative interior of a unique face whose affine hull
    is cut out by at most D independent active halfspaces, so trying every subset
    of size <= D and keeping KKT-consistent candidates is exact.
    """
    m, d = A.shape
    best, best_dist = None, np.inf
    for size in range(1, d + 1):
        for idx in itertools.combinations(range(m), size):
            As = A[list(idx)]
            gram = As @ As.T
            if abs(np.linalg.det(gram)) < 1e-12:
                continue
            lam = np.linalg.solve(gram, As @ p - b[list(idx)])
            if np.any(lam < -1e-12):
                continue
            x = p - As.T @ lam
            if np.all(A @ x - b <= 1e-10):
                dist = float(np.linalg.norm(p - x))
                if dist < best_dist:
                    best, best_dist = x, dist
    if best is None:  # pragma: no cover - unreachable for valid polytopes
        raise DegenerateInputError("polytope projection failed")
    return best


def signed_distance(p, shape: ConvexShape) -> float:
    """Signed distance from ``p`` to the boundary of ``shape`` (negative inside).

    Exact for all three shape variants; polytopes use halfspace geometry
    (max facet residual inside, face-enumeration projection outside).
    """
    p = _as_point(p, shape.dim)
    if isinstance(shape, Sphere):
        return float(np.linalg.norm(p - shape.center) - shape.radius)
    if isinstance(shape, Capsule):
        s = closest_point_on_segment(p, shape.a, shape.b)
        return float(np.linalg.norm(p - s) - shape.radius)
    if isinstance(shape, Polytope):
        resid = shape.normals @ p - shape.offsets
        if np.all(resid <= 0.0):
            return float(np.max(resid))
        x = _project_polytope(p, shape.normals, shape.offsets)
        return float(np.linalg.norm(p - x))
    raise InputDomainError(f"unknown shape {type(shape).__name__}")


class Gradient(NamedTuple):
    vector: np.ndarray
    degenerate: bool


def signed_distance_gradient(p, shape: ConvexShape) -> Gradient:
    """Unit gradient of :func:`signed_distance` at ``p``.

    Where the distance is not differentiable (sphere center, points on a capsule
    axis, interior points equidistant from several facets) the first canonical
    basis vector is returned with ``degenerate=True``.
    """
    p = _as_point(p, shape.dim)
    d = shape.dim
    if isinstance(shape, (Sphere, Capsule)):
        if isinstance(shape, Sphere):
            diff = p - shape.center
        else:
            diff = p - closest_point_on_segment(p, shape.a, shape.b)
        n = float(np.linalg.norm(diff))
        if n == 0.0:
            return Gradient(_canonical(d), True)
        return Gradient(diff / n, False)
    if isinstance(shape, Polytope):
        resid = shape.normals @ p - shape.offsets
        if np.all(resid <= 0.0):
            top = np.max(resid)
            ties = np.flatnonzero(resid >= top - _TIE_TOL)
            if ties.size > 1:
                return Gradient(_canonical(d), True)
            return Gradient(np.array(shape.normals[ties[0]]), False)
        x = _project_polytope(p, shape.normals, shape.offsets)
        diff = p - x
        return Gradient(diff / np.linalg.norm(diff), False)
    raise InputDomainError(f"unknown shape {type(shape).__name__}")


# ------------------------------------------------------------------ robot geometry


@dataclass(frozen=True, eq=False)
class KinematicChain:
    """Planar serial chain of revolute joints; no links means a 2D point robot."""

    link_lengths: tuple = ()
    base: np.ndarray = field(default_factory=lambda: np.zeros(2))
    link_radius: float = 0.0

    def __post_init__(self):
        lengths = tuple(float(x) for x in self.link_lengths)
        if any(not np.isfinite(x) or x <= 0 for x in lengths):
            raise InputDomainError("link lengths must be positive")
        if not np.isfinite(self.link_radius) or self.link_radius < 0:
            raise InputDomainError("link_radius must be >= 0")
        object.__setattr__(self, "link_lengths", lengths)
        object.__setattr__(self, "base", _frozen(_as_point(self.base, 2)))
        object.__setattr__(self, "link_radius", float(self.link_radius))

    @property
    def is_point(self) -> bool:
        return len(self.link_lengths) == 0

    @property
    def dof(self) -> int:
        return 2 if self.is_point else len(self.link_lengths)

    @property
    def reach(self) -> float:
        return float(sum(self.link_lengths))


@dataclass(frozen=True, eq=False)
class RobotState:
    """Configuration ``q`` and its velocity ``dq`` (point robot: planar position)."""

    q: np.ndarray
    dq: np.ndarray

    def __post_init__(self):
        q = np.atleast_1d(np.asarray(self.q, dtype=float))
        dq = np.atleast_1d(np.asarray(self.dq, dtype=float))
        if q.shape != dq.shape or q.ndim != 1:
            raise InputDomainError(f"q and dq must be vectors of equal size, got {q.shape}, {dq.shape}")
        if not (np.all(np.isfinite(q)) and np.all(np.isfinite(dq))):
            raise InputDomainError("robot state must be finite")
        object.__setattr__(self, "q", _frozen(q))
        object.__setattr__(self, "dq", _frozen(dq))

    @property
    def vector(self) -> np.ndarray:
        return np.concatenate([self.q, self.dq])

    @classmethod
    def at_rest(cls, q) -> "RobotState":
        q = np.asarray(q, dtype=float)
        return cls(q, np.zeros_like(q))


def _check_q(chain: KinematicChain, q) -> np.ndarray:
    q = np.atleast_1d(np.asarray(q, dtype=float))
    if q.shape != (chain.dof,):
        raise InputDomainError(f"chain expects {chain.dof} joint values, got shape {q.shape}")
    if not np.all(np.isfinite(q)):
        raise InputDomainError("joint values must be finite")
    return q


def joint_positions(chain: KinematicChain, q) -> np.ndarray:
    """World positions of the base, every joint, and the end effector, shape ``(n+1, 2)``."""
    q = _check_q(chain, q)
    if chain.is_point:
        return q[None, :].copy()
    angles = np.cumsum(q)
    steps = np.array(chain.link_lengths)[:, None] * np.column_stack([np.cos(angles), np.sin(angles)])
    return np.vstack([chain.base, chain.base + np.cumsum(steps, axis=0)])


def forward_kinematics(chain: KinematicChain, q) -> list:
    """World-frame capsule per link (a single zero-length capsule for a point robot)."""
    pts = joint_positions(chain, q)
    if chain.is_point:
        return [Capsule(pts[0], pts[0], chain.link_radius)]
    return [Capsule(pts[i], pts[i + 1], chain.link_radius) for i in range(len(pts) - 1)]


def end_effector(chain: KinematicChain, q) -> np.ndarray:
    return joint_positions(chain, q)[-1]


def end_effector_jacobian(chain: KinematicChain, q) -> np.ndarray:
    """d(end effector)/dq, shape ``(2, dof)``."""
    q = _check_q(chain, q)
    if chain.is_point:
        return np.eye(2)
    angles = np.cumsum(q)
    lengths = np.array(chain.link_lengths)
    sx = -lengths * np.sin(angles)
    cy = lengths * np.cos(angles)
    # joint j moves every link i >= j
    return np.vstack([np.cumsum(sx[::-1])[::-1], np.cumsum(cy[::-1])[::-1]])


def end_effector_velocity_partial(chain: KinematicChain, q, dq) -> np.ndarray:
    """d(J(q) dq)/dq for the end effector, shape ``(2, dof)``; zero for a point robot."""
    q = _check_q(chain, q)
    dq = _check_q(chain, dq)
    if chain.is_point:
        return np.zeros((2, 2))
    angles = np.cumsum(q)
    omega = np.cumsum(dq)
    lengths = np.array(chain.link_lengths)
    # v = sum_i l_i w_i (-sin a_i, cos a_i); da_i/dq_j = 1 for i >= j
    cx = -lengths * omega * np.cos(angles)
    sy = -lengths * omega * np.sin(angles)
    return np.vstack([np.cumsum(cx[::-1])[::-1], np.cumsum(sy[::-1])[::-1]])


def link_point(chain: KinematicChain, q, link: int, s: float) -> np.ndarray:
    """Point at fraction ``s`` along link ``link`` (the robot itself for a point robot)."""
    pts = joint_positions(chain, q)
    if chain.is_point:
        return pts[0]
    return pts[link] + s * (pts[link + 1] - pts[link])


def link_point_jacobian(chain: KinematicChain, q, link: int, s: float) -> np.ndarray:
    """d(link_point)/dq, shape ``(2, dof)``."""
    q = _check_q(chain, q)
    if chain.is_point:
        return np.eye(2)
    angles = np.cumsum(q)
    w = np.array(chain.link_lengths)
    w = np.where(np.arange(chain.dof) < link, w, 0.0)
    w[link] = s * chain.link_lengths[link]
    sx, cy = -w * np.sin(angles), w * np.cos(angles)
    return np.vstack([np.cumsum(sx[::-1])[::-1], np.cumsum(cy[::-1])[::-1]])


def link_point_velocity_partial(chain: KinematicChain, q, dq, link: int, s: float) -> np.ndarray:
    """d(J_c(q) dq)/dq for the point of :func:`link_point`, shape ``(2, dof)``."""
    q = _check_q(chain, q)
    dq = _check_q(chain, dq)
    if chain.is_point:
        return np.zeros((2, 2))
    angles = np.cumsum(q)
    omega = np.cumsum(dq)
    w = np.array(chain.link_lengths)
    w = np.where(np.arange(chain.dof) < link, w, 0.0)
    w[link] = s * chain.link_lengths[link]
    cx, sy = -w * omega * np.cos(angles), -w * omega * np.sin(angles)
    return np.vstack([np.cumsum(cx[::-1])[::-1], np.cumsum(sy[::-1])[::-1]])


def inverse_kinematics(chain: KinematicChain, target, q0=None, iters: int = 200) -> np.ndarray:
    """Damped least-squares IK for the end effector; identity map for a point robot."""
    target = _as_point(target, 2)
    if chain.is_point:
        return target.copy()
    q_seed = np.zeros(chain.dof) if q0 is None else _check_q(chain, q0).copy()

    def solve(q):
        for _ in range(iters):
            err = target - end_effector(chain, q)
            if np.linalg.norm(err) < 1e-12:
                break
            J = end_effector_jacobian(chain, q)
            q = q + J.T @ np.linalg.solve(J @ J.T + 1e-6 * np.eye(2), err)
        return q, float(np.linalg.norm(target - end_effector(chain, q)))

    q, res = solve(q_seed)
    if res < 1e-9:
        return q
    # stationary point of the residual: restart from a fixed grid, keep the nearest best solution
    best = (res, 0.0, q)
    for k in range(8):
        offset = np.full(chain.dof, 2 * np.pi * k / 8)
        offset[1::2] *= -1
        qk, rk = solve(q_seed + offset)
        key = (round(rk, 9), float(np.linalg.norm(qk - q_seed)), qk)
        if key[:2] < best[:2]:
            best = key
    return best[2]


class Separation(NamedTuple):
    distance: float
    pair: tuple
    p_robot: np.ndarray
    p_human: np.ndarray
    direction: np.ndarray
    degenerate: bool


def min_separation(robot_capsules: Sequence[Capsule], human_spheres: Sequence[Sphere]) -> Separation:
    """Smallest surface gap between any robot capsule and any human sphere.

    ``distance`` is the axis-to-center distance minus both radii (negative on
    overlap).  The witness points lie on the two surfaces along ``direction``,
    the unit vector from the robot axis point toward the sphere center.
    """
    if len(robot_capsules) == 0 or len(human_spheres) == 0:
        raise InputDomainError("min_separation needs nonempty robot and human lists")
    best = None
    for i, cap in enumerate(robot_capsules):
        for j, sph in enumerate(human_spheres):
            s = closest_point_on_segment(sph.center, cap.a, cap.b)
            gap = float(np.linalg.norm(sph.center - s)) - cap.radius - sph.radius
            if best is None or gap < best[0]:
                best = (gap, (i, j), s, sph.center, cap.radius, sph.radius)
    gap, pair, s, c, rr, rh = best
    diff = c - s
    n = float(np.linalg.norm(diff))
    degenerate = n == 0.0
    direction = _canonical(s.shape[0]) if degenerate else diff / n
    return Separation(gap, pair, s + rr * direction, c - rh * direction, direction, degenerate)


# --------------------------------------------------------------------- dynamics


def double_integrator_matrices(dof: int, dt: float):
    """Exact zero-order-hold discretization of ``qdd = u`` on the state ``[q; dq]``."""
    eye = np.eye(dof)
    A = np.block([[eye, dt * eye], [np.zeros((dof, dof)), eye]])
    B = np.vstack([0.5 * dt * dt * eye, dt * eye])
    return A, B


def integrate(state: RobotState, u, dt: float) -> RobotState:
    u = np.asarray(u, dtype=float)
    q = state.q + dt * state.dq + 0.5 * dt * dt * u
    dq = state.dq + dt * u
    return RobotState(q, dq)


# ---------------------------------------------------------------------- rotations


def project_to_rotation(M, min_singular: float = 1e-12) -> np.ndarray:
    """Nearest rotation (polar factor) of a square matrix via SVD.

    If ``det(U V^T) = -1`` the last column of ``U`` is negated so the result
    stays in SO(D).
    """
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise InputDomainError(f"expected a square matrix, got shape {M.shape}")
    if not np.all(np.isfinite(M)):
        raise InputDomainError("matrix must be finite")
    U, s, Vt = np.linalg.svd(M)
    if s[-1] <= min_singular:
        raise DegenerateInputError(f"matrix is rank deficient (sigma_min={s[-1]:.3e})")
    if np.linalg.det(U @ Vt) < 0:
        U = U.copy()
        U[:, -1] = -U[:, -1]
    return U @ Vt


def rotation_2d(theta: float) -> np.ndarray:
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s], [s, c]])
