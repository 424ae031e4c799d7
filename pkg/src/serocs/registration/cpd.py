"""Coherent point drift: non-rigid registration by EM over a Gaussian mixture.

Source points are mixture centroids moved by the displacement field
``v(z) = sum_n W_n exp(-|z - p_n|^2 / (2 beta^2))``.  A uniform component of
weight ``mu`` absorbs outliers.  Arrays follow the usual CPD naming: ``Y`` is
the source (N x D), ``X`` the target (M x D), ``P`` the N x M posterior.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from ..errors import InputDomainError, NumericalError

log = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class PointCloud:
    points: np.ndarray
    label: str = ""

    def __post_init__(self):
        pts = np.atleast_2d(np.asarray(self.points, dtype=float))
        if pts.ndim != 2 or pts.shape[0] == 0:
            raise InputDomainError("point cloud must be a nonempty (n, D) array")
        if pts.shape[1] not in (2, 3):
            raise InputDomainError(f"point clouds must be 2D or 3D, got D={pts.shape[1]}")
        if not np.all(np.isfinite(pts)):
            raise InputDomainError("point cloud has non-finite coordinates")
        pts = pts.copy()
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    def __len__(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]


@dataclass(frozen=True)
class CpdParams:
    beta: float = 2.0
    lam: float = 3.0
    mu: float = 0.1
    max_iters: int = 150
    tol: float = 1e-8
    sigma2_floor: float = 1e-10

    def __post_init__(self):
        if not self.beta > 0:
            raise InputDomainError("beta must be > 0")
        if not self.lam > 0:
            raise InputDomainError("lambda must be > 0")
        if not 0.0 <= self.mu < 1.0:
            raise InputDomainError("mu must lie in [0, 1)")
        if self.max_iters < 1 or not self.tol > 0 or not self.sigma2_floor > 0:
            raise InputDomainError("max_iters >= 1, tol > 0 and sigma2_floor > 0 are required")


@dataclass(frozen=True, eq=False)
class NonRigidTransform:
    source: PointCloud
    beta: float
    W: np.ndarray
    G: np.ndarray
    sigma2: float
    objective_trace: list = field(default_factory=list)
    converged: bool = True
    iterations: int = 0

    @property
    def dim(self) -> int:
        return self.source.dim

    @classmethod
    def identity(cls, source: PointCloud, beta: float) -> "NonRigidTransform":
        return cls(source, beta, np.zeros_like(source.points), gaussian_gram(source, beta), 0.0)

    def warped_source(self) -> np.ndarray:
        return self.source.points + self.G @ self.W


def _points(x) -> np.ndarray:
    if isinstance(x, PointCloud):
        return x.points
    return np.atleast_2d(np.asarray(x, dtype=float))


def _sqdist(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    d = (A * A).sum(1)[:, None] + (B * B).sum(1)[None, :] - 2.0 * A @ B.T
    return np.maximum(d, 0.0)


def gaussian_gram(points, beta: float) -> np.ndarray:
    """Gramian ``G_ij = exp(-|p_i - p_j|^2 / (2 beta^2))``; symmetric with unit diagonal."""
    if not beta > 0:
        raise InputDomainError("beta must be > 0")
    Y = _points(points)
    diff = Y[:, None, :] - Y[None, :, :]
    return np.exp(-np.einsum("ijk,ijk->ij", diff, diff) / (2.0 * beta * beta))


def _kernel(Z: np.ndarray, Y: np.ndarray, beta: float) -> np.ndarray:
    diff = Z[:, None, :] - Y[None, :, :]
    return np.exp(-np.einsum("ijk,ijk->ij", diff, diff) / (2.0 * beta * beta))


def _log_outlier_term(sigma2: float, mu: float, N: int, M: int, D: int) -> float:
    if mu == 0.0:
        return -np.inf
    return 0.5 * D * np.log(2.0 * np.pi * sigma2) + np.log(mu / (1.0 - mu)) + np.log(N / M)


def cpd_e_step(source_warped, target, sigma2: float, mu: float) -> np.ndarray:
    """Posterior ``P[n, m]`` that target point m was generated by warped source point n."""
    if not sigma2 > 0:
        raise InputDomainError("sigma2 must be > 0 in the E-step")
    TY = _points(source_warped)
    X = _points(target)
    N, D = TY.shape
    M = X.shape[0]
    logk = -_sqdist(TY, X) / (2.0 * sigma2)
    c = _log_outlier_term(sigma2, mu, N, M, D)
    denom = logsumexp(np.vstack([logk, np.full((1, M), c)]), axis=0)
    return np.exp(logk - denom[None, :])


def cpd_m_step(P, source, target, G, lam: float, sigma2_prev: float, sigma2_floor: float = 1e-10):
    """Closed-form maximization for ``(W, sigma2)`` given posteriors.

    W solves ``(diag(P 1) G + lam sigma2_prev I) W = P X - diag(P 1) Y``;
    sigma2 is the posterior-weighted mean squared residual, floored.
    """
    P = np.asarray(P, dtype=float)
    Y = _points(source)
    X = _points(target)
    N, D = Y.shape
    P1 = P.sum(axis=1)
    Pt1 = P.sum(axis=0)
    Np = float(P1.sum())
    PX = P @ X
    A = P1[:, None] * G + lam * sigma2_prev * np.eye(N)
    rhs = PX - P1[:, None] * Y
    try:
        W = np.linalg.solve(A, rhs)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(
            f"singular M-step system (lam*sigma2={lam * sigma2_prev:.3e}, N_P={Np:.3e})") from exc
    if Np <= 0.0:
        return W, max(sigma2_floor, sigma2_prev)
    T = Y + G @ W
    num = (Pt1 * (X * X).sum(1)).sum() - 2.0 * np.sum(PX * T) + (P1 * (T * T).sum(1)).sum()
    return W, max(sigma2_floor, float(num) / (Np * D))


def cpd_surrogate(P, source, target, G, W, sigma2: float, lam: float) -> float:
    """EM surrogate (expected complete-data negative log-likelihood plus penalty)."""
    P = np.asarray(P, dtype=float)
    Y = _points(source)
    X = _points(target)
    D = Y.shape[1]
    T = Y + G @ W
    fit = np.sum(P * _sqdist(T, X)) / (2.0 * sigma2)
    return float(fit + 0.5 * D * P.sum() * np.log(sigma2) + 0.5 * lam * np.trace(W.T @ G @ W))


def cpd_objective(source, target, G, W, sigma2: float, lam: float, mu: float) -> float:
    """Regularized negative log-likelihood of the target under the warped mixture.

    Includes the Gaussian normalization ``(2 pi sigma2)^(-D/2)`` so that values
    at different ``sigma2`` are comparable; EM decreases this monotonically.
    """
    Y = _points(source)
    X = _points(target)
    N, D = Y.shape
    M = X.shape[0]
    T = Y + G @ W
    logk = -_sqdist(T, X) / (2.0 * sigma2) - 0.5 * D * np.log(2.0 * np.pi * sigma2)
    terms = [logk + np.log((1.0 - mu) / N)]
    if mu > 0:
        terms.append(np.full((1, M), np.log(mu / M)))
    ll = logsumexp(np.vstack(terms), axis=0).sum()
    return float(-ll + 0.5 * lam * np.trace(W.T @ G @ W))


def initial_sigma2(source, target) -> float:
    Y = _points(source)
    X = _points(target)
    N, D = Y.shape
    M = X.shape[0]
    return float(_sqdist(Y, X).sum() / (N * M * D))


def cpd_register(source: PointCloud, target: PointCloud, params: CpdParams = CpdParams()) -> NonRigidTransform:
    """Register ``source`` onto ``target``.

    Alternates E and M steps until the objective changes by less than
    ``params.tol`` or ``params.max_iters`` is hit (then ``converged=False``).
    ``objective_trace[0]`` is the objective at the identity transform.
    """
    if source.dim != target.dim:
        raise InputDomainError(f"dimension mismatch: source D={source.dim}, target D={target.dim}")
    Y, X = source.points, target.points
    G = gaussian_gram(Y, params.beta)
    W = np.zeros_like(Y)
    sigma2 = max(initial_sigma2(Y, X), params.sigma2_floor)
    obj = cpd_objective(Y, X, G, W, sigma2, params.lam, params.mu)
    trace = [obj]
    converged = False
    it = 0
    for it in range(1, params.max_iters + 1):
        P = cpd_e_step(Y + G @ W, X, sigma2, params.mu)
        W, sigma2 = cpd_m_step(P, Y, X, G, params.lam, sigma2, params.sigma2_floor)
        new_obj = cpd_objective(Y, X, G, W, sigma2, params.lam, params.mu)
        trace.append(new_obj)
        if abs(new_obj - obj) < params.tol:
            converged = True
            obj = new_obj
            break
        obj = new_obj
    if not converged:
        log.info("cpd_register hit max_iters=%d (last change %.3e)", params.max_iters,
                 abs(trace[-1] - trace[-2]) if len(trace) > 1 else float("nan"))
    return NonRigidTransform(source, params.beta, W, G, sigma2, trace, converged, it)


def apply_transform(tf: NonRigidTransform, pts) -> np.ndarray:
    """Evaluate ``T(z) = z + sum_n W_n g(z - p_n)`` at each row of ``pts``."""
    Z = np.atleast_2d(np.asarray(pts, dtype=float))
    if Z.shape[1] != tf.dim:
        raise InputDomainError(f"points have D={Z.shape[1]}, transform has D={tf.dim}")
    return Z + _kernel(Z, tf.source.points, tf.beta) @ tf.W


def transform_gradient(tf: NonRigidTransform, z) -> np.ndarray:
    """Jacobian of :func:`apply_transform` at a single point ``z`` (D x D)."""
    z = np.asarray(z, dtype=float).reshape(-1)
    if z.shape[0] != tf.dim:
        raise InputDomainError(f"point has D={z.shape[0]}, transform has D={tf.dim}")
    diff = z[None, :] - tf.source.points
    g = np.exp(-(diff * diff).sum(1) / (2.0 * tf.beta ** 2))
    return np.eye(tf.dim) - (tf.W * g[:, None]).T @ diff / tf.beta ** 2
