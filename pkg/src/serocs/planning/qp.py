"""Dense convex QP solver by operator splitting (ADMM) with active-set polishing.

Solves ``min 1/2 x'Hx + f'x  s.t.  A_ineq x <= b_ineq,  A_eq x = b_eq``.
Multipliers follow ``Hx + f + A_ineq' y_ineq + A_eq' y_eq = 0`` with
``y_ineq >= 0``.  The iteration follows the OSQP splitting on
``l <= Cx <= u``, with Ruiz equilibration and a cached Cholesky factor.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from ..errors import InputDomainError

log = logging.getLogger(__name__)

SOLVED = "solved"
INFEASIBLE = "infeasible"
MAX_ITER = "max_iter"
UNBOUNDED = "unbounded"


@dataclass
class QPResult:
    x: np.ndarray
    y_ineq: np.ndarray
    y_eq: np.ndarray
    status: str
    iterations: int = 0
    primal_residual: float = np.inf
    dual_residual: float = np.inf
    certificate: np.ndarray | None = None  # Farkas direction when infeasible
    certificate_residual: float = np.nan
    polished: bool = False

    @property
    def ok(self) -> bool:
        return self.status == SOLVED


def _mat(A, n):
    if A is None:
        return np.zeros((0, n))
    A = np.atleast_2d(np.asarray(A, dtype=float))
    if A.size == 0:
        return np.zeros((0, n))
    if A.shape[1] != n:
        raise InputDomainError(f"constraint matrix has {A.shape[1]} columns, expected {n}")
    return A


def _vec(b, m):
    if m == 0:
        return np.zeros(0)
    b = np.asarray(b, dtype=float).reshape(-1)
    if b.shape[0] != m:
        raise InputDomainError(f"right-hand side has {b.shape[0]} entries, expected {m}")
    return b


def kkt_residuals(H, f, A_ineq, b_ineq, A_eq, b_eq, x, y_ineq, y_eq):
    """Return ``(primal, dual, complementarity, dual_sign)`` infinity-norm residuals."""
    n = x.shape[0]
    A_ineq, A_eq = _mat(A_ineq, n), _mat(A_eq, n)
    b_ineq, b_eq = _vec(b_ineq, A_ineq.shape[0]), _vec(b_eq, A_eq.shape[0])
    g = H @ x + f + A_ineq.T @ y_ineq + A_eq.T @ y_eq
    viol = np.concatenate([np.maximum(A_ineq @ x - b_ineq, 0.0), np.abs(A_eq @ x - b_eq)])
    slack = b_ineq - A_ineq @ x
    comp = np.abs(y_ineq * slack)
    mx = lambda v: float(np.max(v)) if v.size else 0.0
    return mx(viol), mx(np.abs(g)), mx(comp), mx(np.maximum(-y_ineq, 0.0))


def _ruiz(P, C, iters=15):
    n, m = P.shape[0], C.shape[0]
    D, E = np.ones(n), np.ones(m)
    Ps, Cs = P.copy(), C.copy()
    for _ in range(iters):
        col = np.maximum(np.abs(Ps).max(axis=0), np.abs(Cs).max(axis=0) if m else 0.0)
        dn = 1.0 / np.sqrt(np.clip(col, 1e-4, 1e4))
        dm = 1.0 / np.sqrt(np.clip(np.abs(Cs).max(axis=1), 1e-4, 1e4)) if m else np.ones(0)
        Ps = dn[:, None] * Ps * dn[None, :]
        Cs = dm[:, None] * Cs * dn[None, :]
        D *= dn
        E *= dm
    return D, E


def _polish(H, f, A_ineq, b_ineq, A_eq, b_eq, active, tol):
    n = H.shape[0]
    Aa = np.vstack([A_eq, A_ineq[active]])
    ba = np.concatenate([b_eq, b_ineq[active]])
    ma = Aa.shape[0]
    K = np.block([[H, Aa.T], [Aa, np.zeros((ma, ma))]])
    rhs = np.concatenate([-f, ba])
    try:
        sol = np.linalg.solve(K, rhs)
    except np.linalg.LinAlgError:
        sol = np.linalg.lstsq(K, rhs, rcond=None)[0]
    # two steps of iterative refinement
    for _ in range(2):
        sol = sol + np.linalg.lstsq(K, rhs - K @ sol, rcond=None)[0]
    x = sol[:n]
    y_eq = sol[n:n + A_eq.shape[0]]
    y_ineq = np.zeros(A_ineq.shape[0])
    y_ineq[active] = sol[n + A_eq.shape[0]:]
    if np.any(y_ineq < 0):
        y_ineq = np.maximum(y_ineq, 0.0)
    res = kkt_residuals(H, f, A_ineq, b_ineq, A_eq, b_eq, x, y_ineq, y_eq)
    scale = 1.0 + max(np.abs(f).max(initial=0.0), np.abs(H @ x).max(initial=0.0))
    ok = res[0] <= tol * (1 + np.abs(x).max(initial=0.0)) and res[1] <= tol * scale and res[2] <= tol * scale
    return x, y_ineq, y_eq, ok, res


def solve_qp(H, f, A_ineq=None, b_ineq=None, A_eq=None, b_eq=None, tol: float = 1e-8,
             max_iter: int = 20000, x0=None, y0=None, rho: float = 0.1, sigma: float = 1e-6,
             alpha: float = 1.6, polish: bool = True, adaptive_rho: bool = True) -> QPResult:
    """Solve a convex QP; see the module docstring for conventions.

    ``x0`` / ``y0`` warm-start the primal iterate and the stacked multipliers
    ``[y_eq; y_ineq]``.  Status is ``solved`` only when the final point passes
    the KKT residual checks at ``tol``.
    """
    H = np.atleast_2d(np.asarray(H, dtype=float))
    n = H.shape[0]
    if H.shape != (n, n):
        raise InputDomainError("H must be square")
    f = _vec(f, n)
    if not np.allclose(H, H.T, atol=1e-12 * max(1.0, np.abs(H).max())):
        raise InputDomainError("H must be symmetric")
    H = 0.5 * (H + H.T)
    A_ineq, A_eq = _mat(A_ineq, n), _mat(A_eq, n)
    b_ineq, b_eq = _vec(b_ineq, A_ineq.shape[0]), _vec(b_eq, A_eq.shape[0])
    if not all(np.all(np.isfinite(a)) for a in (H, f, A_ineq, b_ineq, A_eq, b_eq)):
        raise InputDomainError("QP data must be finite")
    me, mi = A_eq.shape[0], A_ineq.shape[0]
    m = me + mi

    if m == 0:
        return _solve_unconstrained(H, f, tol)

    C = np.vstack([A_eq, A_ineq])
    lo = np.concatenate([b_eq, np.full(mi, -np.inf)])
    up = np.concatenate([b_eq, b_ineq])
    is_eq = np.arange(m) < me

    D, E = _ruiz(H, C)
    Ps = D[:, None] * H * D[None, :]
    qs = D * f
    c = 1.0 / max(1.0, np.abs(qs).max(initial=0.0), np.abs(Ps).max(initial=0.0))
    Ps *= c
    qs *= c
    Cs = E[:, None] * C * D[None, :]
    ls, us = E * lo, E * up

    x = np.zeros(n) if x0 is None else np.asarray(x0, dtype=float) / D
    y = np.zeros(m) if y0 is None else np.asarray(y0, dtype=float) * c / E
    z = np.clip(Cs @ x, ls, us)

    def factor(rv):
        return cho_factor(Ps + sigma * np.eye(n) + Cs.T @ (rv[:, None] * Cs))

    rho_vec = np.where(is_eq, 1e3 * rho, rho)
    fac = factor(rho_vec)
    eps_pinf = 1e-7
    status = MAX_ITER
    res_p = res_d = np.inf
    best = None
    it = 0
    for it in range(1, max_iter + 1):
        x_prev, z_prev, y_prev = x, z, y
        xt = cho_solve(fac, sigma * x - qs + Cs.T @ (rho_vec * z - y))
        zt = Cs @ xt
        x = alpha * xt + (1 - alpha) * x_prev
        zr = alpha * zt + (1 - alpha) * z_prev
        z = np.clip(zr + y / rho_vec, ls, us)
        y = y + rho_vec * (zr - z)

        if it % 10 and it != max_iter:
            continue
        # Unscaled residuals.
        xu, yu = D * x, E * y / c
        Cx = C @ xu
        zu = z / E
        res_p = float(np.abs(Cx - zu).max())
        Hx = H @ xu
        Cty = C.T @ yu
        res_d = float(np.abs(Hx + f + Cty).max())
        sp = 1.0 + max(np.abs(Cx).max(), np.abs(zu).max())
        sd = 1.0 + max(np.abs(Hx).max(), np.abs(Cty).max(), np.abs(f).max(initial=0.0))
        coarse = res_p <= 1e-3 * sp and res_d <= 1e-3 * sd
        if polish and (coarse or it % 200 == 0):
            yi, ye = yu[me:], yu[:me]
            active = (yi > 1e-9 * sd) | (A_ineq @ xu >= b_ineq - 1e-7 * sp)
            xp, ypi, ype, ok, r = _polish(H, f, A_ineq, b_ineq, A_eq, b_eq, active, tol)
            if ok:
                return QPResult(xp, ypi, ype, SOLVED, it, r[0], r[1], polished=True)
        if res_p <= tol * sp and res_d <= tol * sd:
            status = SOLVED
            break
        # Primal infeasibility certificate.
        dy = E * (y - y_prev) / c
        ndy = np.abs(dy).max()
        if ndy > 1e-12:
            cert_lhs = np.abs(C.T @ dy).max()
            dyi = dy[me:]
            bound = b_eq @ dy[:me] + b_ineq @ np.maximum(dyi, 0.0)
            if cert_lhs <= eps_pinf * ndy and bound < -eps_pinf * ndy and np.all(dyi >= -eps_pinf * ndy):
                ycert = dy / ndy
                return QPResult(xu, np.zeros(mi), np.zeros(me), INFEASIBLE, it, res_p, res_d,
                                certificate=ycert, certificate_residual=float(cert_lhs / ndy))
        if adaptive_rho and it % 50 == 0 and res_p > 0 and res_d > 0:
            ratio = np.sqrt((res_p / sp) / (res_d / sd))
            if ratio > 5 or ratio < 0.2:
                rho_vec = np.clip(rho_vec * ratio, 1e-6, 1e6)
                fac = factor(rho_vec)
        if best is None or max(res_p / sp, res_d / sd) < best[0]:
            best = (max(res_p / sp, res_d / sd), xu.copy(), yu.copy())

    xu, yu = D * x, E * y / c
    if status != SOLVED and best is not None:
        _, xu, yu = best
        log.info("solve_qp hit max_iter=%d (primal %.2e, dual %.2e)", max_iter, res_p, res_d)
    r = kkt_residuals(H, f, A_ineq, b_ineq, A_eq, b_eq, xu, np.maximum(yu[me:], 0.0), yu[:me])
    return QPResult(xu, np.maximum(yu[me:], 0.0), yu[:me], status, it, r[0], r[1])


def _solve_unconstrained(H, f, tol):
    n = H.shape[0]
    try:
        x = cho_solve(cho_factor(H), -f)
    except np.linalg.LinAlgError:
        x = np.linalg.lstsq(H, -f, rcond=None)[0]
    r = float(np.abs(H @ x + f).max()) if n else 0.0
    status = SOLVED if r <= tol * (1 + np.abs(f).max(initial=0.0)) else UNBOUNDED
    return QPResult(x, np.zeros(0), np.zeros(0), status, 0, 0.0, r)
