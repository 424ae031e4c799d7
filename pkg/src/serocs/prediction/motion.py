"""Two-layer ReLU motion predictor with Kalman-form online adaptation of the output layer.

The network maps ``s = [window (3N), plan id, 1]`` to the next ``N`` positions
via ``W^T max(0, U^T s)``.  ``theta = vec(W)`` stacks the columns of ``W``, so
the regressor is ``Phi = I_{3N} kron h^T`` with ``h = max(0, U^T s)``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.linalg import cho_solve

from ..errors import InputDomainError, NumericalError
from .encoding import DEFAULT_TS, TrajectoryWindow
from .result import PredictionResult, from_covariance

log = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class AdaptivePredictor:
    U: np.ndarray  # (3N + 2, n_h)
    theta_hat: np.ndarray  # (3N n_h,)
    X_theta: np.ndarray  # (3N n_h, 3N n_h)
    var_w: np.ndarray  # (3N, 3N)
    d_theta: np.ndarray  # (3N n_h,)
    rho: float = 1e-6
    t_s: float = DEFAULT_TS
    loss_trace: list = field(default_factory=list)
    psd_clamps: int = 0

    @property
    def n_h(self) -> int:
        return self.U.shape[1]

    @property
    def N(self) -> int:
        return (self.U.shape[0] - 2) // 3

    @property
    def W(self) -> np.ndarray:
        return self.theta_hat.reshape(3 * self.N, self.n_h).T


def make_predictor(U, W, var_w, sigma0_sq: float = 1e-2, rho: float = 1e-6, d_theta=None,
                   t_s: float = DEFAULT_TS, loss_trace=None) -> AdaptivePredictor:
    U = np.asarray(U, dtype=float)
    W = np.asarray(W, dtype=float)
    if (U.shape[0] - 2) % 3 or U.shape[0] < 5:
        raise InputDomainError(f"U must have 3N+2 rows, got {U.shape[0]}")
    n3 = U.shape[0] - 2
    if W.shape != (U.shape[1], n3):
        raise InputDomainError(f"W must be ({U.shape[1]}, {n3}), got {W.shape}")
    P = n3 * U.shape[1]
    var_w = np.asarray(var_w, dtype=float)
    if var_w.ndim == 1:
        var_w = np.diag(var_w)
    if var_w.shape != (n3, n3):
        raise InputDomainError(f"var_w must be {n3}x{n3}")
    try:
        np.linalg.cholesky(var_w)
    except np.linalg.LinAlgError as exc:
        raise InputDomainError("var_w must be positive definite") from exc
    theta = W.T.reshape(-1).copy()
    dth = np.zeros(P) if d_theta is None else np.asarray(d_theta, dtype=float).reshape(P)
    return AdaptivePredictor(U, theta, sigma0_sq * np.eye(P), var_w, dth, rho, t_s, list(loss_trace or []))


def input_vector(window: TrajectoryWindow, plan: int) -> np.ndarray:
    return np.concatenate([window.flat(), [float(plan), 1.0]])


def hidden(model: AdaptivePredictor, window: TrajectoryWindow, plan: int) -> np.ndarray:
    s = input_vector(window, plan)
    if s.shape[0] != model.U.shape[0]:
        raise InputDomainError(f"window has N={window.N}, model expects N={model.N}")
    return np.maximum(0.0, model.U.T @ s)


def phi_matrix(h: np.ndarray, n_out: int) -> np.ndarray:
    """Dense regressor ``I_{n_out} kron h^T``; the update code never forms it."""
    return np.kron(np.eye(n_out), h[None, :])


def nn_forward(model: AdaptivePredictor, window: TrajectoryWindow, plan: int) -> np.ndarray:
    """Network output ``W^T max(0, U^T s)`` as a flat 3N vector."""
    h = hidden(model, window, plan)
    return model.theta_hat.reshape(3 * model.N, model.n_h) @ h


def _blocks(model: AdaptivePredictor):
    n3, nh = 3 * model.N, model.n_h
    return model.X_theta.reshape(n3, nh, n3, nh), n3, nh


def msee_matrix(model: AdaptivePredictor, h: np.ndarray) -> np.ndarray:
    """``Phi X_theta Phi^T + var_w`` using the Kronecker structure of ``Phi``."""
    X4, _, _ = _blocks(model)
    M = np.einsum("a,iajb,b->ij", h, X4, h, optimize=True)
    return 0.5 * (M + M.T) + model.var_w


def predict_with_uncertainty(model: AdaptivePredictor, window: TrajectoryWindow, plan: int,
                             n_sigma: float = 3.0) -> PredictionResult:
    """A-priori prediction with MSEE and per-step ``n_sigma`` ellipsoids (no update)."""
    h = hidden(model, window, plan)
    mean = model.theta_hat.reshape(3 * model.N, model.n_h) @ h
    return from_covariance(mean, msee_matrix(model, h), window.t_s, n_sigma)


def kalman_gain(model: AdaptivePredictor, h: np.ndarray):
    """Return ``(K, B, S)`` with ``B = X Phi^T``, ``S = Phi X Phi^T + var_w``, ``K = B S^-1``."""
    X4, n3, nh = _blocks(model)
    B = (X4 @ h).reshape(n3 * nh, n3)
    S = msee_matrix(model, h)
    try:
        c = np.linalg.cholesky(S)
    except np.linalg.LinAlgError as exc:
        raise NumericalError("innovation covariance is not positive definite") from exc
    K = cho_solve((c, True), B.T).T
    return K, B, S


def _ensure_psd(X: np.ndarray, what: str):
    X = 0.5 * (X + X.T)
    try:
        np.linalg.cholesky(X + 1e-10 * np.eye(X.shape[0]))
        return X, False
    except np.linalg.LinAlgError:
        w, V = np.linalg.eigh(X)
        log.warning("%s lost positive semidefiniteness (min eig %.3e); clamping", what, w.min())
        return (V * np.maximum(w, 0.0)) @ V.T, True


def adapt_online(model: AdaptivePredictor, observed, window: TrajectoryWindow, plan: int,
                 check_psd: bool = True):
    """One adaptation step given the realized next positions.

    Returns ``(updated_model, prior_prediction)``.  The parameter covariance is
    updated in Joseph form and inflated by ``rho I + d_theta d_theta^T``.
    """
    obs = np.asarray(observed, dtype=float).reshape(-1)
    if obs.shape[0] != 3 * model.N:
        raise InputDomainError(f"observed must have {3 * model.N} entries")
    h = hidden(model, window, plan)
    n3, nh = 3 * model.N, model.n_h
    Th = model.theta_hat.reshape(n3, nh)
    prior = from_covariance(Th @ h, msee_matrix(model, h), window.t_s)
    K, B, S = kalman_gain(model, h)
    innov = obs - Th @ h
    theta = model.theta_hat + K @ innov
    # Joseph form: (I - K Phi) X (I - K Phi)^T + K var_w K^T.
    AX = model.X_theta - K @ B.T
    AXPt = (AX.reshape(n3 * nh, n3, nh) @ h)
    Xn = AX - AXPt @ K.T + K @ model.var_w @ K.T
    Xn = Xn + model.rho * np.eye(n3 * nh) + np.outer(model.d_theta, model.d_theta)
    clamps = model.psd_clamps
    if check_psd:
        Xn, clamped = _ensure_psd(Xn, "X_theta")
        clamps += int(clamped)
    else:
        Xn = 0.5 * (Xn + Xn.T)
    return replace(model, theta_hat=theta, X_theta=Xn, psd_clamps=clamps), prior


# ---- offline training --------------------------------------------------------

def _as_samples(x) -> np.ndarray:
    return x.flat() if isinstance(x, TrajectoryWindow) else np.asarray(x, dtype=float).reshape(-1)


def mse_loss_and_grads(U, W, S, Y):
    """Mean squared error of ``relu(S U) W`` against ``Y`` and its gradients in U and W."""
    Z = S @ U
    H = np.maximum(0.0, Z)
    E = H @ W - Y
    n = S.shape[0]
    loss = np.mean(np.sum(E * E, axis=1))
    dO = 2.0 * E / n
    gW = H.T @ dO
    gU = S.T @ ((dO @ W.T) * (Z > 0))
    return loss, gU, gW


def train_nn_offline(dataset, n_h: int = 40, lr: float = 5e-3, epochs: int = 300, batch_size: int = 128,
                     seed: int = 0, sigma0_sq: float = 1e-2, rho: float = 1e-6, t_s: float = DEFAULT_TS,
                     bias_unit: bool = True) -> AdaptivePredictor:
    """Fit ``U`` and ``W`` by mini-batch Adam on mean squared error, then freeze ``U``.

    ``dataset`` holds ``(window, plan, next_positions)`` triples.  Training runs
    in standardized coordinates; the affine maps are folded back into ``U`` and
    ``W`` exactly, using hidden unit 0 as a constant (bias) unit when
    ``bias_unit`` is set.  ``var_w`` is the diagonal of training residual variances.
    """
    dataset = list(dataset)
    if not dataset:
        raise InputDomainError("empty training set")
    if n_h < 1 + bias_unit:
        raise InputDomainError("n_h too small")
    S = np.stack([input_vector(w, p) for w, p, _ in dataset])
    Y = np.stack([_as_samples(y) for _, _, y in dataset])
    if Y.shape[1] != S.shape[1] - 2:
        raise InputDomainError("targets must have the same length as the input window")
    rng = np.random.default_rng(seed)
    n, d = S.shape
    mx, sx = S[:, :-1].mean(0), S[:, :-1].std(0)
    sx[sx < 1e-12] = 1.0
    my, sy = Y.mean(0), Y.std(0)
    sy[sy < 1e-12] = 1.0
    Sn = np.hstack([(S[:, :-1] - mx) / sx, np.ones((n, 1))])
    Yn = (Y - my) / sy

    U = rng.normal(scale=np.sqrt(2.0 / d), size=(d, n_h))
    U[-1] = 0.0
    W = rng.normal(scale=np.sqrt(1.0 / n_h), size=(n_h, Y.shape[1]))
    free = np.ones(n_h, dtype=bool)
    if bias_unit:
        U[:, 0] = 0.0
        U[-1, 0] = 1.0
        free[0] = False
    params = [U, W]
    m = [np.zeros_like(U), np.zeros_like(W)]
    v = [np.zeros_like(U), np.zeros_like(W)]
    b1, b2, eps = 0.9, 0.999, 1e-8
    trace = []
    step = 0
    for ep in range(epochs):
        lr_ep = lr * 0.5 * (1.0 + np.cos(np.pi * ep / epochs))
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            idx = order[start:start + batch_size]
            _, gU, gW = mse_loss_and_grads(U, W, Sn[idx], Yn[idx])
            gU[:, ~free] = 0.0
            step += 1
            for k, g in enumerate((gU, gW)):
                m[k] = b1 * m[k] + (1 - b1) * g
                v[k] = b2 * v[k] + (1 - b2) * g * g
                params[k] -= lr_ep * (m[k] / (1 - b1 ** step)) / (np.sqrt(v[k] / (1 - b2 ** step)) + eps)
        trace.append(float(mse_loss_and_grads(U, W, Sn, Yn)[0]))

    # Fold standardization back: U^T s with raw s, and W with output scale and offset.
    Ur = np.empty_like(U)
    Ur[:-1] = U[:-1] / sx[:, None]
    Ur[-1] = U[-1] - (mx / sx) @ U[:-1]
    Wr = W * sy[None, :]
    if bias_unit:
        Wr[0] += my
    else:
        log.warning("no bias unit: output offset cannot be folded exactly")
    H = np.maximum(0.0, S @ Ur)
    resid = H @ Wr - Y
    var = np.maximum(resid.var(axis=0), 1e-12)
    return make_predictor(Ur, Wr, var, sigma0_sq, rho, None, t_s, trace)
