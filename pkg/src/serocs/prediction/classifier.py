"""Plan recognition: multinomial logistic regression over trajectory images."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.special import log_softmax, softmax

from ..errors import InputDomainError, StateError
from .encoding import Bounds, TrajectoryWindow, encode_trajectory_image, max_pool

log = logging.getLogger(__name__)


@dataclass
class PlanClassifier:
    """Softmax classifier; ``classes[j]`` is the plan id scored by column ``j``."""

    bounds: Bounds
    S: int = 224
    pool: int = 7
    weights: np.ndarray | None = None  # (F, K)
    bias: np.ndarray | None = None  # (K,)
    classes: np.ndarray | None = None
    reg: float = 1e-3
    loss_trace: list = field(default_factory=list)

    @property
    def trained(self) -> bool:
        return self.weights is not None

    @property
    def K(self) -> int:
        return 0 if self.classes is None else len(self.classes)

    def features(self, traj: TrajectoryWindow) -> np.ndarray:
        img = encode_trajectory_image(traj, self.bounds, self.S)
        return max_pool(img.channels, self.pool).reshape(-1)

    def logits(self, traj: TrajectoryWindow) -> np.ndarray:
        if not self.trained:
            raise StateError("plan classifier has not been trained")
        return self.features(traj) @ self.weights + self.bias


def _loss_grad(X, Y, Wb, reg):
    n = X.shape[0]
    Z = X @ Wb[:-1] + Wb[-1]
    lp = log_softmax(Z, axis=1)
    loss = -np.sum(Y * lp) / n + 0.5 * reg * np.sum(Wb[:-1] ** 2)
    R = (np.exp(lp) - Y) / n
    g = np.vstack([X.T @ R + reg * Wb[:-1], R.sum(0)[None, :]])
    return loss, g


def train_plan_classifier(dataset, S: int = 224, reg: float = 1e-3, bounds: Bounds | None = None,
                          pool: int = 7, max_epochs: int = 500, tol: float = 1e-6) -> PlanClassifier:
    """Fit a plan classifier by full-batch gradient descent from zero weights.

    ``dataset`` is a sequence of ``(TrajectoryWindow, plan_id)``.  The step is
    ``1/L`` with ``L`` a Lipschitz bound of the gradient, so the loss trace is
    monotone.  Stops when the relative loss change drops below ``tol``.
    """
    dataset = list(dataset)
    if not dataset:
        raise InputDomainError("empty training set")
    labels = np.array([int(p) for _, p in dataset])
    classes = np.unique(labels)
    if classes.size < 2:
        raise InputDomainError("plan classifier needs at least two classes")
    if np.any(classes < 1):
        raise InputDomainError("plan ids must be >= 1")
    if bounds is None:
        bounds = Bounds.around(np.vstack([t.samples for t, _ in dataset]))
    clf = PlanClassifier(bounds, S, pool, reg=reg)
    X = np.stack([clf.features(t) for t, _ in dataset])
    Y = (labels[:, None] == classes[None, :]).astype(float)
    n, F = X.shape
    Xb = np.hstack([X, np.ones((n, 1))])
    # Softmax cross-entropy Hessian is bounded by 0.5 * X'X / n.
    L = 0.5 * np.linalg.eigvalsh(Xb.T @ Xb / n if F < n else Xb @ Xb.T / n).max() + reg
    Wb = np.zeros((F + 1, classes.size))
    loss, g = _loss_grad(X, Y, Wb, reg)
    trace = [loss]
    for _ in range(max_epochs):
        Wb = Wb - g / L
        new, g = _loss_grad(X, Y, Wb, reg)
        trace.append(new)
        if abs(loss - new) <= tol * abs(loss):
            break
        loss = new
    clf.weights, clf.bias, clf.classes, clf.loss_trace = Wb[:-1], Wb[-1], classes, trace
    log.debug("plan classifier: %d epochs, final loss %.4g", len(trace) - 1, trace[-1])
    return clf


def class_probabilities(clf: PlanClassifier, traj: TrajectoryWindow) -> np.ndarray:
    return softmax(clf.logits(traj))


def classify_plan(clf: PlanClassifier, traj: TrajectoryWindow):
    """Return ``(plan_id, confidence)``; ties go to the lower plan id."""
    p = class_probabilities(clf, traj)
    j = int(np.argmax(p))
    return int(clf.classes[j]), float(p[j])

