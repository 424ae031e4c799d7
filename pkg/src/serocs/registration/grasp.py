"""Similarity-based target selection and grasp-pose transfer."""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from ..errors import InputDomainError
from ..geometry import project_to_rotation
from .cpd import CpdParams, NonRigidTransform, PointCloud, apply_transform, cpd_register, transform_gradient


@dataclass(frozen=True, eq=False)
class GraspPose:
    t: np.ndarray
    R: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.t, dtype=float).reshape(-1)
        R = np.asarray(self.R, dtype=float)
        if R.shape != (t.size, t.size):
            raise InputDomainError(f"R must be {t.size}x{t.size}, got {R.shape}")
        if not (np.all(np.isfinite(t)) and np.all(np.isfinite(R))):
            raise InputDomainError("grasp pose has non-finite entries")
        if np.max(np.abs(R.T @ R - np.eye(t.size))) > 1e-9 or abs(np.linalg.det(R) - 1.0) > 1e-9:
            raise InputDomainError("grasp orientation is not a rotation matrix")
        t, R = t.copy(), R.copy()
        t.setflags(write=False)
        R.setflags(write=False)
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "R", R)


def _pts(c) -> np.ndarray:
    return c.points if isinstance(c, PointCloud) else np.atleast_2d(np.asarray(c, dtype=float))


def mean_min_distance(A, B) -> float:
    """Average distance from each point of ``A`` to its nearest neighbor in ``B``."""
    d, _ = cKDTree(_pts(B)).query(_pts(A), k=1)
    return float(np.mean(d))


def similarity(warped_source, target) -> float:
    """Symmetric average-minimum-distance score; zero for identical clouds."""
    A, B = _pts(warped_source), _pts(target)
    if A.shape[1] != B.shape[1]:
        raise InputDomainError("similarity needs clouds of equal dimension")
    ab = mean_min_distance(A, B)
    ba = mean_min_distance(B, A)
    # Sum in a fixed order so swapping arguments is bitwise symmetric.
    return min(ab, ba) + max(ab, ba)


def select_target(source: PointCloud, candidates, params: CpdParams = CpdParams(), max_workers: int = 1):
    """Register ``source`` to every candidate and pick the most similar one.

    Returns ``(k, scores)``; ties go to the lowest index.
    """
    candidates = list(candidates)
    if not candidates:
        raise InputDomainError("select_target needs at least one candidate")

    def score(c):
        tf = cpd_register(source, c, params)
        return similarity(tf.warped_source(), c)

    if max_workers > 1:
        with ThreadPoolExecutor(max_workers=max_workers) as ex:
            scores = list(ex.map(score, candidates))
    else:
        scores = [score(c) for c in candidates]
    scores = np.asarray(scores)
    return int(np.argmin(scores)), scores


def transfer_grasp(tf: NonRigidTransform, g: GraspPose) -> GraspPose:
    """Carry a grasp through the deformation: ``t' = T(t)``, ``R'`` = polar factor of ``grad T(t) R``."""
    if g.t.size != tf.dim:
        raise InputDomainError(f"grasp has D={g.t.size}, transform has D={tf.dim}")
    t_new = apply_transform(tf, g.t[None, :])[0]
    J = transform_gradient(tf, g.t)
    if np.array_equal(J, np.eye(tf.dim)):
        # Translation-only field: keep R bit-for-bit.
        return GraspPose(t_new, g.R)
    R_new = project_to_rotation(J @ g.R)
    return GraspPose(t_new, R_new)
