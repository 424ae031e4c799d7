"""Synthetic object-category benchmark for target selection."""
from __future__ import annotations

import numpy as np

from .cpd import PointCloud

CATEGORIES = ("sphere", "box", "cylinder", "torus", "cone")


def _unit_vectors(rng, n):
    v = rng.normal(size=(n, 3))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def category_template(name: str, n: int = 60, rng=None) -> np.ndarray:
    """Surface samples of a unit-scale primitive centered at the origin."""
    rng = np.random.default_rng(0) if rng is None else rng
    if name == "sphere":
        return 0.5 * _unit_vectors(rng, n)
    if name == "box":
        p = rng.uniform(-1.0, 1.0, (n, 3))
        ax = rng.integers(0, 3, n)
        p[np.arange(n), ax] = np.sign(p[np.arange(n), ax])
        return p * np.array([0.6, 0.35, 0.2])
    if name == "cylinder":
        th = rng.uniform(0, 2 * np.pi, n)
        return np.c_[0.25 * np.cos(th), 0.25 * np.sin(th), rng.uniform(-0.6, 0.6, n)]
    if name == "torus":
        u, v = rng.uniform(0, 2 * np.pi, (2, n))
        r = 0.5 + 0.15 * np.cos(v)
        return np.c_[r * np.cos(u), r * np.sin(u), 0.15 * np.sin(v)]
    if name == "cone":
        h = np.sqrt(rng.uniform(0, 1, n))
        th = rng.uniform(0, 2 * np.pi, n)
        return np.c_[0.4 * h * np.cos(th), 0.4 * h * np.sin(th), 0.7 - 1.2 * h]
    raise ValueError(f"unknown category {name!r}")


def smooth_deform(points: np.ndarray, rng, amplitude: float = 0.08, width: float = 0.7, n_centers: int = 4):
    """Add a random smooth Gaussian-RBF displacement field."""
    c = rng.uniform(-0.6, 0.6, (n_centers, points.shape[1]))
    w = rng.normal(scale=amplitude, size=(n_centers, points.shape[1]))
    d2 = ((points[:, None, :] - c[None]) ** 2).sum(-1)
    return points + np.exp(-d2 / (2 * width ** 2)) @ w


def distractor(rng, n: int = 60) -> np.ndarray:
    """Unstructured clutter: an anisotropic Gaussian blob."""
    return rng.normal(size=(n, 3)) * rng.uniform(0.15, 0.5, 3)


def make_trial(true_category: int, rng, n: int = 60, noise: float = 0.01, n_distractors: int = 2):
    """Return ``(source, candidates)`` for one selection trial.

    The source is the fixed template of ``true_category``.  Candidate ``j`` is a
    freshly deformed, noised copy of template ``j`` for each of the five
    categories, and the distractors are appended after them.
    """
    src = category_template(CATEGORIES[true_category], n, np.random.default_rng(true_category))
    cands = []
    for j, name in enumerate(CATEGORIES):
        p = smooth_deform(category_template(name, n, np.random.default_rng(j)), rng)
        cands.append(PointCloud(p + rng.normal(scale=noise, size=p.shape), name))
    for k in range(n_distractors):
        cands.append(PointCloud(distractor(rng, n), f"distractor_{k}"))
    return PointCloud(src, CATEGORIES[true_category]), cands
