"""Point cloud preprocessing: voxel-grid downsampling and DBSCAN clustering."""
from __future__ import annotations

from collections import deque

import numpy as np
from scipy.spatial import cKDTree

from ..errors import InputDomainError
from .cpd import PointCloud

NOISE = -1


def voxel_downsample(cloud: PointCloud, step: float) -> PointCloud:
    """Replace the points in each occupied voxel by their centroid.

    The grid is anchored at the origin; output order is lexicographic in voxel index.
    """
    if not step > 0:
        raise InputDomainError("voxel step must be > 0")
    P = cloud.points
    keys = np.floor(P / step).astype(np.int64)
    _, inv, counts = np.unique(keys, axis=0, return_inverse=True, return_counts=True)
    inv = inv.reshape(-1)
    sums = np.zeros((counts.size, P.shape[1]))
    np.add.at(sums, inv, P)
    return PointCloud(sums / counts[:, None], cloud.label)


def dbscan_labels(points, eps: float, min_pts: int) -> np.ndarray:
    """DBSCAN cluster id per point (``-1`` for noise), clusters numbered in discovery order.

    Neighborhoods are closed balls of radius ``eps`` and include the point itself.
    """
    if not eps > 0:
        raise InputDomainError("eps must be > 0")
    if min_pts < 1:
        raise InputDomainError("min_pts must be >= 1")
    P = np.asarray(points, dtype=float)
    n = P.shape[0]
    nbrs = cKDTree(P).query_ball_point(P, r=eps)
    core = np.array([len(nb) >= min_pts for nb in nbrs], dtype=bool)
    labels = np.full(n, NOISE, dtype=int)
    visited = np.zeros(n, dtype=bool)
    cid = 0
    for i in range(n):
        if visited[i]:
            continue
        visited[i] = True
        if not core[i]:
            continue
        labels[i] = cid
        queue = deque(nbrs[i])
        while queue:
            j = queue.popleft()
            if labels[j] == NOISE:
                labels[j] = cid
            if visited[j]:
                continue
            visited[j] = True
            if core[j]:
                queue.extend(nbrs[j])
        cid += 1
    return labels


def euclidean_cluster(cloud: PointCloud, eps: float, min_pts: int) -> list:
    """Split a cloud into DBSCAN clusters, followed by a ``"noise"`` cloud if any point is noise."""
    labels = dbscan_labels(cloud.points, eps, min_pts)
    out = [PointCloud(cloud.points[labels == k], f"cluster_{k}") for k in range(labels.max() + 1)]
    if np.any(labels == NOISE):
        out.append(PointCloud(cloud.points[labels == NOISE], "noise"))
    return out
