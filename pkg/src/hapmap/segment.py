"""Coarse occupied-space segmentation: voxel downsampling plus DBSCAN."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree


@dataclass
class Segmentation:
    labels: np.ndarray   # per-point int: -1 noise, 0..k-1 cluster ids
    k: int


@dataclass
class Segment:
    id: int
    points: np.ndarray   # (m, 3) subset of the segmented cloud


def voxel_downsample(cloud: np.ndarray, leaf: float = 20.0) -> np.ndarray:
    """One centroid per occupied voxel; the grid is anchored at the origin.

    Output voxels are ordered by their grid key, so the result does not
    depend on the input point order.
    """
    if leaf <= 0:
        raise ValueError("leaf size must be positive")
    cloud = np.asarray(cloud, dtype=np.float64).reshape(-1, 3)
    if cloud.shape[0] == 0:
        return cloud
    keys = np.floor(cloud / leaf).astype(np.int64)
    uniq, inverse = np.unique(keys, axis=0, return_inverse=True)
    sums = np.zeros((uniq.shape[0], 3))
    np.add.at(sums, inverse, cloud)
    counts = np.bincount(inverse, minlength=uniq.shape[0]).astype(np.float64)
    return sums / counts[:, None]


def dbscan(cloud: np.ndarray, eps: float = 80.0, min_pts: int = 10) -> Segmentation:
    """Classic density clustering with Euclidean metric.

    A core point has at least min_pts neighbors within eps (inclusive,
    counting itself).  Clusters are the connected components of core
    points plus their border points; everything else is noise (-1).
    Cluster ids follow first-core-point scan order; a border point seen by
    several clusters goes to the lowest cluster id.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    if min_pts < 1:
        raise ValueError("min_pts must be at least 1")
    cloud = np.asarray(cloud, dtype=np.float64).reshape(-1, 3)
    n = cloud.shape[0]
    labels = np.full(n, -1, dtype=np.int64)
    if n == 0:
        return Segmentation(labels=labels, k=0)

    tree = cKDTree(cloud)
    neighbors = tree.query_ball_point(cloud, eps, workers=-1)
    core = np.array([len(nb) >= min_pts for nb in neighbors])

    k = 0
    for seed in range(n):
        if not core[seed] or labels[seed] != -1:
            continue
        labels[seed] = k
        frontier = [seed]
        while frontier:
            i = frontier.pop()
            for j in neighbors[i]:
                if core[j] and labels[j] == -1:
                    labels[j] = k
                    frontier.append(j)
        k += 1

    # Border points: non-core with a core neighbor; ties to the lowest id.
    for i in range(n):
        if core[i]:
            continue
        ids = [labels[j] for j in neighbors[i] if core[j]]
        if ids:
            labels[i] = min(ids)
    return Segmentation(labels=labels, k=k)


def extract_segments(cloud: np.ndarray, seg: Segmentation) -> list[Segment]:
    """One Segment per cluster id, ordered by id; noise points are dropped."""
    cloud = np.asarray(cloud, dtype=np.float64).reshape(-1, 3)
    if seg.labels.shape[0] != cloud.shape[0]:
        raise ValueError("labels do not align with the cloud")
    return [Segment(id=i, points=cloud[seg.labels == i]) for i in range(seg.k)]
