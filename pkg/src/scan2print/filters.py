"""Point-cloud conditioning: cropping, downsampling, outlier removal, normals.

All functions are pure: they take a cloud and return a new one, never
mutating the input. Normals are carried through every stage that can
preserve them and recomputed only by estimate_normals.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .geometry import FloatArray, IntArray, PointCloud
from .spatial import KdTree

log = logging.getLogger(__name__)

__all__ = [
    "AxisRange",
    "passthrough",
    "voxel_downsample",
    "statistical_outlier_removal",
    "estimate_normals",
]


@dataclass(frozen=True)
class AxisRange:
    """Per-axis closed crop interval; None leaves that side unbounded."""

    xmin: float | None = None
    xmax: float | None = None
    ymin: float | None = None
    ymax: float | None = None
    zmin: float | None = None
    zmax: float | None = None

    def __post_init__(self) -> None:
        for axis, lo, hi in (
            ("x", self.xmin, self.xmax),
            ("y", self.ymin, self.ymax),
            ("z", self.zmin, self.zmax),
        ):
            if lo is not None and hi is not None and lo > hi:
                raise ValueError(f"{axis} range is empty: min {lo} > max {hi}")

    def contains(self, points: FloatArray) -> np.ndarray:
        """Boolean mask of points inside the box (boundary included)."""
        mask = np.ones(len(points), dtype=bool)
        bounds = (self.xmin, self.xmax, self.ymin, self.ymax, self.zmin, self.zmax)
        for axis in range(3):
            lo, hi = bounds[2 * axis], bounds[2 * axis + 1]
            if lo is not None:
                mask &= points[:, axis] >= lo
            if hi is not None:
                mask &= points[:, axis] <= hi
        return mask


def _select(cloud: PointCloud, mask_or_index) -> PointCloud:
    normals = cloud.normals[mask_or_index] if cloud.has_normals else None
    return PointCloud(cloud.points[mask_or_index], normals)


def passthrough(cloud: PointCloud, bounds: AxisRange) -> PointCloud:
    """Keep the points inside ``bounds``; order and normals preserved."""
    return _select(cloud, bounds.contains(cloud.points))


def voxel_downsample(cloud: PointCloud, leaf: float) -> PointCloud:
    """Collapse the cloud to one centroid per occupied ``leaf``-sized voxel.

    The grid is anchored at the cloud's min corner. Output points are
    emitted in voxel scan order: x index varies fastest, then y, then z.
    Normals, when present, are averaged per voxel and renormalized; a
    voxel whose normals cancel exactly falls back to (0, 0, 1).
    """
    if leaf <= 0:
        raise ValueError(f"leaf size must be positive, got {leaf}")
    if len(cloud) == 0:
        return cloud

    origin = cloud.points.min(axis=0)
    idx = np.floor((cloud.points - origin) / leaf).astype(np.int64)
    # unique sorts rows lexicographically, so order columns as (z, y, x)
    # to get a scan order with x fastest
    keys = idx[:, ::-1]
    _, inverse, counts = np.unique(keys, axis=0, return_inverse=True, return_counts=True)

    n_voxels = len(counts)
    sums = np.zeros((n_voxels, 3))
    np.add.at(sums, inverse, cloud.points)
    centroids = sums / counts[:, None]

    normals = None
    if cloud.has_normals:
        nsum = np.zeros((n_voxels, 3))
        np.add.at(nsum, inverse, cloud.normals)
        length = np.linalg.norm(nsum, axis=1, keepdims=True)
        degenerate = length[:, 0] < 1e-12
        nsum[degenerate] = (0.0, 0.0, 1.0)
        length[degenerate] = 1.0
        normals = nsum / length
    return PointCloud(centroids, normals)


def statistical_outlier_removal(
    cloud: PointCloud, k: int = 50, stddev_mult: float = 1.0
) -> tuple[PointCloud, IntArray]:
    """Drop points whose mean k-neighbor distance is an upper outlier.

    For each point, d = mean distance to its k nearest neighbors (the
    point itself excluded). Points with d > mean(d) + stddev_mult * std(d)
    are removed. Returns the kept cloud (input order preserved) and the
    indices that were removed.
    """
    if k < 1:
        raise ValueError(f"k must be at least 1, got {k}")
    if stddev_mult <= 0:
        raise ValueError(f"stddev_mult must be positive, got {stddev_mult}")
    if len(cloud) <= k:
        raise ValueError(f"cloud has {len(cloud)} points, need more than k={k}")

    tree = KdTree(cloud.points)
    dist, _ = tree.query_batch(cloud.points, k + 1)
    mean_dist = dist[:, 1:].mean(axis=1)  # column 0 is the point itself

    threshold = mean_dist.mean() + stddev_mult * mean_dist.std()
    keep = mean_dist <= threshold
    removed = np.flatnonzero(~keep)
    return _select(cloud, keep), removed


def estimate_normals(cloud: PointCloud, k: int = 30, viewpoint=(0.0, 0.0, 0.0)) -> PointCloud:
    """Attach per-point unit normals from k-neighborhood PCA.

    The normal is the smallest-eigenvalue eigenvector of the neighborhood
    covariance (neighborhood = the k nearest points, the point itself
    included), flipped to face ``viewpoint``. Neighborhoods of rank < 2
    get the fallback normal (0, 0, 1); their count is logged as a warning.
    """
    if len(cloud) < 3:
        raise ValueError(f"normal estimation needs at least 3 points, got {len(cloud)}")
    if k < 3:
        raise ValueError(f"k must be at least 3, got {k}")
    k = min(k, len(cloud))
    viewpoint = np.asarray(viewpoint, dtype=np.float64)

    tree = KdTree(cloud.points)
    _, nn = tree.query_batch(cloud.points, k)
    neighborhoods = cloud.points[nn]  # (n, k, 3)
    centered = neighborhoods - neighborhoods.mean(axis=1, keepdims=True)
    cov = np.einsum("nki,nkj->nij", centered, centered) / k

    eigvals, eigvecs = np.linalg.eigh(cov)  # ascending eigenvalues
    normals = eigvecs[:, :, 0].copy()

    toward = viewpoint - cloud.points
    flip = np.einsum("ij,ij->i", normals, toward) < 0.0
    normals[flip] *= -1.0
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)

    # rank < 2: the two smallest eigenvalues both vanish (relative test);
    # the fallback is exempt from viewpoint orientation
    scale = np.maximum(eigvals[:, 2], 1e-300)
    degenerate = eigvals[:, 1] <= 1e-9 * scale
    n_bad = int(degenerate.sum())
    if n_bad:
        normals[degenerate] = (0.0, 0.0, 1.0)
        log.warning("%d degenerate neighborhoods fell back to normal (0, 0, 1)", n_bad)

    return PointCloud(cloud.points, normals)
