"""Exact nearest neighbor search over 3D points.

The tree is an index over an immutable snapshot of the input array. Queries
resolve distance ties by the lower original point index, so results are fully
deterministic and match a brute force linear scan exactly, including for
duplicated input points.
"""

from __future__ import annotations

import numpy as np
from scipy.spatial import cKDTree

from .geometry import FloatArray, IntArray, PointCloud

# Relative slack applied to candidate radii so that the final exact selection
# never misses a point because of last-ulp differences between scipy's
# internal distance computation and ours.
_SLACK = 1.0 + 1e-9


class KdTree:
    """k-d tree over an (n, 3) point array or a PointCloud."""

    def __init__(self, points) -> None:
        if isinstance(points, PointCloud):
            points = points.points
        pts = np.ascontiguousarray(np.asarray(points, dtype=np.float64))
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise ValueError(f"KdTree needs an (n, 3) array, got shape {pts.shape}")
        if pts.shape[0] == 0:
            raise ValueError("cannot build a KdTree over an empty point set")
        if not np.isfinite(pts).all():
            raise ValueError("KdTree points must be finite")
        pts.flags.writeable = False
        self.points = pts
        self._tree = cKDTree(pts)

    def __len__(self) -> int:
        return self.points.shape[0]

    def _distances(self, q: FloatArray, idx: IntArray) -> FloatArray:
        return np.linalg.norm(self.points[idx] - q, axis=1)

    def _exact_sorted(self, q: FloatArray, idx) -> tuple[IntArray, FloatArray]:
        idx = np.asarray(sorted(idx), dtype=np.int64)
        d = self._distances(q, idx)
        order = np.argsort(d, kind="stable")
        return idx[order], d[order]

    def nearest(self, query) -> tuple[int, float]:
        """Index and distance of the closest point, ties going to the lower index."""
        q = np.asarray(query, dtype=np.float64).reshape(3)
        d, _ = self._tree.query(q)
        cand = self._tree.query_ball_point(q, d * _SLACK + 1e-300)
        idx, dist = self._exact_sorted(q, cand)
        return int(idx[0]), float(dist[0])

    def k_nearest(self, query, k: int) -> tuple[IntArray, FloatArray]:
        """The k closest points ordered by (distance, index).

        Requests for more neighbors than stored points return all points.
        """
        if k <= 0:
            raise ValueError("k must be positive")
        q = np.asarray(query, dtype=np.float64).reshape(3)
        k_eff = min(k, len(self))
        d, _ = self._tree.query(q, k=k_eff)
        kth = float(np.max(d)) if k_eff > 1 else float(d)
        cand = self._tree.query_ball_point(q, kth * _SLACK + 1e-300)
        idx, dist = self._exact_sorted(q, cand)
        return idx[:k_eff], dist[:k_eff]

    def radius_search(self, query, radius: float) -> tuple[IntArray, FloatArray]:
        """All points with distance <= radius, ordered by (distance, index)."""
        if radius < 0.0:
            raise ValueError("radius must be nonnegative")
        q = np.asarray(query, dtype=np.float64).reshape(3)
        cand = self._tree.query_ball_point(q, radius * _SLACK + 1e-300)
        idx, dist = self._exact_sorted(q, cand)
        keep = dist <= radius
        return idx[keep], dist[keep]

    # Bulk variants used by the heavier numerical stages. They answer many
    # queries in one C call; ties are resolved by scipy's traversal order,
    # which is deterministic for a fixed build but not index-canonical.

    def query_batch(
        self, queries, k: int, upper: float | None = None
    ) -> tuple[FloatArray, IntArray]:
        """Distances and indices of the k nearest points for each query row.

        ``upper`` prunes the search at that distance; misses come back with
        distance inf and index len(self), as in scipy.
        """
        q = np.asarray(queries, dtype=np.float64)
        bound = np.inf if upper is None else upper
        d, i = self._tree.query(q, k=min(k, len(self)), distance_upper_bound=bound)
        if d.ndim == 1:
            d = d[:, None]
            i = i[:, None]
        return d, i.astype(np.int64)

    def radius_batch(self, queries, radius: float) -> list[IntArray]:
        """Per-query index arrays of all points within radius (index order)."""
        q = np.asarray(queries, dtype=np.float64)
        hits = self._tree.query_ball_point(q, radius)
        return [np.asarray(h, dtype=np.int64) for h in hits]


def build(points) -> KdTree:
    """Build a KdTree; module level alias for KdTree(points)."""
    return KdTree(points)
