"""Point-set primitives: hash-grid neighbor queries and Chamfer distances.

A point cloud is a plain ``(n, 3)`` float64 array of positions in meters.
Neighbor queries go through :class:`NeighborIndex`, a uniform spatial hash
grid that returns exactly what a brute-force scan would return (ties broken
toward the lower point index). Chamfer distances are computed densely; clouds
at desk scale are small enough that the O(n*m) pairwise form is the fastest
option in numpy anyway.
"""

from __future__ import annotations

import math

import numpy as np


def as_cloud(points) -> np.ndarray:
    """Validate and return points as a contiguous (n, 3) float64 array."""
    pts = np.ascontiguousarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ValueError(f"expected an (n, 3) point array, got shape {pts.shape}")
    if pts.size and not np.all(np.isfinite(pts)):
        raise ValueError("point cloud contains non-finite coordinates")
    return pts


def _distances(points: np.ndarray, query: np.ndarray) -> np.ndarray:
    return np.linalg.norm(points - query, axis=1)


class NeighborIndex:
    """Uniform spatial hash grid over a fixed 3D point set.

    ``cell_size`` defaults to a value aiming at O(1) points per cell; builders
    that query a known radius should pass that radius as the cell size.
    The index is immutable after construction and safe for concurrent reads.
    """

    def __init__(self, points, cell_size: float | None = None):
        self.points = as_cloud(points)
        if len(self.points) == 0:
            raise ValueError("cannot index an empty point cloud")
        lo = self.points.min(axis=0)
        hi = self.points.max(axis=0)
        self.diagonal = float(np.linalg.norm(hi - lo))
        if cell_size is None:
            cell_size = self.diagonal / max(len(self.points) ** (1.0 / 3.0), 1.0)
        if not (cell_size > 0.0) or not math.isfinite(cell_size):
            cell_size = 1.0  # degenerate cloud: everything lands in one cell
        self.cell_size = float(cell_size)
        self._origin = lo
        self._cells: dict[tuple[int, int, int], np.ndarray] = {}
        keys = np.floor((self.points - lo) / self.cell_size).astype(np.int64)
        buckets: dict[tuple[int, int, int], list[int]] = {}
        for idx, key in enumerate(map(tuple, keys)):
            buckets.setdefault(key, []).append(idx)
        for key, members in buckets.items():
            self._cells[key] = np.asarray(members, dtype=np.int64)

    def __len__(self) -> int:
        return len(self.points)

    def _cell_of(self, query: np.ndarray) -> np.ndarray:
        return np.floor((query - self._origin) / self.cell_size).astype(np.int64)

    def _shell_members(self, center: np.ndarray, ring: int) -> list[np.ndarray]:
        """Indices in cells at Chebyshev distance exactly `ring` from center."""
        found = []
        r = ring
        for dx in range(-r, r + 1):
            for dy in range(-r, r + 1):
                for dz in range(-r, r + 1):
                    if max(abs(dx), abs(dy), abs(dz)) != r:
                        continue
                    key = (center[0] + dx, center[1] + dy, center[2] + dz)
                    members = self._cells.get(key)
                    if members is not None:
                        found.append(members)
        return found

    def knn(self, query, k: int) -> list[tuple[int, float]]:
        """k nearest points to `query`, ascending by (distance, index)."""
        query = np.asarray(query, dtype=np.float64).reshape(3)
        n = len(self.points)
        if k <= 0:
            raise ValueError("k must be positive")
        if k > n:
            raise ValueError("insufficient points")
        center = self._cell_of(query)
        gathered: list[np.ndarray] = []
        count = 0
        ring = 0
        kth_dist = math.inf
        max_ring = int(math.ceil(self.diagonal / self.cell_size)) + 2
        while ring <= max_ring + 1:
            members = self._shell_members(center, ring)
            for m in members:
                gathered.append(m)
                count += m.size
            # Any point in an unvisited cell lies at distance >= ring*cell_size.
            # Strict comparison so an equidistant point in an unvisited cell can
            # still claim its lower-index tie-break.
            if count >= k:
                idx = np.concatenate(gathered)
                dist = _distances(self.points[idx], query)
                order = np.lexsort((idx, dist))
                kth_dist = dist[order[k - 1]]
                if kth_dist < ring * self.cell_size:
                    best = order[:k]
                    return [(int(idx[o]), float(dist[o])) for o in best]
            if count >= n:
                break
            ring += 1
        idx = np.concatenate(gathered)
        dist = _distances(self.points[idx], query)
        order = np.lexsort((idx, dist))[:k]
        return [(int(idx[o]), float(dist[o])) for o in order]

    def radius_neighbors(self, query, radius: float) -> list[tuple[int, float]]:
        """All points within `radius` (inclusive), ascending by (distance, index)."""
        query = np.asarray(query, dtype=np.float64).reshape(3)
        if not (radius > 0.0):
            raise ValueError("radius must be positive")
        if radius > self.diagonal:
            # ball covers the whole cloud's extent: scan everything
            idx = np.arange(len(self.points), dtype=np.int64)
        else:
            lo = np.floor((query - radius - self._origin) / self.cell_size).astype(np.int64)
            hi = np.floor((query + radius - self._origin) / self.cell_size).astype(np.int64)
            chunks = []
            for cx in range(lo[0], hi[0] + 1):
                for cy in range(lo[1], hi[1] + 1):
                    for cz in range(lo[2], hi[2] + 1):
                        members = self._cells.get((cx, cy, cz))
                        if members is not None:
                            chunks.append(members)
            if not chunks:
                return []
            idx = np.concatenate(chunks)
        dist = _distances(self.points[idx], query)
        keep = dist <= radius
        idx, dist = idx[keep], dist[keep]
        order = np.lexsort((idx, dist))
        return [(int(idx[o]), float(dist[o])) for o in order]


def sq_nearest(a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per point of `a`: squared distance to, and index of, its nearest in `b`."""
    diff = a[:, None, :] - b[None, :, :]
    d2 = np.einsum("ijk,ijk->ij", diff, diff)
    nn = d2.argmin(axis=1)
    return d2[np.arange(len(a)), nn], nn


def chamfer(a, b) -> float:
    """Symmetric Chamfer distance in meters squared.

    Mean over `a` of squared distance to the nearest point of `b`, plus the
    same with roles swapped. Zero iff the clouds are equal as sets.
    """
    a = as_cloud(a)
    b = as_cloud(b)
    if len(a) == 0 or len(b) == 0:
        raise ValueError("chamfer distance of an empty cloud is undefined")
    return float(sq_nearest(a, b)[0].mean() + sq_nearest(b, a)[0].mean())


def nearest_indices(points, queries) -> np.ndarray:
    """Index of the nearest point in `points` for each query (ties: lower index)."""
    points = as_cloud(points)
    queries = as_cloud(queries)
    return sq_nearest(queries, points)[1]
