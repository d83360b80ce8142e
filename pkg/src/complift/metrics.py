"""Set-level metrics for generated samples.

Accuracy is membership under a scenario's ground truth; Chamfer distance
compares a generated cloud to a reference cloud through a uniform grid
index, so the whole benchmark stays O(n) instead of O(n^2). Empty inputs
produce None rather than a number: an unsatisfiable scenario has no
meaningful accuracy and nothing to compare against.
"""

from __future__ import annotations

import numpy as np

from .scenarios import ScenarioSpec


def accuracy(points: np.ndarray, scenario: ScenarioSpec) -> float | None:
    """Fraction of points satisfying the composed ground truth.

    None when there are no points ("0 of 0" is a refusal, not a zero).
    Unsatisfiable scenarios score an honest 0.0: nothing can be a member.
    """
    points = np.asarray(points)
    if points.shape[0] == 0:
        return None
    return float(np.mean(scenario.member(points)))


class GridIndex2D:
    """Uniform-cell spatial index answering nearest-point distance queries.

    Cells hold point indices in one counting-sorted array; a query scans
    outward ring by ring and stops once the best hit is closer than any
    cell not yet visited can be.
    """

    def __init__(self, points: np.ndarray, cell: float | None = None):
        pts = np.asarray(points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 2 or pts.shape[0] == 0:
            raise ValueError("index needs a non-empty (n, 2) array")
        self.pts = pts
        lo = pts.min(axis=0)
        hi = pts.max(axis=0)
        if cell is None:
            span = float(max(hi[0] - lo[0], hi[1] - lo[1]))
            # aim for one point per cell on average
            cell = span / max(1.0, np.sqrt(pts.shape[0])) if span > 0 else 1.0
        if cell <= 0:
            raise ValueError("cell size must be positive")
        self.cell = float(cell)
        self.lo = lo
        self.nx = int((hi[0] - lo[0]) / self.cell) + 1
        self.ny = int((hi[1] - lo[1]) / self.cell) + 1

        ix = np.minimum(((pts[:, 0] - lo[0]) / self.cell).astype(np.int64), self.nx - 1)
        iy = np.minimum(((pts[:, 1] - lo[1]) / self.cell).astype(np.int64), self.ny - 1)
        ids = ix * self.ny + iy
        self.order = np.argsort(ids, kind="stable")
        counts = np.bincount(ids, minlength=self.nx * self.ny)
        self.starts = np.concatenate([[0], np.cumsum(counts)])

    def _ring_members(self, cx: int, cy: int, k: int) -> np.ndarray:
        """Point indices in cells at Chebyshev distance exactly k from (cx, cy)."""
        cells = []
        if k == 0:
            cells.append((cx, cy))
        else:
            for ix in range(cx - k, cx + k + 1):
                if 0 <= ix < self.nx:
                    for iy in (cy - k, cy + k):
                        if 0 <= iy < self.ny:
                            cells.append((ix, iy))
            for iy in range(cy - k + 1, cy + k):
                if 0 <= iy < self.ny:
                    for ix in (cx - k, cx + k):
                        if 0 <= ix < self.nx:
                            cells.append((ix, iy))
        chunks = []
        for ix, iy in cells:
            cid = ix * self.ny + iy
            s, e = self.starts[cid], self.starts[cid + 1]
            if e > s:
                chunks.append(self.order[s:e])
        if not chunks:
            return np.empty(0, dtype=np.int64)
        return np.concatenate(chunks)

    def nearest_dist(self, queries: np.ndarray) -> np.ndarray:
        """Euclidean distance from each query to its nearest indexed point."""
        queries = np.atleast_2d(np.asarray(queries, dtype=np.float64))
        out = np.empty(queries.shape[0])
        max_k = max(self.nx, self.ny)
        for i, q in enumerate(queries):
            cx = int(np.clip((q[0] - self.lo[0]) / self.cell, 0, self.nx - 1))
            cy = int(np.clip((q[1] - self.lo[1]) / self.cell, 0, self.ny - 1))
            best = np.inf
            k = 0
            while True:
                idx = self._ring_members(cx, cy, k)
                if idx.size:
                    d2 = np.sum((self.pts[idx] - q) ** 2, axis=1)
                    best = min(best, float(d2.min()))
                # every unvisited point is at least k*cell away once ring k
                # is done; also stop when the rings have left the grid
                if (np.isfinite(best) and best <= (k * self.cell) ** 2) or k > max_k:
                    break
                k += 1
            out[i] = np.sqrt(best)
        return out


def chamfer(a: np.ndarray, b: np.ndarray) -> float:
    """Symmetric Chamfer distance: mean nearest-neighbor gap, both ways."""
    a = np.atleast_2d(np.asarray(a, dtype=np.float64))
    b = np.atleast_2d(np.asarray(b, dtype=np.float64))
    if a.shape[0] == 0 or b.shape[0] == 0:
        raise ValueError("chamfer distance needs two non-empty clouds")
    d_ab = GridIndex2D(b).nearest_dist(a)
    d_ba = GridIndex2D(a).nearest_dist(b)
    return 0.5 * float(d_ab.mean()) + 0.5 * float(d_ba.mean())
