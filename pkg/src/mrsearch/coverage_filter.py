"""Coverage viewpoint selection: visibility radius and the two-level SOTFC filter.

The visibility radius of a node is the radius of the largest obstacle-free disk
seen around it (shortest of its rays), clamped to the coverage sensor range.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Iterable, Optional, Sequence

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree

from .world import FREE, GridError, OccupancyGrid, ray_lengths

DEFAULT_RAYS = 36

# Optional hook: given an (n, 2) array of world points, return a bool mask of
# points that must not become coverage candidates.
ExcludeFn = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class CoverageNode:
    x: float
    y: float
    view_area: float
    clearance: float
    tree_id: int = -1
    node_id: int = -1

    @property
    def xy(self) -> tuple[float, float]:
        return (self.x, self.y)


def visibility_radius(point: Sequence[float], grid: OccupancyGrid, visibility_cap: float,
                      ray_count: int = DEFAULT_RAYS) -> tuple[float, float]:
    """Return (view area, clearance radius) for a FREE point ``point``."""
    if not grid.is_free(point[0], point[1]):
        raise GridError(f"visibility radius needs a FREE point, got {tuple(point)}")
    clearance = float(min(ray_lengths(grid, [point], visibility_cap, ray_count).min(), visibility_cap))
    return math.pi * clearance * clearance, clearance


def clearance_radii(points: np.ndarray, grid: OccupancyGrid, visibility_cap: float,
                    ray_count: int = DEFAULT_RAYS) -> np.ndarray:
    """Batched clearance radii; points outside FREE space get 0."""
    points = np.asarray(points, dtype=float).reshape(-1, 2)
    clearance = np.zeros(len(points))
    if not len(points):
        return clearance
    res = grid.resolution
    ix = np.floor((points[:, 0] - grid.origin[0]) / res).astype(np.int64)
    iy = np.floor((points[:, 1] - grid.origin[1]) / res).astype(np.int64)
    ok = (ix >= 0) & (ix < grid.width) & (iy >= 0) & (iy < grid.height)
    ok[ok] = grid.cells[iy[ok], ix[ok]] == FREE
    if ok.any():
        lengths = ray_lengths(grid, points[ok], visibility_cap, ray_count)
        clearance[ok] = np.minimum(lengths.min(axis=1), visibility_cap)
    return clearance


def intra_tree_best(tree_id: int, ids: np.ndarray, xy: np.ndarray, grid: OccupancyGrid,
                    visibility_cap: float, per_tree: int = 3, ray_count: int = DEFAULT_RAYS,
                    exclude: Optional[ExcludeFn] = None) -> list[CoverageNode]:
    """Level 1: the ``per_tree`` nodes of one tree with the largest view area (ties: lower node id)."""
    if len(ids) == 0:
        return []
    ids = np.asarray(ids)
    xy = np.asarray(xy, dtype=float).reshape(-1, 2)
    if exclude is not None:
        keep = ~np.asarray(exclude(xy), dtype=bool)
        ids, xy = ids[keep], xy[keep]
        if len(ids) == 0:
            return []
    clearance = clearance_radii(xy, grid, visibility_cap, ray_count)
    view_area = math.pi * clearance * clearance
    order = np.lexsort((ids, -view_area))[:per_tree]
    return [CoverageNode(float(xy[i, 0]), float(xy[i, 1]), float(view_area[i]), float(clearance[i]),
                         tree_id, int(ids[i]))
            for i in order if clearance[i] > 0]


def inter_tree_filter(candidates: Iterable[CoverageNode], min_view_area: float, max_tasks: int) -> list[CoverageNode]:
    """Level 2: drop weak nodes, suppress overlapping disks, keep the best ``max_tasks``.

    Candidates are visited strongest first (ties by tree then node id); one is kept
    unless an already kept node lies within twice the larger of the two clearance
    radii. Because kept nodes are always at least as strong, that radius is the
    kept node's.
    """
    if max_tasks < 1:
        raise ValueError("max_tasks must be >= 1")
    pool = sorted((c for c in candidates if c.view_area >= min_view_area),
                  key=lambda c: (-c.view_area, c.tree_id, c.node_id))
    kept: list[CoverageNode] = []
    for c in pool:
        for s in kept:
            r = max(s.clearance, c.clearance)
            if (s.x - c.x) ** 2 + (s.y - c.y) ** 2 <= 4.0 * r * r:
                break
        else:
            kept.append(c)
            if len(kept) == max_tasks:
                break
    return kept


def sotfc(trees, grid: OccupancyGrid, visibility_cap: float, min_view_area: float, max_tasks: int, per_tree: int = 3,
          ray_count: int = DEFAULT_RAYS, exclude: Optional[ExcludeFn] = None) -> list[CoverageNode]:
    """Survival-of-the-fittest coverage filter over a snapshot of task vertices.

    ``trees`` holds objects with an ``id`` and an ``arrays()`` method returning
    (node ids, world xy), such as :class:`mrsearch.pgart.TaskVertex`.
    """
    if max_tasks < 1:
        raise ValueError("max_tasks must be >= 1")
    cands = []
    for tv in trees:
        ids, xy = tv.arrays()
        cands.extend(intra_tree_best(tv.id, ids, xy, grid, visibility_cap, per_tree, ray_count, exclude))
    return inter_tree_filter(cands, min_view_area, max_tasks)


class CoverageFilter:
    """Incremental SOTFC over a live TaskGraph.

    Clearance radii are cached per node and recomputed only for new or moved
    nodes and for nodes within sensing range of map cells that changed since the
    previous call. Nodes within ``visited_radius`` of a pose vertex are treated
    as already seen and never offered; that flag is sticky until a pose moves.
    Level 2 always runs over the full candidate set.
    """

    def __init__(self, visibility_cap: float, min_view_area: float, max_tasks: int, per_tree: int = 3,
                 ray_count: int = DEFAULT_RAYS, visited_radius: float = 0.0):
        if max_tasks < 1:
            raise ValueError("max_tasks must be >= 1")
        self.visibility_cap = visibility_cap
        self.min_view_area = min_view_area
        self.max_tasks = max_tasks
        self.per_tree = per_tree
        self.ray_count = ray_count
        self.visited_radius = visited_radius
        self._keys = np.empty(0, dtype=np.int64)
        self._xy = np.empty((0, 2))
        self._clearance = np.empty(0)
        self._visited = np.empty(0, dtype=bool)
        self._cells: Optional[np.ndarray] = None
        self._poses = np.empty((0, 2))

    def _gather(self, graph):
        ids, xys, tids = [], [], []
        for tv in graph.vertices:
            i, xy = tv.arrays()
            ids.append(i)
            xys.append(xy)
            tids.append(np.full(len(i), tv.id, dtype=np.int64))
        if not ids:
            return np.empty(0, np.int64), np.empty(0, np.int64), np.empty((0, 2))
        return np.concatenate(tids), np.concatenate(ids), np.concatenate(xys)

    def _changed_near(self, grid: OccupancyGrid) -> Optional[np.ndarray]:
        """Mask of cells within sensing range of a change; None if nothing changed."""
        cells = grid.cells
        if self._cells is None or self._cells.shape != cells.shape:
            self._cells = cells.copy()
            return np.ones(cells.shape, dtype=bool)
        diff = cells != self._cells
        if not diff.any():
            return None
        self._cells = cells.copy()
        r = int(math.ceil(self.visibility_cap / grid.resolution)) + 1
        return ndimage.maximum_filter(diff, size=2 * r + 1, mode="constant")

    def update(self, graph, grid: OccupancyGrid, pose_xy: Optional[np.ndarray] = None) -> list[CoverageNode]:
        tids, nids, xy = self._gather(graph)
        n = len(nids)
        keys = (tids << 32) | nids
        clearance = np.full(n, np.nan)
        visited = np.zeros(n, dtype=bool)

        pose_xy = np.empty((0, 2)) if pose_xy is None else np.asarray(pose_xy, dtype=float).reshape(-1, 2)
        n_old = len(self._poses)
        poses_moved = n_old > len(pose_xy) or not np.array_equal(self._poses, pose_xy[:n_old])

        known = np.zeros(n, dtype=bool)
        if len(self._keys) and n:
            pos = np.clip(np.searchsorted(self._keys, keys), 0, len(self._keys) - 1)
            known = (self._keys[pos] == keys) & (self._xy[pos] == xy).all(axis=1)
            clearance[known] = self._clearance[pos[known]]
            if not poses_moved:
                visited[known] = self._visited[pos[known]]
        near = self._changed_near(grid)
        if near is not None and n:
            res = grid.resolution
            ix = np.floor((xy[:, 0] - grid.origin[0]) / res).astype(np.int64)
            iy = np.floor((xy[:, 1] - grid.origin[1]) / res).astype(np.int64)
            inb = (ix >= 0) & (ix < grid.width) & (iy >= 0) & (iy < grid.height)
            dirty = ~inb
            dirty[inb] = near[iy[inb], ix[inb]]
            clearance[dirty] = np.nan
        todo = np.isnan(clearance)
        if todo.any():
            clearance[todo] = clearance_radii(xy[todo], grid, self.visibility_cap, self.ray_count)

        if self.visited_radius > 0 and len(pose_xy) and n:
            # nodes seen before only need the poses added since the last call
            fresh = pose_xy if poses_moved else pose_xy[n_old:]
            if poses_moved:
                seen_idx, new_idx = np.empty(0, np.int64), np.arange(n)
            else:
                seen_idx, new_idx = np.flatnonzero(known & ~visited), np.flatnonzero(~known)
            for idx, ref in ((seen_idx, fresh), (new_idx, pose_xy)):
                if idx.size and len(ref):
                    dist, _ = cKDTree(ref).query(xy[idx])
                    hit = dist < self.visited_radius
                    visited[idx[hit]] = True

        order = np.argsort(keys, kind="stable")
        self._keys, self._xy, self._clearance, self._visited = keys[order], xy[order], clearance[order], visited[order]
        self._poses = pose_xy.copy()

        # level 1: the best few of each tree among unvisited nodes with positive clearance
        live = np.flatnonzero(~visited & (clearance > 0))
        if live.size == 0:
            return []
        view_area = math.pi * clearance[live] * clearance[live]
        srt = live[np.lexsort((nids[live], -view_area, tids[live]))]
        t_sorted = tids[srt]
        starts = np.r_[0, np.flatnonzero(np.diff(t_sorted)) + 1]
        rank = np.arange(len(srt)) - np.repeat(starts, np.diff(np.r_[starts, len(srt)]))
        best = srt[rank < self.per_tree]
        cands = [CoverageNode(float(xy[i, 0]), float(xy[i, 1]), float(math.pi * clearance[i] * clearance[i]),
                              float(clearance[i]), int(tids[i]), int(nids[i])) for i in best]
        return inter_tree_filter(cands, self.min_view_area, self.max_tasks)
