"""Exploration task generation: gain threshold, mean-shift clustering, line-of-sight split."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .world import OCCUPIED, OccupancyGrid, raycast, unknown_fraction

MS_TOL = 1e-4
MS_MAX_ITER = 100


@dataclass(frozen=True)
class FrontierNode:
    x: float
    y: float
    gain: float

    @property
    def xy(self) -> tuple[float, float]:
        return (self.x, self.y)


def information_gain_frontier(point: Sequence[float], grid: OccupancyGrid, sensor_range: float) -> float:
    """Fraction of the laser disk that is continuous unknown space around ``point``."""
    return unknown_fraction(grid, point, sensor_range)


def mean_shift(points, bandwidth: float) -> tuple[np.ndarray, np.ndarray]:
    """Flat-kernel mean shift.

    Each point climbs to the mean of the input points within ``bandwidth`` until
    it moves less than 1e-4 m (or 100 iterations). Modes closer than
    ``bandwidth / 2`` merge into one centroid (their mean, in input order), and
    every input is assigned to its nearest centroid.
    """
    if bandwidth <= 0:
        raise ValueError("bandwidth must be positive")
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    if len(pts) == 0:
        return np.empty((0, 2)), np.empty(0, dtype=np.int64)
    modes = pts.copy()
    moving = np.ones(len(pts), dtype=bool)
    bw2 = bandwidth * bandwidth
    for _ in range(MS_MAX_ITER):
        if not moving.any():
            break
        cur = modes[moving]
        d2 = ((cur[:, None, :] - pts[None, :, :]) ** 2).sum(axis=2)
        w = d2 <= bw2
        new = (w @ pts) / w.sum(axis=1, keepdims=True)
        shift = np.hypot(*(new - cur).T)
        modes[moving] = new
        idx = np.flatnonzero(moving)
        moving[idx[shift < MS_TOL]] = False

    groups: list[list[int]] = []
    reps: list[np.ndarray] = []
    half2 = (bandwidth / 2.0) ** 2
    for i, m in enumerate(modes):
        for g, rep in enumerate(reps):
            if ((m - rep) ** 2).sum() <= half2:
                groups[g].append(i)
                break
        else:
            groups.append([i])
            reps.append(m)
    centroids = np.array([modes[g].mean(axis=0) for g in groups])
    d2 = ((pts[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
    return centroids, np.argmin(d2, axis=1)


def filter_exploration_nodes(candidates: Iterable[Sequence[float]],
                             previous: Iterable[FrontierNode | Sequence[float]],
                             sensor_range: float, min_frontier_gain: float, bandwidth: float,
                             grid: OccupancyGrid) -> list[FrontierNode]:
    """Turn raw candidates (plus last round's frontiers) into the frontier task set.

    A centroid that falls in an obstacle or scores below the gain threshold is
    replaced by the member closest to it, so every output clears the threshold.
    """
    pts = [tuple(map(float, c)) for c in candidates]
    pts += [(p.x, p.y) if isinstance(p, FrontierNode) else tuple(map(float, p)) for p in previous]
    kept, gains = [], []
    for p in pts:
        if not grid.contains(*p):
            continue
        g = information_gain_frontier(p, grid, sensor_range)
        if g >= min_frontier_gain:
            kept.append(p)
            gains.append(g)
    if not kept:
        return []
    arr = np.array(kept)
    centroids, labels = mean_shift(arr, bandwidth)

    out: list[FrontierNode] = []
    for c_idx, c in enumerate(centroids):
        members = np.flatnonzero(labels == c_idx)
        if members.size == 0:
            continue
        cx, cy = float(c[0]), float(c[1])
        gain = None
        if grid.contains(cx, cy) and grid.state_at(cx, cy) != OCCUPIED:
            gain = information_gain_frontier((cx, cy), grid, sensor_range)
        if gain is None or gain < min_frontier_gain:
            d2 = ((arr[members] - c) ** 2).sum(axis=1)
            best = int(members[int(np.argmin(d2))])
            cx, cy = kept[best]
            gain = gains[best]
        out.append(FrontierNode(cx, cy, gain))
        for m in members:
            p = kept[int(m)]
            if p == (cx, cy):
                continue
            if not raycast(grid, p, (cx, cy)):
                out.append(FrontierNode(p[0], p[1], gains[int(m)]))
    return out
