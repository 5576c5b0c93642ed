"""Ground-truth environment, the shared occupancy grid and grid geometry.

Cells are stored row-major as ``cells[iy, ix]`` with ``iy`` growing with world y.
All distances exposed by this module are in meters.
"""
from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np
from scipy import ndimage
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import dijkstra

from .geometry import Pose2D

FREE = 0
OCCUPIED = 1
UNKNOWN = -1

SQRT2 = math.sqrt(2.0)
# Tolerance (meters along a ray) under which two boundary crossings count as one
# corner crossing; cells that only touch a ray at a corner are not traversed.
CORNER_EPS = 1e-9

_FOUR_CONNECTED = ndimage.generate_binary_structure(2, 1)


class GridError(ValueError):
    """Raised for out-of-bounds queries or sensing from a non-free cell."""


class WorldFileError(ValueError):
    def __init__(self, message: str, lineno: Optional[int] = None):
        self.lineno = lineno
        if lineno is not None:
            message = f"line {lineno}: {message}"
        super().__init__(message)


@dataclass(eq=False)
class OccupancyGrid:
    resolution: float
    cells: np.ndarray
    origin: tuple[float, float] = (0.0, 0.0)
    version: int = 0
    _cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self.cells = np.ascontiguousarray(self.cells, dtype=np.int8)
        if self.cells.ndim != 2:
            raise ValueError("cells must be a 2D array")
        if self.resolution <= 0:
            raise ValueError("resolution must be positive")
        bad = ~np.isin(self.cells, (FREE, OCCUPIED, UNKNOWN))
        if bad.any():
            raise ValueError("cells must be FREE, OCCUPIED or UNKNOWN")
        self.origin = (float(self.origin[0]), float(self.origin[1]))

    @classmethod
    def filled(cls, width: int, height: int, resolution: float, state: int = UNKNOWN,
               origin: tuple[float, float] = (0.0, 0.0)) -> OccupancyGrid:
        return cls(resolution, np.full((height, width), state, dtype=np.int8), origin)

    @property
    def width(self) -> int:
        return self.cells.shape[1]

    @property
    def height(self) -> int:
        return self.cells.shape[0]

    @property
    def size_m(self) -> tuple[float, float]:
        return (self.width * self.resolution, self.height * self.resolution)

    def touch(self) -> None:
        """Record a mutation of ``cells``; invalidates derived caches."""
        self.version += 1
        self._cache.clear()

    def copy(self) -> OccupancyGrid:
        return OccupancyGrid(self.resolution, self.cells.copy(), self.origin)

    def world_to_cell(self, x: float, y: float) -> tuple[int, int]:
        return (math.floor((x - self.origin[0]) / self.resolution),
                math.floor((y - self.origin[1]) / self.resolution))

    def cell_to_world(self, ix: int, iy: int) -> tuple[float, float]:
        return (self.origin[0] + (ix + 0.5) * self.resolution,
                self.origin[1] + (iy + 0.5) * self.resolution)

    def cell_in_bounds(self, ix: int, iy: int) -> bool:
        return 0 <= ix < self.width and 0 <= iy < self.height

    def contains(self, x: float, y: float) -> bool:
        return self.cell_in_bounds(*self.world_to_cell(x, y))

    def state_at(self, x: float, y: float) -> int:
        ix, iy = self.world_to_cell(x, y)
        if not self.cell_in_bounds(ix, iy):
            raise GridError(f"point ({x:.3f}, {y:.3f}) outside grid")
        return int(self.cells[iy, ix])

    def is_free(self, x: float, y: float) -> bool:
        ix, iy = self.world_to_cell(x, y)
        return self.cell_in_bounds(ix, iy) and self.cells[iy, ix] == FREE

    def count(self, state: int) -> int:
        return int(np.count_nonzero(self.cells == state))

    def mapped_area(self) -> float:
        """Area (m^2) of cells that are FREE or OCCUPIED."""
        return (self.cells.size - self.count(UNKNOWN)) * self.resolution ** 2

    def free_flat_indices(self) -> np.ndarray:
        key = "free_idx"
        if key not in self._cache:
            self._cache[key] = np.flatnonzero(self.cells.ravel() == FREE)
        return self._cache[key]


@dataclass(frozen=True)
class Geofence:
    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self):
        if not (self.x2 > self.x1 and self.y2 > self.y1):
            raise ValueError("geofence must have positive area (x1 < x2, y1 < y2)")

    @property
    def corners(self) -> list[tuple[float, float]]:
        return [(self.x1, self.y1), (self.x2, self.y1), (self.x2, self.y2), (self.x1, self.y2)]

    @property
    def area(self) -> float:
        return (self.x2 - self.x1) * (self.y2 - self.y1)

    def contains(self, x: float, y: float) -> bool:
        return self.x1 <= x <= self.x2 and self.y1 <= y <= self.y2


@dataclass
class GroundTruthWorld:
    grid: OccupancyGrid
    geofence: Geofence
    victims: list[tuple[float, float]]
    robot_starts: list[Pose2D]
    seed: int = 0

    @property
    def origin(self) -> tuple[float, float]:
        """Mission origin frame O: the first robot's start position."""
        return self.robot_starts[0].xy

    def free_area(self) -> float:
        """Ground-truth free area inside the geofence (m^2)."""
        g = self.grid
        xs = g.origin[0] + (np.arange(g.width) + 0.5) * g.resolution
        ys = g.origin[1] + (np.arange(g.height) + 0.5) * g.resolution
        inside = ((ys >= self.geofence.y1) & (ys <= self.geofence.y2))[:, None] & \
                 ((xs >= self.geofence.x1) & (xs <= self.geofence.x2))[None, :]
        return float(np.count_nonzero((g.cells == FREE) & inside)) * g.resolution ** 2


@dataclass(frozen=True)
class Ray:
    origin: tuple[float, float]
    angle: float
    max_range: float
    measured_length: float

    @property
    def hit(self) -> bool:
        return self.measured_length < self.max_range


# ---------------------------------------------------------------------------
# World files


def parse_world(text: str) -> GroundTruthWorld:
    """Parse the world file format (see README for the grammar)."""
    resolution = None
    geofence = None
    seed = 0
    victims: list[tuple[tuple[float, float], int]] = []
    robots: list[tuple[Pose2D, int]] = []
    rows: list[str] = []
    grid_line = None

    lines = text.splitlines()
    for lineno, raw in enumerate(lines, start=1):
        if grid_line is not None:
            row = raw.rstrip()
            if not row:
                continue
            bad = set(row) - {"#", "."}
            if bad:
                raise WorldFileError(f"unexpected grid characters {sorted(bad)!r}", lineno)
            if rows and len(row) != len(rows[0][0]):
                raise WorldFileError(
                    f"grid row has {len(row)} cells, expected {len(rows[0][0])}", lineno)
            rows.append((row, lineno))
            continue

        line = raw.split(";", 1)[0].strip()
        if not line:
            continue
        key, *vals = line.split()
        try:
            if key == "grid":
                if vals:
                    raise WorldFileError("'grid' takes no arguments", lineno)
                grid_line = lineno
            elif key == "resolution":
                (res,) = vals
                resolution = float(res)
                if not resolution > 0:
                    raise WorldFileError("resolution must be positive", lineno)
            elif key == "geofence":
                x1, y1, x2, y2 = map(float, vals)
                try:
                    geofence = (Geofence(x1, y1, x2, y2), lineno)
                except ValueError as exc:
                    raise WorldFileError(str(exc), lineno) from None
            elif key == "victim":
                x, y = map(float, vals)
                victims.append(((x, y), lineno))
            elif key == "robot":
                x, y, th = map(float, vals)
                robots.append((Pose2D(x, y, th), lineno))
            elif key == "seed":
                (s,) = vals
                seed = int(s)
            else:
                raise WorldFileError(f"unknown key {key!r}", lineno)
        except ValueError as exc:
            if isinstance(exc, WorldFileError):
                raise
            raise WorldFileError(f"malformed '{key}' entry: {line!r}", lineno) from None

    if resolution is None:
        raise WorldFileError("missing 'resolution'")
    if grid_line is None or not rows:
        raise WorldFileError("missing grid section")
    if geofence is None:
        raise WorldFileError("missing 'geofence'")
    if not robots:
        raise WorldFileError("at least one 'robot' entry is required")

    height = len(rows)
    cells = np.empty((height, len(rows[0][0])), dtype=np.int8)
    for r, (row, _) in enumerate(rows):
        # first row in the file is the top of the map (largest y)
        cells[height - 1 - r] = [OCCUPIED if ch == "#" else FREE for ch in row]
    grid = OccupancyGrid(resolution, cells)

    fence, fence_line = geofence
    for (x, y), lineno in victims:
        _check_free_point(grid, fence, x, y, "victim", lineno)
    for pose, lineno in robots:
        _check_free_point(grid, fence, pose.x, pose.y, "robot", lineno)
    return GroundTruthWorld(grid, fence, [v for v, _ in victims], [p for p, _ in robots], seed)


def _check_free_point(grid, fence, x, y, what, lineno):
    if not fence.contains(x, y):
        raise WorldFileError(f"{what} at ({x}, {y}) lies outside the geofence", lineno)
    if not grid.contains(x, y):
        raise WorldFileError(f"{what} at ({x}, {y}) lies outside the grid", lineno)
    if grid.state_at(x, y) != FREE:
        raise WorldFileError(f"{what} at ({x}, {y}) lies inside an obstacle", lineno)


def load_world(path) -> GroundTruthWorld:
    return parse_world(Path(path).read_text())


def format_world(world: GroundTruthWorld) -> str:
    g = world.grid
    f = world.geofence
    out = [f"resolution {g.resolution:g}", f"geofence {f.x1:g} {f.y1:g} {f.x2:g} {f.y2:g}",
           f"seed {world.seed}"]
    out += [f"victim {x:g} {y:g}" for x, y in world.victims]
    out += [f"robot {p.x:g} {p.y:g} {p.theta:g}" for p in world.robot_starts]
    out.append("grid")
    for iy in range(g.height - 1, -1, -1):
        out.append("".join("#" if c == OCCUPIED else "." for c in g.cells[iy]))
    return "\n".join(out) + "\n"


# ---------------------------------------------------------------------------
# Line traversal


def _segment_cells_clear(grid: OccupancyGrid, ax, ay, bx, by, blocked_states) -> bool:
    """Walk every cell whose interior the segment crosses (plus both end cells)."""
    cells = grid.cells
    res = grid.resolution
    w, h = grid.width, grid.height
    gx, gy = (ax - grid.origin[0]) / res, (ay - grid.origin[1]) / res
    ix, iy = math.floor(gx), math.floor(gy)
    ex, ey = grid.world_to_cell(bx, by)
    if not (0 <= ix < w and 0 <= iy < h and 0 <= ex < w and 0 <= ey < h):
        return False
    if cells[iy, ix] in blocked_states or cells[ey, ex] in blocked_states:
        return False
    length = math.hypot(bx - ax, by - ay)
    if length == 0.0:
        return True
    dx, dy = (bx - ax) / length, (by - ay) / length
    if dx > 0:
        sx, tdx, tmx = 1, res / dx, (ix + 1 - gx) * res / dx
    elif dx < 0:
        sx, tdx, tmx = -1, -res / dx, (gx - ix) * res / -dx
    else:
        sx, tdx, tmx = 0, math.inf, math.inf
    if dy > 0:
        sy, tdy, tmy = 1, res / dy, (iy + 1 - gy) * res / dy
    elif dy < 0:
        sy, tdy, tmy = -1, -res / dy, (gy - iy) * res / -dy
    else:
        sy, tdy, tmy = 0, math.inf, math.inf

    while True:
        t = tmx if tmx < tmy else tmy
        if t >= length - CORNER_EPS:
            return True
        diff = tmx - tmy
        if diff <= CORNER_EPS:
            ix += sx
            tmx += tdx
        if diff >= -CORNER_EPS:
            iy += sy
            tmy += tdy
        if not (0 <= ix < w and 0 <= iy < h):
            return False
        if cells[iy, ix] in blocked_states:
            return False


def raycast(grid: OccupancyGrid, a: Sequence[float], b: Sequence[float]) -> bool:
    """True iff no OCCUPIED cell lies on the discrete line a-b. UNKNOWN does not block."""
    ax, ay = a
    bx, by = b
    if not grid.contains(ax, ay) or not grid.contains(bx, by):
        raise GridError("raycast endpoints must lie inside the grid")
    return _segment_cells_clear(grid, ax, ay, bx, by, (OCCUPIED,))


def segment_clear(grid: OccupancyGrid, a: Sequence[float], b: Sequence[float]) -> bool:
    """Like :func:`raycast` but out-of-bounds endpoints count as a collision."""
    return _segment_cells_clear(grid, a[0], a[1], b[0], b[1], (OCCUPIED,))


def segment_free(grid: OccupancyGrid, a: Sequence[float], b: Sequence[float]) -> bool:
    """True iff every cell the segment a-b crosses is FREE."""
    return _segment_cells_clear(grid, a[0], a[1], b[0], b[1], (OCCUPIED, UNKNOWN))


def shortcut_path(grid: OccupancyGrid, start: Sequence[float],
                  waypoints: Sequence[Sequence[float]]) -> list[tuple[float, float]]:
    """Drop waypoints that can be skipped along straight FREE segments (greedy, from the start)."""
    out: list[tuple[float, float]] = []
    cur = (float(start[0]), float(start[1]))
    i, n = 0, len(waypoints)
    while i < n:
        j = n - 1
        while j > i and not segment_free(grid, cur, waypoints[j]):
            j -= 1
        cur = (float(waypoints[j][0]), float(waypoints[j][1]))
        out.append(cur)
        i = j + 1
    return out


@dataclass
class _MarchResult:
    lengths: np.ndarray
    end_ix: np.ndarray
    end_iy: np.ndarray
    visited: list  # list of (ix, iy) arrays per iteration


def _march(grid: OccupancyGrid, px, py, angles, max_len, stop_non_free: bool,
           record: bool = False) -> _MarchResult:
    """Vectorised grid traversal of many rays at once.

    A ray stops at the first cell that is out of bounds or, if ``stop_non_free``,
    not FREE; its length is the entry distance of that cell. Otherwise it runs
    to ``max_len``. ``end_ix/end_iy`` hold the cell that terminates each ray.
    """
    cells = grid.cells
    res = grid.resolution
    h, w = cells.shape
    angles = np.asarray(angles, dtype=float)
    n = angles.size
    px = np.broadcast_to(np.asarray(px, dtype=float), (n,))
    py = np.broadcast_to(np.asarray(py, dtype=float), (n,))
    maxl = np.broadcast_to(np.asarray(max_len, dtype=float), (n,)).copy()

    gx = (px - grid.origin[0]) / res
    gy = (py - grid.origin[1]) / res
    ix = np.floor(gx).astype(np.int64)
    iy = np.floor(gy).astype(np.int64)
    dx, dy = np.cos(angles), np.sin(angles)
    # exact axis-aligned rays: cos(pi/2) is ~6e-17, treat as zero
    dx[np.abs(dx) < 1e-15] = 0.0
    dy[np.abs(dy) < 1e-15] = 0.0
    sx = np.where(dx > 0, 1, -1)
    sy = np.where(dy > 0, 1, -1)
    with np.errstate(divide="ignore", invalid="ignore"):
        tdx = np.where(dx != 0, res / np.abs(dx), np.inf)
        tdy = np.where(dy != 0, res / np.abs(dy), np.inf)
        tmx = np.where(dx > 0, (ix + 1 - gx) * tdx, np.where(dx < 0, (gx - ix) * tdx, np.inf))
        tmy = np.where(dy > 0, (iy + 1 - gy) * tdy, np.where(dy < 0, (gy - iy) * tdy, np.inf))

    t_enter = np.zeros(n)
    lengths = maxl.copy()
    end_ix = ix.copy()
    end_iy = iy.copy()
    visited = []
    active = np.arange(n)
    while active.size:
        cx, cy = ix[active], iy[active]
        inb = (cx >= 0) & (cx < w) & (cy >= 0) & (cy < h)
        blocked = ~inb
        if stop_non_free:
            blocked[inb] = cells[cy[inb], cx[inb]] != FREE
        if blocked.any():
            b = active[blocked]
            lengths[b] = np.minimum(t_enter[b], maxl[b])
            end_ix[b], end_iy[b] = ix[b], iy[b]
            active = active[~blocked]
            cx, cy = cx[~blocked], cy[~blocked]
        if record and active.size:
            visited.append((cx, cy))
        tx, ty = tmx[active], tmy[active]
        tnext = np.minimum(tx, ty)
        diff = tx - ty
        stepx = diff <= CORNER_EPS
        stepy = diff >= -CORNER_EPS
        nix = ix[active] + np.where(stepx, sx[active], 0)
        niy = iy[active] + np.where(stepy, sy[active], 0)
        done = tnext >= maxl[active]
        if done.any():
            d = active[done]
            end_ix[d], end_iy[d] = nix[done], niy[done]
        go = ~done
        a = active[go]
        t_enter[a] = tnext[go]
        ix[a] = nix[go]
        iy[a] = niy[go]
        tmx[a] = np.where(stepx[go], tx[go] + tdx[a], tx[go])
        tmy[a] = np.where(stepy[go], ty[go] + tdy[a], ty[go])
        active = a
    return _MarchResult(lengths, end_ix, end_iy, visited)


def ray_angles(count: int, heading: float = 0.0, fov: float = 2.0 * math.pi) -> np.ndarray:
    """Uniformly spaced bearings; a full circle excludes the duplicate endpoint."""
    if fov >= 2.0 * math.pi - 1e-12:
        return heading + 2.0 * math.pi * np.arange(count) / count
    return heading - fov / 2.0 + fov * np.arange(count) / (count - 1)


def cast_rays(grid: OccupancyGrid, point: Sequence[float], range_: float, count: int,
              heading: float = 0.0, fov: float = 2.0 * math.pi) -> list[Ray]:
    """Cast ``count`` rays from ``point``; each stops at the first non-FREE cell."""
    if count < 4:
        raise ValueError("count must be >= 4")
    x, y = float(point[0]), float(point[1])
    if not grid.is_free(x, y):
        raise GridError(f"cannot cast rays from non-free point ({x:.3f}, {y:.3f})")
    angles = ray_angles(count, heading, fov)
    lengths = _march(grid, x, y, angles, range_, stop_non_free=True).lengths
    return [Ray((x, y), float(a), float(range_), float(l)) for a, l in zip(angles, lengths)]


def ray_lengths(grid: OccupancyGrid, points: np.ndarray, range_: float, count: int) -> np.ndarray:
    """Batched full-circle ray lengths, shape (len(points), count). Points must be FREE."""
    points = np.asarray(points, dtype=float).reshape(-1, 2)
    angles = ray_angles(count)
    m = len(points)
    px = np.repeat(points[:, 0], count)
    py = np.repeat(points[:, 1], count)
    res = _march(grid, px, py, np.tile(angles, m), range_, stop_non_free=True)
    return res.lengths.reshape(m, count)


def visible_cells(grid: OccupancyGrid, p: Sequence[float], range_: float, count: int):
    """Cells swept by ``count`` rays from ``p`` before hitting a non-FREE cell.

    Returns (ix, iy) integer arrays, possibly with repeats.
    """
    angles = ray_angles(count)
    res = _march(grid, p[0], p[1], angles, range_, stop_non_free=True, record=True)
    if not res.visited:
        return np.empty(0, np.int64), np.empty(0, np.int64)
    return (np.concatenate([v[0] for v in res.visited]),
            np.concatenate([v[1] for v in res.visited]))


def integrate_scan(grid: OccupancyGrid, pose: Pose2D, rays: Sequence[Ray],
                   sensor_pose: Optional[Pose2D] = None) -> OccupancyGrid:
    """Fuse a scan into ``grid`` in place (max rule: OCCUPIED is never cleared).

    ``rays`` carry world-frame bearings as cast from ``sensor_pose`` (defaults to
    ``pose``); they are re-anchored at ``pose`` before integration.
    """
    if not rays:
        return grid
    angles = np.array([r.angle for r in rays])
    lengths = np.array([r.measured_length for r in rays])
    hits = np.array([r.hit for r in rays])
    if sensor_pose is not None:
        angles = angles - sensor_pose.theta + pose.theta
    res = _march(grid, pose.x, pose.y, angles, lengths, stop_non_free=False, record=True)
    h, w = grid.cells.shape
    cells = grid.cells
    if res.visited:
        vx = np.concatenate([v[0] for v in res.visited])
        vy = np.concatenate([v[1] for v in res.visited])
        ok = (vx >= 0) & (vx < w) & (vy >= 0) & (vy < h)
        vx, vy = vx[ok], vy[ok]
        sel = cells[vy, vx] != OCCUPIED
        cells[vy[sel], vx[sel]] = FREE
    ex, ey = res.end_ix[hits], res.end_iy[hits]
    ok = (ex >= 0) & (ex < w) & (ey >= 0) & (ey < h)
    cells[ey[ok], ex[ok]] = OCCUPIED
    grid.touch()
    return grid


# ---------------------------------------------------------------------------
# Flood fill


def disk_offsets(radius_cells: float) -> tuple[np.ndarray, np.ndarray]:
    r = int(math.ceil(radius_cells))
    d = np.arange(-r, r + 1)
    ox, oy = np.meshgrid(d, d)
    return ox, oy


def unknown_fraction(grid: OccupancyGrid, point: Sequence[float], radius: float) -> float:
    """Share of a disk that is UNKNOWN and 4-connected to the cells around ``point``.

    The disk holds every cell whose center is within ``radius`` of ``point``; cells
    beyond the grid edge count in the denominator but are never unknown.
    """
    if radius <= 0:
        raise ValueError("radius must be positive")
    res = grid.resolution
    x, y = float(point[0]), float(point[1])
    cx, cy = grid.world_to_cell(x, y)
    r = int(math.ceil(radius / res)) + 1
    xs = np.arange(cx - r, cx + r + 1)
    ys = np.arange(cy - r, cy + r + 1)
    wx = grid.origin[0] + (xs + 0.5) * res - x
    wy = grid.origin[1] + (ys + 0.5) * res - y
    disk = (wy[:, None] ** 2 + wx[None, :] ** 2) <= radius * radius
    total = int(np.count_nonzero(disk))
    if total == 0:
        return 0.0

    inx = (xs >= 0) & (xs < grid.width)
    iny = (ys >= 0) & (ys < grid.height)
    if not inx.any() or not iny.any():
        return 0.0
    sub = grid.cells[ys[iny][0]:ys[iny][-1] + 1, xs[inx][0]:xs[inx][-1] + 1]
    unknown = (sub == UNKNOWN) & disk[np.ix_(iny, inx)]
    if not unknown.any():
        return 0.0
    labels, _ = ndimage.label(unknown, structure=_FOUR_CONNECTED)
    # seed: the point's cell and its 8 neighbours, in window coordinates
    ox, oy = cx - xs[inx][0], cy - ys[iny][0]
    lo_y, lo_x = max(oy - 1, 0), max(ox - 1, 0)
    seeds = labels[lo_y:max(oy + 2, 0), lo_x:max(ox + 2, 0)]
    seed_labels = np.unique(seeds[seeds > 0])
    if seed_labels.size == 0:
        return 0.0
    return float(np.count_nonzero(np.isin(labels, seed_labels))) / total


# ---------------------------------------------------------------------------
# Shortest paths

_NEIGHBOURS = [(1, 0, 1.0), (-1, 0, 1.0), (0, 1, 1.0), (0, -1, 1.0),
               (1, 1, SQRT2), (1, -1, SQRT2), (-1, 1, SQRT2), (-1, -1, SQRT2)]


def _free_neighbours(cells, ix, iy, w, h):
    for dx, dy, cost in _NEIGHBOURS:
        nx, ny = ix + dx, iy + dy
        if not (0 <= nx < w and 0 <= ny < h) or cells[ny, nx] != FREE:
            continue
        # no corner cutting past an obstacle or unknown cell
        if dx and dy and (cells[iy, nx] != FREE or cells[ny, ix] != FREE):
            continue
        yield nx, ny, cost


def _astar_cells(grid: OccupancyGrid, a, b):
    cells = grid.cells
    w, h = grid.width, grid.height
    start = grid.world_to_cell(*a)
    goal = grid.world_to_cell(*b)
    if not grid.cell_in_bounds(*start) or cells[start[1], start[0]] != FREE:
        raise GridError("A* start must be a FREE cell")
    if not grid.cell_in_bounds(*goal) or cells[goal[1], goal[0]] != FREE:
        return None, math.inf
    gx, gy = goal

    def heuristic(ix, iy):
        ddx, ddy = abs(ix - gx), abs(iy - gy)
        return max(ddx, ddy) + (SQRT2 - 1.0) * min(ddx, ddy)

    g = {start: 0.0}
    came = {start: None}
    closed = set()
    heap = [(heuristic(*start), 0.0, start)]
    while heap:
        _, gc, cur = heapq.heappop(heap)
        if cur in closed:
            continue
        if cur == goal:
            path = []
            node = cur
            while node is not None:
                path.append(node)
                node = came[node]
            return path[::-1], gc * grid.resolution
        closed.add(cur)
        for nx, ny, cost in _free_neighbours(cells, cur[0], cur[1], w, h):
            ng = gc + cost
            nb = (nx, ny)
            if ng < g.get(nb, math.inf):
                g[nb] = ng
                came[nb] = cur
                heapq.heappush(heap, (ng + heuristic(nx, ny), ng, nb))
    return None, math.inf


def astar_distance(grid: OccupancyGrid, a: Sequence[float], b: Sequence[float]) -> float:
    """Shortest 8-connected path length (m) through FREE cells; ``math.inf`` if unreachable."""
    return _astar_cells(grid, a, b)[1]


def astar_path(grid: OccupancyGrid, a, b) -> Optional[list[tuple[float, float]]]:
    cells, _ = _astar_cells(grid, a, b)
    if cells is None:
        return None
    return [grid.cell_to_world(ix, iy) for ix, iy in cells]


def _free_graph(grid: OccupancyGrid):
    key = "free_graph"
    if key in grid._cache:
        return grid._cache[key]
    cells = grid.cells
    h, w = cells.shape
    free = cells == FREE
    idx = np.arange(h * w).reshape(h, w)
    rows, cols, data = [], [], []
    for dx, dy, cost in ((1, 0, 1.0), (0, 1, 1.0), (1, 1, SQRT2), (1, -1, SQRT2)):
        ys0, ys1 = (0, h - dy) if dy >= 0 else (-dy, h)
        xs0, xs1 = 0, w - dx
        a = free[ys0:ys1, xs0:xs1]
        b = free[ys0 + dy:ys1 + dy, xs0 + dx:xs1 + dx]
        ok = a & b
        if dx and dy:
            ok &= free[ys0:ys1, xs0 + dx:xs1 + dx] & free[ys0 + dy:ys1 + dy, xs0:xs1]
        rows.append(idx[ys0:ys1, xs0:xs1][ok])
        cols.append(idx[ys0 + dy:ys1 + dy, xs0 + dx:xs1 + dx][ok])
        data.append(np.full(np.count_nonzero(ok), cost * grid.resolution))
    graph = coo_matrix((np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))),
                       shape=(h * w, h * w)).tocsr()
    grid._cache[key] = graph
    return graph


def distance_field(grid: OccupancyGrid, sources: Sequence[Sequence[float]],
                   predecessors: bool = False):
    """Single-source shortest distances from each source to every cell.

    Returns an array of shape (len(sources), height * width) in meters (inf where
    unreachable), and optionally the matching predecessor array. Sources that are
    not FREE get an all-inf row.
    """
    h, w = grid.cells.shape
    n = len(sources)
    dist = np.full((n, h * w), np.inf)
    pred = np.full((n, h * w), -9999, dtype=np.int64)
    flat = []
    rows = []
    for i, (x, y) in enumerate(sources):
        ix, iy = grid.world_to_cell(x, y)
        if grid.cell_in_bounds(ix, iy) and grid.cells[iy, ix] == FREE:
            flat.append(iy * w + ix)
            rows.append(i)
    if flat:
        out = dijkstra(_free_graph(grid), directed=False, indices=flat,
                       return_predecessors=predecessors)
        if predecessors:
            d, p = out
            pred[rows] = p
        else:
            d = out
        dist[rows] = d
    return (dist, pred) if predecessors else dist


def path_from_predecessors(grid: OccupancyGrid, pred_row: np.ndarray, goal_flat: int):
    """Cell-center waypoints from the field's source to ``goal_flat``."""
    w = grid.width
    out = []
    node = int(goal_flat)
    while node >= 0:
        out.append(grid.cell_to_world(node % w, node // w))
        node = int(pred_row[node])
    return out[::-1]


def nearest_free_point(grid: OccupancyGrid, p: Sequence[float],
                       max_radius: float) -> Optional[tuple[float, float]]:
    """Center of the FREE cell closest to ``p`` within ``max_radius``, or None."""
    x, y = float(p[0]), float(p[1])
    ix, iy = grid.world_to_cell(x, y)
    if grid.cell_in_bounds(ix, iy) and grid.cells[iy, ix] == FREE:
        return grid.cell_to_world(ix, iy)
    res = grid.resolution
    r = int(math.ceil(max_radius / res)) + 1
    x0, x1 = max(ix - r, 0), min(ix + r + 1, grid.width)
    y0, y1 = max(iy - r, 0), min(iy + r + 1, grid.height)
    if x0 >= x1 or y0 >= y1:
        return None
    sub = grid.cells[y0:y1, x0:x1]
    fy, fx = np.nonzero(sub == FREE)
    if fx.size == 0:
        return None
    cxs = grid.origin[0] + (fx + x0 + 0.5) * res
    cys = grid.origin[1] + (fy + y0 + 0.5) * res
    d2 = (cxs - x) ** 2 + (cys - y) ** 2
    k = int(np.argmin(d2))
    if d2[k] > max_radius * max_radius:
        return None
    return (float(cxs[k]), float(cys[k]))


def iter_free_points(grid: OccupancyGrid) -> Iterable[tuple[float, float]]:
    for flat in grid.free_flat_indices():
        yield grid.cell_to_world(int(flat % grid.width), int(flat // grid.width))
