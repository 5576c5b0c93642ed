import heapq
import math
from collections import deque

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mrsearch.geometry import Pose2D
from mrsearch.world import (FREE, OCCUPIED, UNKNOWN, GridError, OccupancyGrid, WorldFileError,
                            astar_distance, astar_path, cast_rays, distance_field, format_world,
                            integrate_scan, load_world, nearest_free_point, parse_world, raycast,
                            segment_free, shortcut_path, unknown_fraction)

WORLDS = __import__("mrsearch.sim.config", fromlist=["WORLDS_DIR"]).WORLDS_DIR


def grid_from(rows, res=0.1):
    """Rows as strings, top row first: '.' free, '#' occupied, '?' unknown."""
    lut = {".": FREE, "#": OCCUPIED, "?": UNKNOWN}
    cells = np.array([[lut[c] for c in row] for row in rows[::-1]], dtype=np.int8)
    return OccupancyGrid(res, cells)


def random_grid(rng, w=30, h=30, p_occ=0.25, p_unk=0.0, res=0.1):
    u = rng.random((h, w))
    cells = np.where(u < p_occ, OCCUPIED, FREE).astype(np.int8)
    cells[(u >= p_occ) & (u < p_occ + p_unk)] = UNKNOWN
    return OccupancyGrid(res, cells)


# -- oracles -----------------------------------------------------------------


def clipped_length(ax, ay, bx, by, x0, y0, x1, y1):
    """Liang-Barsky: length of segment a-b inside the box [x0,x1]x[y0,y1]."""
    dx, dy = bx - ax, by - ay
    t0, t1 = 0.0, 1.0
    for p, q in ((-dx, ax - x0), (dx, x1 - ax), (-dy, ay - y0), (dy, y1 - ay)):
        if p == 0:
            if q < 0:
                return 0.0
            continue
        r = q / p
        if p < 0:
            t0 = max(t0, r)
        else:
            t1 = min(t1, r)
    return max(0.0, t1 - t0) * math.hypot(dx, dy)


def supercover_clear(grid, a, b):
    res = grid.resolution
    ix0, iy0 = grid.world_to_cell(*a)
    ix1, iy1 = grid.world_to_cell(*b)
    if grid.cells[iy0, ix0] == OCCUPIED or grid.cells[iy1, ix1] == OCCUPIED:
        return False
    for iy in range(min(iy0, iy1), max(iy0, iy1) + 1):
        for ix in range(min(ix0, ix1), max(ix0, ix1) + 1):
            if grid.cells[iy, ix] != OCCUPIED:
                continue
            if clipped_length(*a, *b, ix * res, iy * res, (ix + 1) * res, (iy + 1) * res) > 1e-7:
                return False
    return True


def bfs_unknown_fraction(grid, n, radius):
    res = grid.resolution
    cx, cy = grid.world_to_cell(*n)
    r = int(math.ceil(radius / res)) + 1

    def in_disk(ix, iy):
        x, y = (ix + 0.5) * res, (iy + 0.5) * res
        return (x - n[0]) ** 2 + (y - n[1]) ** 2 <= radius * radius

    total = sum(in_disk(ix, iy) for ix in range(cx - r, cx + r + 1) for iy in range(cy - r, cy + r + 1))

    def unknown(ix, iy):
        return grid.cell_in_bounds(ix, iy) and grid.cells[iy, ix] == UNKNOWN and in_disk(ix, iy)

    seen = set()
    q = deque()
    for dx in (-1, 0, 1):
        for dy in (-1, 0, 1):
            c = (cx + dx, cy + dy)
            if unknown(*c) and c not in seen:
                seen.add(c)
                q.append(c)
    while q:
        ix, iy = q.popleft()
        for dx, dy in ((1, 0), (-1, 0), (0, 1), (0, -1)):
            c = (ix + dx, iy + dy)
            if c not in seen and unknown(*c):
                seen.add(c)
                q.append(c)
    return len(seen) / total


def dijkstra_oracle(grid, a, b):
    cells = grid.cells
    h, w = cells.shape
    s = grid.world_to_cell(*a)
    g = grid.world_to_cell(*b)
    if cells[g[1], g[0]] != FREE:
        return math.inf
    dist = {s: 0.0}
    heap = [(0.0, s)]
    while heap:
        d, (x, y) = heapq.heappop(heap)
        if (x, y) == g:
            return d * grid.resolution
        if d > dist[(x, y)]:
            continue
        for dx in (-1, 0, 1):
            for dy in (-1, 0, 1):
                if not dx and not dy:
                    continue
                nx, ny = x + dx, y + dy
                if not (0 <= nx < w and 0 <= ny < h) or cells[ny, nx] != FREE:
                    continue
                if dx and dy and (cells[y, nx] != FREE or cells[ny, x] != FREE):
                    continue
                nd = d + (math.sqrt(2) if dx and dy else 1.0)
                if nd < dist.get((nx, ny), math.inf):
                    dist[(nx, ny)] = nd
                    heapq.heappush(heap, (nd, (nx, ny)))
    return math.inf


def random_free_point(rng, grid):
    fy, fx = np.nonzero(grid.cells == FREE)
    k = rng.integers(len(fx))
    res = grid.resolution
    return ((fx[k] + rng.uniform(0.05, 0.95)) * res, (fy[k] + rng.uniform(0.05, 0.95)) * res)


# -- world files ----------------------------------------------------------------


def test_minimal_world_parses():
    w = parse_world("resolution 1\ngeofence 0 0 3 3\nvictim 1.5 1.5\nrobot 0.5 0.5 0\ngrid\n...\n...\n...\n")
    assert w.grid.count(FREE) == 9
    assert w.victims == [(1.5, 1.5)]
    assert w.origin == (0.5, 0.5)


def test_victim_on_obstacle_rejected():
    with pytest.raises(WorldFileError, match="obstacle"):
        parse_world("resolution 1\ngeofence 0 0 3 3\nvictim 1.5 1.5\nrobot 0.5 0.5 0\ngrid\n...\n.#.\n...\n")


@pytest.mark.parametrize("text, fragment", [
    ("resolution 1\ngeofence 0 0 3 1\nrobot 0.5 0.5 0\nwat 3\ngrid\n...\n", "unknown key"),
    ("resolution 1\ngeofence 0 0 3 1\nrobot 0.5 0.5 0\ngrid\n...\n..\n", "cells"),
    ("geofence 0 0 3 1\nrobot 0.5 0.5 0\ngrid\n...\n", "resolution"),
    ("resolution 1\ngeofence 0 0 3 1\ngrid\n...\n", "robot"),
    ("resolution 1\ngeofence 0 0 3 1\nrobot 5 0.5 0\ngrid\n...\n", "geofence"),
    ("resolution 1\ngeofence 0 0 3 1\nrobot 0.5 0.5 0\ngrid\n.x.\n", "grid characters"),
])
def test_world_parse_errors(text, fragment):
    with pytest.raises(WorldFileError, match=fragment):
        parse_world(text)


def test_parse_error_carries_line_number():
    with pytest.raises(WorldFileError) as exc:
        parse_world("resolution 1\ngeofence 0 0 3 1\nrobot 0.5 0.5\ngrid\n...\n")
    assert exc.value.lineno == 3


def test_large_maze_dimensions():
    w = load_world(WORLDS / "tepper_maze.world")
    assert (w.grid.width, w.grid.height) == (170, 200)
    assert len(w.victims) == 12


def test_first_file_row_is_top():
    w = parse_world("resolution 1\ngeofence 0 0 2 2\nrobot 1.5 0.5 0\ngrid\n#.\n..\n")
    assert w.grid.state_at(0.5, 1.5) == OCCUPIED
    assert w.grid.state_at(0.5, 0.5) == FREE


@pytest.mark.parametrize("name", ["two_room", "desk_maze", "doubled_corridor", "tepper_maze", "tiny"])
def test_format_round_trip(name):
    w = load_world(WORLDS / f"{name}.world")
    again = parse_world(format_world(w))
    assert np.array_equal(again.grid.cells, w.grid.cells)
    assert again.victims == w.victims and again.robot_starts == w.robot_starts


def test_cell_conversion_round_trip():
    g = OccupancyGrid.filled(20, 10, 0.25, FREE, origin=(-1.0, 2.0))
    for ix in range(20):
        for iy in range(10):
            assert g.world_to_cell(*g.cell_to_world(ix, iy)) == (ix, iy)


# -- raycast -------------------------------------------------------------------------


def test_raycast_zero_length():
    g = grid_from(["...", "...", "..."])
    assert raycast(g, (0.15, 0.15), (0.15, 0.15))


def test_raycast_free_corridor_and_blocked_midpoint():
    g = grid_from(["......"])
    assert raycast(g, (0.05, 0.05), (0.55, 0.05))
    g = grid_from(["..#..."])
    assert not raycast(g, (0.05, 0.05), (0.55, 0.05))


def test_raycast_unknown_does_not_block():
    g = grid_from(["..??.."])
    assert raycast(g, (0.05, 0.05), (0.55, 0.05))
    assert not segment_free(g, (0.05, 0.05), (0.55, 0.05))


def test_raycast_corner_touch_does_not_block():
    g = grid_from(["#.", ".#"])
    # diagonal through the shared corner only touches the two occupied cells
    assert raycast(g, (0.05, 0.05), (0.15, 0.15))


def test_raycast_out_of_bounds_raises():
    g = grid_from(["..."])
    with pytest.raises(GridError):
        raycast(g, (0.05, 0.05), (5.0, 0.05))


def test_raycast_matches_supercover_oracle():
    rng = np.random.default_rng(7)
    for _ in range(40):
        g = random_grid(rng, 20, 20, p_occ=0.15)
        for _ in range(25):
            a = (rng.uniform(0, 2), rng.uniform(0, 2))
            b = (rng.uniform(0, 2), rng.uniform(0, 2))
            assert raycast(g, a, b) == supercover_clear(g, a, b)


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.01, 1.99), st.floats(0.01, 1.99),
       st.floats(0.01, 1.99), st.floats(0.01, 1.99))
def test_raycast_symmetric(seed, ax, ay, bx, by):
    g = random_grid(np.random.default_rng(seed), 20, 20, p_occ=0.2)
    assert raycast(g, (ax, ay), (bx, by)) == raycast(g, (bx, by), (ax, ay))


# -- cast_rays ------------------------------------------------------------------------


def test_cast_rays_open_space_clamps_to_range():
    g = OccupancyGrid.filled(200, 200, 0.1, FREE)
    rays = cast_rays(g, (10.0, 10.0), 4.0, 36)
    assert all(r.measured_length == 4.0 and not r.hit for r in rays)


def test_cast_rays_wall_one_meter_away():
    g = OccupancyGrid.filled(100, 100, 0.1, FREE)
    g.cells[:, 60] = OCCUPIED  # wall occupying x in [6.0, 6.1)
    rays = cast_rays(g, (5.0, 5.0), 4.0, 4)
    assert abs(rays[0].measured_length - 1.0) <= 0.1
    assert rays[0].hit


def test_cast_rays_circular_room():
    g = OccupancyGrid.filled(60, 60, 0.1, FREE)
    yy, xx = np.mgrid[0:60, 0:60]
    d = np.hypot((xx + 0.5) * 0.1 - 3.0, (yy + 0.5) * 0.1 - 3.0)
    g.cells[d > 2.0] = OCCUPIED
    for r in cast_rays(g, (3.0, 3.0), 4.0, 4):
        assert abs(r.measured_length - 2.0) <= 0.1 * math.sqrt(2)


def test_cast_rays_from_wall_raises():
    g = grid_from(["#.."])
    with pytest.raises(GridError):
        cast_rays(g, (0.05, 0.05), 1.0, 8)


def test_cast_rays_match_fine_marching():
    rng = np.random.default_rng(3)
    for _ in range(10):
        g = random_grid(rng, 40, 40, p_occ=0.08)
        p = random_free_point(rng, g)
        for r in cast_rays(g, p, 2.0, 24):
            # brute force: walk in 1 mm steps until a non-free cell
            t = 0.0
            while t < r.max_range:
                x, y = p[0] + t * math.cos(r.angle), p[1] + t * math.sin(r.angle)
                if not g.is_free(x, y):
                    break
                t += 0.001
            assert abs(min(t, r.max_range) - r.measured_length) <= 0.1 * math.sqrt(2)


# -- unknown_fraction ------------------------------------------------------------------


def test_unknown_fraction_extremes():
    unk = OccupancyGrid.filled(100, 100, 0.1, UNKNOWN)
    free = OccupancyGrid.filled(100, 100, 0.1, FREE)
    assert unknown_fraction(unk, (5.0, 5.0), 2.0) == 1.0
    assert unknown_fraction(free, (5.0, 5.0), 2.0) == 0.0


def test_unknown_fraction_half_plane():
    g = OccupancyGrid.filled(100, 100, 0.1, FREE)
    g.cells[:, 50:] = UNKNOWN
    assert abs(unknown_fraction(g, (5.0, 5.0), 4.0) - 0.5) <= 0.05


def test_unknown_fraction_ignores_disconnected_pockets():
    g = OccupancyGrid.filled(100, 100, 0.1, FREE)
    g.cells[10:20, 10:20] = UNKNOWN  # far from n, not connected
    assert unknown_fraction(g, (5.0, 5.0), 4.0) == 0.0


def test_unknown_fraction_matches_bfs_oracle():
    rng = np.random.default_rng(11)
    for _ in range(50):
        g = random_grid(rng, 40, 40, p_occ=0.15, p_unk=0.45)
        n = (rng.uniform(0.2, 3.8), rng.uniform(0.2, 3.8))
        radius = rng.uniform(0.3, 1.5)
        assert unknown_fraction(g, n, radius) == bfs_unknown_fraction(g, n, radius)


def test_integrating_scans_never_raises_unknown_fraction():
    rng = np.random.default_rng(5)
    truth = random_grid(rng, 50, 50, p_occ=0.05)
    m = OccupancyGrid.filled(50, 50, 0.1, UNKNOWN)
    probes = [(rng.uniform(0.5, 4.5), rng.uniform(0.5, 4.5)) for _ in range(10)]
    before = [unknown_fraction(m, p, 1.0) for p in probes]
    for _ in range(5):
        p = random_free_point(rng, truth)
        integrate_scan(m, Pose2D(*p, 0.0), cast_rays(truth, p, 2.0, 60))
        after = [unknown_fraction(m, q, 1.0) for q in probes]
        assert all(x <= y for x, y in zip(after, before))
        before = after


# -- scans ----------------------------------------------------------------------------


def test_omni_scan_in_open_area_is_a_disk():
    truth = OccupancyGrid.filled(120, 120, 0.1, FREE)
    m = OccupancyGrid.filled(120, 120, 0.1, UNKNOWN)
    integrate_scan(m, Pose2D(6.0, 6.0, 0.0), cast_rays(truth, (6.0, 6.0), 4.0, 720))
    assert m.state_at(6.0 + 3.8, 6.0) == FREE
    assert m.state_at(6.0, 6.0 - 3.8) == FREE
    assert m.state_at(6.0 + 4.3, 6.0) == UNKNOWN
    area = m.count(FREE) * 0.01
    assert abs(area - math.pi * 16) / (math.pi * 16) < 0.05


def test_scan_facing_wall():
    truth = OccupancyGrid.filled(60, 60, 0.1, FREE)
    truth.cells[:, 40] = OCCUPIED  # x in [4.0, 4.1)
    m = OccupancyGrid.filled(60, 60, 0.1, UNKNOWN)
    rays = cast_rays(truth, (2.05, 3.05), 4.0, 31, heading=0.0, fov=math.radians(60))
    integrate_scan(m, Pose2D(2.05, 3.05, 0.0), rays)
    assert m.state_at(4.05, 3.05) == OCCUPIED
    assert m.state_at(3.0, 3.05) == FREE
    assert m.state_at(1.5, 3.05) == UNKNOWN  # behind the sensor


def test_repeated_scan_is_idempotent():
    rng = np.random.default_rng(2)
    truth = random_grid(rng, 40, 40, p_occ=0.1)
    p = random_free_point(rng, truth)
    rays = cast_rays(truth, p, 2.0, 90)
    m = OccupancyGrid.filled(40, 40, 0.1, UNKNOWN)
    integrate_scan(m, Pose2D(*p, 0.0), rays)
    once = m.cells.copy()
    integrate_scan(m, Pose2D(*p, 0.0), rays)
    assert np.array_equal(once, m.cells)


def test_occupied_is_sticky():
    m = grid_from(["..#.."])
    truth = grid_from(["....."])
    integrate_scan(m, Pose2D(0.05, 0.05, 0.0), cast_rays(truth, (0.05, 0.05), 0.45, 4))
    assert m.state_at(0.25, 0.05) == OCCUPIED


# -- shortest paths ---------------------------------------------------------------------


def test_astar_trivial_cases():
    g = OccupancyGrid.filled(12, 1, 0.1, FREE)
    assert astar_distance(g, (0.05, 0.05), (0.05, 0.05)) == 0.0
    assert math.isclose(astar_distance(g, (0.05, 0.05), (1.05, 0.05)), 1.0, abs_tol=1e-12)


def test_astar_l_detour():
    g = grid_from(["......",
                   ".####.",
                   ".#....",
                   ".#....",
                   "......"])
    a, b = (0.25, 0.25), (0.25, 0.45)
    d = astar_distance(g, a, b)
    assert abs(d - dijkstra_oracle(g, a, b)) <= 1e-9
    assert d > 0.2 + 1e-9  # straight up is walled off


def test_astar_unreachable():
    g = grid_from(["..#.."])
    assert astar_distance(g, (0.05, 0.05), (0.45, 0.05)) == math.inf
    assert astar_path(g, (0.05, 0.05), (0.45, 0.05)) is None


def test_astar_requires_free_start():
    g = grid_from(["#.."])
    with pytest.raises(GridError):
        astar_distance(g, (0.05, 0.05), (0.25, 0.05))


def test_astar_and_distance_field_match_dijkstra():
    rng = np.random.default_rng(1)
    for _ in range(50):
        g = random_grid(rng)
        a = random_free_point(rng, g)
        b = random_free_point(rng, g)
        ref = dijkstra_oracle(g, a, b)
        got = astar_distance(g, a, b)
        assert got == ref or abs(got - ref) <= 1e-9
        field_d = distance_field(g, [a])[0]
        ix, iy = g.world_to_cell(*b)
        fd = field_d[iy * g.width + ix]
        assert fd == ref or abs(fd - ref) <= 1e-9
        if math.isfinite(ref):
            ca, cb = g.cell_to_world(*g.world_to_cell(*a)), g.cell_to_world(*g.world_to_cell(*b))
            assert got >= math.dist(ca, cb) - 1e-9


def test_astar_path_is_contiguous():
    rng = np.random.default_rng(4)
    g = random_grid(rng, p_occ=0.2)
    a, b = random_free_point(rng, g), random_free_point(rng, g)
    path = astar_path(g, a, b)
    if path is None:
        pytest.skip("unreachable pair")
    for p, q in zip(path[:-1], path[1:]):
        assert max(abs(p[0] - q[0]), abs(p[1] - q[1])) <= 0.1 + 1e-9
        assert g.is_free(*q)


def test_shortcut_path_keeps_visibility():
    g = grid_from(["......",
                   "..##..",
                   "......"])
    wps = [(x + 0.05, 0.05) for x in np.arange(0.1, 0.6, 0.1)] + [(0.55, 0.25)]
    out = shortcut_path(g, (0.05, 0.05), wps)
    assert out[-1] == (0.55, 0.25)
    cur = (0.05, 0.05)
    for p in out:
        assert segment_free(g, cur, p)
        cur = p


def test_nearest_free_point():
    g = grid_from(["###", "#.#", "###"])
    assert nearest_free_point(g, (0.05, 0.05), 0.2) == pytest.approx((0.15, 0.15))
    assert nearest_free_point(g, (0.05, 0.05), 0.05) is None
