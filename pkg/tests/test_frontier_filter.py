import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mrsearch.frontier_filter import filter_exploration_nodes, information_gain_frontier, mean_shift
from mrsearch.world import FREE, OCCUPIED, UNKNOWN, OccupancyGrid, unknown_fraction


def oracle_mean_shift(points, bw):
    """Point-by-point flat-kernel mean shift with plain loops."""
    pts = [tuple(p) for p in points]
    modes = []
    for p in pts:
        x, y = p
        for _ in range(100):
            near = [q for q in pts if (q[0] - x) ** 2 + (q[1] - y) ** 2 <= bw * bw]
            nx = sum(q[0] for q in near) / len(near)
            ny = sum(q[1] for q in near) / len(near)
            moved = math.hypot(nx - x, ny - y)
            x, y = nx, ny
            if moved < 1e-4:
                break
        modes.append((x, y))
    groups, reps = [], []
    for i, m in enumerate(modes):
        for g, r in enumerate(reps):
            if (m[0] - r[0]) ** 2 + (m[1] - r[1]) ** 2 <= (bw / 2) ** 2:
                groups[g].append(i)
                break
        else:
            groups.append([i])
            reps.append(m)
    return [(sum(modes[i][0] for i in g) / len(g), sum(modes[i][1] for i in g) / len(g)) for g in groups]


def half_unknown(w=100, h=100, split=50):
    g = OccupancyGrid.filled(w, h, 0.1, FREE)
    g.cells[:, split:] = UNKNOWN
    return g


# -- information gain ----------------------------------------------------------------


def test_gain_extremes_and_boundary():
    free = OccupancyGrid.filled(100, 100, 0.1, FREE)
    unk = OccupancyGrid.filled(100, 100, 0.1, UNKNOWN)
    assert information_gain_frontier((5.0, 5.0), free, 4.0) == 0.0
    assert information_gain_frontier((5.0, 5.0), unk, 4.0) == 1.0
    assert abs(information_gain_frontier((5.0, 5.0), half_unknown(), 4.0) - 0.5) <= 0.05


def test_gain_delegates_to_unknown_fraction():
    rng = np.random.default_rng(0)
    g = OccupancyGrid.filled(60, 60, 0.1, FREE)
    g.cells[rng.random(g.cells.shape) < 0.5] = UNKNOWN
    for _ in range(20):
        p = rng.uniform(0, 6, 2)
        assert information_gain_frontier(p, g, 1.5) == unknown_fraction(g, p, 1.5)


# -- mean shift -----------------------------------------------------------------------


def test_mean_shift_single_point():
    c, lab = mean_shift([(1.0, 2.0)], 1.0)
    assert c.tolist() == [[1.0, 2.0]] and lab.tolist() == [0]


def test_mean_shift_far_points_stay_apart():
    c, lab = mean_shift([(0.0, 0.0), (10.0, 0.0)], 1.0)
    assert sorted(map(tuple, c.tolist())) == [(0.0, 0.0), (10.0, 0.0)]
    assert lab[0] != lab[1]


def test_mean_shift_two_blobs():
    rng = np.random.default_rng(1)
    eps = 1.0
    a = rng.normal((0.0, 0.0), eps / 4, (20, 2))
    b = rng.normal((5 * eps, 0.0), eps / 4, (20, 2))
    c, lab = mean_shift(np.vstack([a, b]), eps)
    assert len(c) == 2
    for blob in (a, b):
        assert min(np.hypot(*(c - blob.mean(axis=0)).T)) <= eps / 2
    assert len(set(lab[:20])) == 1 and len(set(lab[20:])) == 1


def test_mean_shift_matches_oracle():
    rng = np.random.default_rng(2)
    for _ in range(20):
        pts = rng.uniform(0, 6, (int(rng.integers(1, 25)), 2))
        bw = rng.uniform(0.5, 2.0)
        c, lab = mean_shift(pts, bw)
        ref = np.array(oracle_mean_shift(pts, bw))
        assert c.shape == ref.shape
        assert np.allclose(c, ref, atol=1e-9)
        d = np.hypot(pts[:, None, 0] - c[None, :, 0], pts[:, None, 1] - c[None, :, 1])
        assert (lab == d.argmin(axis=1)).all()


def test_mean_shift_rejects_bad_bandwidth():
    with pytest.raises(ValueError):
        mean_shift([(0, 0)], 0.0)


# -- filter ----------------------------------------------------------------------------


def test_zero_gain_candidates_dropped():
    g = OccupancyGrid.filled(100, 100, 0.1, FREE)
    assert filter_exploration_nodes([(1, 1), (5, 5)], [], 4.0, 0.15, 1.5, g) == []


def test_empty_input():
    assert filter_exploration_nodes([], [], 4.0, 0.15, 1.5, half_unknown()) == []


def test_close_candidates_single_centroid():
    g = half_unknown()
    cands = [(4.9, 5.0 + 0.1 * i) for i in range(5)]
    out = filter_exploration_nodes(cands, [], 4.0, 0.15, 1.5, g)
    assert len(out) == 1
    assert out[0].x == pytest.approx(4.9) and out[0].y == pytest.approx(5.2)


def test_wall_splits_hidden_member():
    g = OccupancyGrid.filled(100, 100, 0.1, UNKNOWN)
    g.cells[:, :50] = FREE
    # wall across y = 5 from x = 3 up to the unknown edge
    g.cells[49:51, 30:50] = OCCUPIED
    cands = [(4.95, 4.2), (4.95, 4.4), (4.95, 5.6)]
    out = filter_exploration_nodes(cands, [], 2.0, 0.15, 1.5, g)
    got = sorted((round(n.x, 9), round(n.y, 9)) for n in out)
    assert got == [(4.95, round((4.2 + 4.4 + 5.6) / 3, 9)), (4.95, 5.6)]


def test_centroid_in_obstacle_replaced_by_member():
    g = OccupancyGrid.filled(100, 100, 0.1, UNKNOWN)
    g.cells[:, :50] = FREE
    g.cells[48:53, 45:50] = OCCUPIED   # the would-be centroid lands here
    out = filter_exploration_nodes([(4.95, 4.5), (4.95, 5.5)], [], 2.0, 0.15, 1.5, g)
    assert len(out) >= 1
    for n in out:
        assert g.state_at(n.x, n.y) != OCCUPIED
        assert n.gain >= 0.15
        assert (n.x, n.y) in [(4.95, 4.5), (4.95, 5.5)]


def test_old_frontiers_in_mapped_space_removed():
    g = half_unknown()
    prev = filter_exploration_nodes([(4.9, 5.0)], [], 4.0, 0.15, 1.5, g)
    assert len(prev) == 1
    g.cells[:, :] = FREE
    assert filter_exploration_nodes([], prev, 4.0, 0.15, 1.5, g) == []


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000))
def test_outputs_clear_threshold_and_rerun_is_fixed_point(seed):
    rng = np.random.default_rng(seed)
    g = OccupancyGrid.filled(80, 80, 0.1, FREE)
    u = rng.random(g.cells.shape)
    g.cells[u < 0.4] = UNKNOWN
    g.cells[u > 0.97] = OCCUPIED
    cands = [tuple(rng.uniform(0.2, 7.8, 2)) for _ in range(int(rng.integers(0, 30)))]
    out = filter_exploration_nodes(cands, [], 1.5, 0.15, 1.0, g)
    assert len(out) <= len(cands)
    for n in out:
        assert 0.15 <= n.gain <= 1.0
        assert n.gain == information_gain_frontier(n.xy, g, 1.5)
    again = filter_exploration_nodes([], out, 1.5, 0.15, 1.0, g)
    assert sorted(again, key=lambda n: n.xy) == sorted(out, key=lambda n: n.xy)
