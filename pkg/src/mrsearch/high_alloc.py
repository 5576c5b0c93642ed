"""HIGH task allocation: hierarchical reward, weighted task sampling, optimal matching."""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Sequence

import numpy as np

from .world import Geofence, OccupancyGrid, astar_distance, distance_field, nearest_free_point, \
    path_from_predecessors, raycast, unknown_fraction

SAMPLE_FLOOR = 1e-6
GOAL_SNAP = 0.5  # meters searched for a FREE cell when a task sits off free space


class TaskKind(str, enum.Enum):
    EXPLORATION = "exploration"
    COVERAGE = "coverage"


@dataclass(frozen=True)
class Task:
    id: int
    kind: TaskKind
    x: float
    y: float
    gain: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.gain <= 1.0:
            raise ValueError(f"task gain must lie in [0, 1], got {self.gain}")

    @property
    def xy(self) -> tuple[float, float]:
        return (self.x, self.y)


class Agent(NamedTuple):
    """What the allocator needs to know about a robot: its id and map position."""
    id: int
    x: float
    y: float


@dataclass(frozen=True)
class RewardTerms:
    info: float
    weight: float
    utility: float
    distance: float
    reward: float


@dataclass
class AssignmentRound:
    tick: int
    assignments: dict[int, Optional[Task]] = field(default_factory=dict)
    terms: dict[int, RewardTerms] = field(default_factory=dict)
    proposals: list[Task] = field(default_factory=list)
    proposers: list[int] = field(default_factory=list)
    mapped_fraction: float = 0.0

    def assigned_tasks(self) -> list[Task]:
        return [t for t in self.assignments.values() if t is not None]

    def idle(self) -> list[int]:
        return sorted(r for r, t in self.assignments.items() if t is None)

    def log_records(self, policy: str = "high") -> list[dict]:
        out = []
        for rid in sorted(self.assignments):
            task = self.assignments[rid]
            if task is None:
                continue
            t = self.terms.get(rid)
            out.append({
                "tick": self.tick, "policy": policy, "robot": rid, "task": task.id,
                "kind": task.kind.value, "info": t.info if t else None, "weight": t.weight if t else None,
                "utility": t.utility if t else None, "distance": t.distance if t else None,
                "reward": t.reward if t else None, "mapped_fraction": self.mapped_fraction,
            })
        return out


# -- reward terms --------------------------------------------------------------


def utility(point: Task | Sequence[float], assigned: Sequence[Task | Sequence[float]],
            grid: OccupancyGrid, sensor_range: float) -> float:
    """1 unless some assigned task sees ``point``; then distance to the closest seen one, over sensor_range."""
    if sensor_range <= 0:
        raise ValueError("sensor_range must be positive")
    p = point.xy if isinstance(point, Task) else (float(point[0]), float(point[1]))
    best = math.inf
    for a in assigned:
        q = a.xy if isinstance(a, Task) else (float(a[0]), float(a[1]))
        if grid.contains(*p) and grid.contains(*q) and raycast(grid, p, q):
            best = min(best, math.hypot(p[0] - q[0], p[1] - q[1]))
    if best == math.inf:
        return 1.0
    return min(1.0, best) / sensor_range


def info_gain_coverage(point: Task | Sequence[float], pose_graph, camera_radius: float) -> float:
    if camera_radius <= 0:
        raise ValueError("camera_radius must be positive")
    p = point.xy if isinstance(point, Task) else point
    return min(pose_graph.nearest_distance(p) / camera_radius, 1.0)


def weights(mapped_area: float, fence: Geofence) -> tuple[float, float]:
    """(exploration weight, coverage weight) for the given mapped area."""
    wc = min(mapped_area / fence.area, 1.0)
    return 1.0 - wc, wc


def reward_terms(task: Task, robot_xy: Sequence[float], assigned: Sequence[Task], grid: OccupancyGrid,
                 pose_graph, utility_scale: float, sensor_range: float, camera_radius: float, fence: Geofence,
                 distance: Optional[float] = None, mapped_area: Optional[float] = None) -> RewardTerms:
    """All terms of the hierarchical reward for one task and robot.

    ``distance`` may carry a precomputed path length (meters); otherwise it is
    the A* distance on ``grid``. Unreachable tasks score -inf.
    """
    a = grid.mapped_area() if mapped_area is None else mapped_area
    wf, wc = weights(a, fence)
    if task.kind is TaskKind.EXPLORATION:
        info = unknown_fraction(grid, task.xy, sensor_range) if grid.contains(*task.xy) else 0.0
        w = wf
    else:
        info = info_gain_coverage(task, pose_graph, camera_radius)
        w = wc
    if distance is None:
        distance = task_distance(grid, robot_xy, task)
    u = utility(task, assigned, grid, sensor_range)
    if math.isinf(distance):
        return RewardTerms(info, w, u, distance, -math.inf)
    return RewardTerms(info, w, u, distance, info * w * (utility_scale * u - distance))


def reward(task: Task, robot_xy: Sequence[float], assigned: Sequence[Task], grid: OccupancyGrid,
           pose_graph, utility_scale: float, sensor_range: float, camera_radius: float, fence: Geofence,
           distance: Optional[float] = None) -> float:
    return reward_terms(task, robot_xy, assigned, grid, pose_graph, utility_scale, sensor_range, camera_radius, fence,
                        distance).reward


def task_goal(grid: OccupancyGrid, p: Sequence[float]) -> Optional[tuple[float, float]]:
    """The FREE point a robot drives to for a task at ``p``."""
    if not grid.contains(p[0], p[1]):
        return None
    return nearest_free_point(grid, p, GOAL_SNAP)


def task_distance(grid: OccupancyGrid, robot_xy: Sequence[float], task: Task) -> float:
    goal = task_goal(grid, task.xy)
    if goal is None or not grid.contains(*robot_xy) or not grid.is_free(*robot_xy):
        return math.inf
    return astar_distance(grid, robot_xy, goal)


class DistanceOracle:
    """Path lengths from a fixed set of robots to arbitrary goals, one Dijkstra per robot."""

    def __init__(self, grid: OccupancyGrid, agents: Sequence[Agent], predecessors: bool = False):
        self.grid = grid
        starts = []
        for ag in agents:
            p = (ag.x, ag.y)
            if not (grid.contains(*p) and grid.is_free(*p)):
                p = nearest_free_point(grid, p, GOAL_SNAP) if grid.contains(*p) else None
            starts.append(p if p is not None else (math.nan, math.nan))
        self._rows = {ag.id: i for i, ag in enumerate(agents)}
        valid = [s if not math.isnan(s[0]) else (-1e9, -1e9) for s in starts]
        self.pred = None
        if predecessors:
            self.field, self.pred = distance_field(grid, valid, predecessors=True)
        else:
            self.field = distance_field(grid, valid)
        self._starts = dict(zip(self._rows, starts))
        self._goal_cache: dict[tuple[float, float], Optional[int]] = {}

    def goal_flat(self, p: Sequence[float]) -> Optional[int]:
        key = (float(p[0]), float(p[1]))
        if key not in self._goal_cache:
            g = task_goal(self.grid, key)
            flat = None
            if g is not None:
                ix, iy = self.grid.world_to_cell(*g)
                flat = iy * self.grid.width + ix
            self._goal_cache[key] = flat
        return self._goal_cache[key]

    def distance(self, robot_id: int, p: Sequence[float]) -> float:
        flat = self.goal_flat(p)
        if flat is None:
            return math.inf
        return float(self.field[self._rows[robot_id], flat])

    def path(self, robot_id: int, p: Sequence[float]) -> list[tuple[float, float]]:
        """Waypoints (cell centers) from the robot's start cell to the goal for ``p``."""
        if self.pred is None:
            raise ValueError("oracle was built without predecessors")
        flat = self.goal_flat(p)
        if flat is None or math.isinf(self.distance(robot_id, p)):
            return []
        return path_from_predecessors(self.grid, self.pred[self._rows[robot_id]], flat)


# -- sampling and matching -----------------------------------------------------


def sample_tasks(tasks: Sequence[Task], size: int, rng: np.random.Generator) -> list[Task]:
    """Gain-weighted sampling without replacement."""
    if size < 1:
        raise ValueError("sample size must be >= 1")
    tasks = list(tasks)
    if len(tasks) <= size:
        return tasks
    w = np.array([t.gain for t in tasks], dtype=float) + SAMPLE_FLOOR
    idx = rng.choice(len(tasks), size=size, replace=False, p=w / w.sum())
    return [tasks[int(i)] for i in idx]


def _lsap(cost: list[list[float]]) -> list[int]:
    """Shortest augmenting path assignment for rows <= columns; returns column per row."""
    nr, nc = len(cost), len(cost[0])
    u = [0.0] * nr
    v = [0.0] * nc
    col4row = [-1] * nr
    row4col = [-1] * nc
    for cur in range(nr):
        shortest = [math.inf] * nc
        path = [-1] * nc
        in_rows = [False] * nr
        in_cols = [False] * nc
        remaining = list(range(nc - 1, -1, -1))
        min_val = 0.0
        i = cur
        sink = -1
        while sink < 0:
            in_rows[i] = True
            lowest, index = math.inf, -1
            ci = cost[i]
            for it, j in enumerate(remaining):
                r = min_val + ci[j] - u[i] - v[j]
                if r < shortest[j]:
                    path[j] = i
                    shortest[j] = r
                if shortest[j] < lowest or (shortest[j] == lowest and row4col[j] == -1):
                    lowest, index = shortest[j], it
            min_val = lowest
            if min_val == math.inf:
                raise ValueError("cost matrix is infeasible")
            j = remaining[index]
            if row4col[j] == -1:
                sink = j
            else:
                i = row4col[j]
            in_cols[j] = True
            remaining[index] = remaining[-1]
            remaining.pop()
        u[cur] += min_val
        for r in range(nr):
            if in_rows[r] and r != cur:
                u[r] += min_val - shortest[col4row[r]]
        for c in range(nc):
            if in_cols[c]:
                v[c] -= min_val - shortest[c]
        j = sink
        while True:
            i = path[j]
            row4col[j] = i
            col4row[i], j = j, col4row[i]
            if i == cur:
                break
    return col4row


def jv_assign(cost, sentinel: float = math.inf) -> list[tuple[int, int]]:
    """Minimum-cost rectangular assignment; returns sorted (row, col) pairs.

    Entries equal to ``sentinel`` (or non-finite) are forbidden. They are priced
    high enough that the solver first maximises the number of allowed pairs, then
    dropped from the result.
    """
    c = np.asarray(cost, dtype=float)
    if c.size == 0:
        return []
    if c.ndim != 2:
        raise ValueError("cost must be a 2-D matrix")
    nr, nc = c.shape
    if nr == 0 or nc == 0:
        return []
    banned = ~np.isfinite(c) | (c == sentinel)
    if banned.all():
        return []
    ok = c[~banned]
    big = (float(np.abs(ok).max()) + 1.0) * (min(nr, nc) + 1) * 2.0
    work = np.where(banned, big, c)
    transposed = nr > nc
    if transposed:
        work = work.T
    cols = _lsap(work.tolist())
    pairs = [(r, cl) for r, cl in enumerate(cols)]
    if transposed:
        pairs = [(cl, r) for r, cl in pairs]
    return sorted((r, cl) for r, cl in pairs if not banned[r, cl])


# -- allocation ----------------------------------------------------------------


def _pick(scored: list[tuple[Task, RewardTerms]]) -> Optional[tuple[Task, RewardTerms]]:
    """Highest reward, preferring tasks that carry weighted information; ties to lower id."""
    best, best_key = None, None
    for task, t in scored:
        if math.isinf(t.distance):
            continue
        tier = 2 if t.info * t.weight > 0 else (1 if t.info > 0 else 0)
        key = (tier, t.reward, -task.id)
        if best_key is None or key > best_key:
            best, best_key = (task, t), key
    return best


def allocate(robots: Sequence[Agent], tasks: Sequence[Task], grid: OccupancyGrid, pose_graph,
             utility_scale: float, sensor_range: float, camera_radius: float, rng: np.random.Generator, fence: Geofence,
             sample_size: int = 15, tick: int = 0,
             distances: Optional[DistanceOracle] = None) -> AssignmentRound:
    """One HIGH assignment round.

    Robots take turns (in the given order) proposing the best unproposed task
    from a fresh gain-weighted sample; proposals are then re-matched to robots
    minimising total path length.
    """
    if not robots:
        raise ValueError("allocate needs at least one robot")
    a = grid.mapped_area()
    rnd = AssignmentRound(tick, {r.id: None for r in robots}, mapped_fraction=min(a / fence.area, 1.0))
    if not tasks:
        return rnd
    dist = distances or DistanceOracle(grid, robots)
    remaining = sorted(tasks, key=lambda t: t.id)
    proposals: list[Task] = []
    proposal_terms: dict[int, RewardTerms] = {}
    for r in robots:
        if not remaining:
            break
        sample = sample_tasks(remaining, sample_size, rng)
        scored = [(t, reward_terms(t, (r.x, r.y), proposals, grid, pose_graph, utility_scale, sensor_range,
                                   camera_radius, fence, dist.distance(r.id, t.xy), a))
                  for t in sorted(sample, key=lambda t: t.id)]
        pick = _pick(scored)
        if pick is None:
            continue
        proposals.append(pick[0])
        rnd.proposers.append(r.id)
        proposal_terms[pick[0].id] = pick[1]
        remaining = [t for t in remaining if t.id != pick[0].id]
    rnd.proposals = proposals
    if not proposals:
        return rnd
    cost = [[dist.distance(r.id, t.xy) for t in proposals] for r in robots]
    for ri, ci in jv_assign(cost):
        r, t = robots[ri], proposals[ci]
        p = proposal_terms[t.id]
        d = cost[ri][ci]
        rnd.assignments[r.id] = t
        rnd.terms[r.id] = RewardTerms(p.info, p.weight, p.utility, d,
                                      p.info * p.weight * (utility_scale * p.utility - d))
    return rnd


def round_robin_cost(rnd: AssignmentRound, distances: DistanceOracle) -> float:
    """Total path length if every robot took its own proposal (the pre-matching plan)."""
    return sum(distances.distance(rid, t.xy) for rid, t in zip(rnd.proposers, rnd.proposals))
