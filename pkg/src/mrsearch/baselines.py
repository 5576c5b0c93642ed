"""Competitor policies: greedy NBVP-style allocation and a single global RRT explorer."""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .frontier_filter import FrontierNode, filter_exploration_nodes
from .geometry import Pose2D
from .high_alloc import Agent, AssignmentRound, DistanceOracle, RewardTerms, Task, TaskKind
from .pgart import Expansion, TaskGraph, sample_free, steer
from .world import OccupancyGrid, segment_clear

NBVP_DISCOUNT = 0.5  # 1/m


class PolicyKind(str, enum.Enum):
    HIGH = "high"
    NBVP_GREEDY = "nbvp"
    RRT_EXPLORATION = "rrt"

    @classmethod
    def parse(cls, text: str) -> PolicyKind:
        for p in cls:
            if text.strip().lower() in (p.value, p.name.lower()):
                return p
        raise ValueError(f"unknown policy {text!r}")


def nbvp_allocate(robots: Sequence[Agent], tasks: Sequence[Task], grid: OccupancyGrid,
                  discount: float = NBVP_DISCOUNT, tick: int = 0,
                  distances: Optional[DistanceOracle] = None) -> AssignmentRound:
    """Greedy allocation by distance-discounted gain, with every task kind treated alike.

    Repeatedly takes the best remaining (robot, task) pair by
    ``gain * exp(-discount * D)``; ties go to the lower task id, then robot id.
    """
    if not robots:
        raise ValueError("allocation needs at least one robot")
    rnd = AssignmentRound(tick, {r.id: None for r in robots})
    if not tasks:
        return rnd
    dist = distances or DistanceOracle(grid, robots)
    scored = []
    for t in tasks:
        for r in robots:
            d = dist.distance(r.id, t.xy)
            if math.isinf(d):
                continue
            scored.append((-(t.gain * math.exp(-discount * d)), t.id, r.id, t, d))
    scored.sort(key=lambda s: s[:3])
    used_tasks: set[int] = set()
    for neg, tid, rid, t, d in scored:
        if rnd.assignments[rid] is not None or tid in used_tasks:
            continue
        rnd.assignments[rid] = t
        rnd.terms[rid] = RewardTerms(t.gain, 1.0, 1.0, d, -neg)
        rnd.proposals.append(t)
        rnd.proposers.append(rid)
        used_tasks.add(tid)
    return rnd


@dataclass(frozen=True)
class _Root:
    id: int
    pose: Pose2D


class GlobalRRT(TaskGraph):
    """One RRT in the map frame rooted at the mission origin.

    It never moves with SLAM corrections, so after a loop closure its edges are
    checked against the re-rendered map and pruned like any other.
    """

    def __init__(self, origin: Sequence[float], step_size: float = 1.0):
        super().__init__(step_size)
        self.add_task_vertex(_Root(0, Pose2D(float(origin[0]), float(origin[1]), 0.0)))
        self.previous_frontiers: list[FrontierNode] = []

    @property
    def tree(self):
        return self.vertices[0].tree

    def expand(self, grid: OccupancyGrid, rng: np.random.Generator,
               step_size: Optional[float] = None, sample=None) -> Optional[Expansion]:
        step_size = self.step_size if step_size is None else step_size
        if sample is None:
            sample = sample_free(grid, rng)
            if sample is None:
                return None
        tv, near = self.closest_node(*sample)
        new = steer(near.wx, near.wy, sample[0], sample[1], step_size)
        if new != (near.wx, near.wy) and segment_clear(grid, (near.wx, near.wy), new):
            node = self._add_node(tv, near, new[0], new[1], grid)
            return Expansion(tv.id, node.id, False)
        return None

    def on_poses_corrected(self, changes) -> None:
        pass


@dataclass
class ExplorationStep:
    frontiers: list[FrontierNode] = field(default_factory=list)
    pruned: int = 0
    expanded: int = 0


def rrt_exploration_step(tree: GlobalRRT, grid: OccupancyGrid, rng: np.random.Generator,
                         budget: int, sensor_range: float, min_frontier_gain: float,
                         bandwidth: float) -> ExplorationStep:
    """Grow the global tree, prune it against the current map, and refresh frontiers."""
    step = ExplorationStep()
    for _ in range(budget):
        if tree.expand(grid, rng) is not None:
            step.expanded += 1
    step.pruned = tree.prune(grid)
    cands = tree.take_frontier_candidates()
    step.frontiers = filter_exploration_nodes(cands, tree.previous_frontiers, sensor_range,
                                              min_frontier_gain, bandwidth, grid)
    tree.previous_frontiers = step.frontiers
    return step


def rrt_allocate(robots: Sequence[Agent], frontiers: Sequence[FrontierNode], grid: OccupancyGrid,
                 discount: float = NBVP_DISCOUNT, tick: int = 0, first_id: int = 0,
                 distances: Optional[DistanceOracle] = None) -> AssignmentRound:
    """Frontier-only greedy assignment for the global RRT explorer."""
    tasks = [Task(first_id + i, TaskKind.EXPLORATION, f.x, f.y, min(max(f.gain, 0.0), 1.0))
             for i, f in enumerate(frontiers)]
    return nbvp_allocate(robots, tasks, grid, discount, tick, distances)
