"""Scripted loop-closure scenario: one robot drives around a corridor loop with drift.

When it returns to the start, its drifted map holds two copies of the first
corridor. A loop closure then snaps every vertex back onto its true pose and the
map is replayed. The pose-graph rooted planner and a single global RRT grow on the
same map throughout; afterwards their pruned-node fractions are compared.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from ..baselines import GlobalRRT
from ..geometry import Pose2D
from ..pgart import TaskGraph
from ..slam_sim import DriftModel, LaserModel, LoopClosureEvent, SlamSim
from ..world import GroundTruthWorld, load_world
from .config import WORLDS_DIR

# around the central block of doubled_corridor.world, ending past the start
CORRIDOR_ROUTE = [(0.7, 0.7), (13.3, 0.7), (13.3, 3.3), (0.7, 3.3), (0.7, 0.7), (3.0, 0.7)]


@dataclass
class PruningTrial:
    seed: int
    pgart_created: int
    pgart_pruned: int
    rrt_created: int
    rrt_pruned: int
    drift_at_closure: float     # |xy offset| of the last vertex before correction, m
    corrected_vertices: int

    @property
    def pgart_fraction(self) -> float:
        return self.pgart_pruned / self.pgart_created if self.pgart_created else 0.0

    @property
    def rrt_fraction(self) -> float:
        return self.rrt_pruned / self.rrt_created if self.rrt_created else 0.0

    def as_dict(self) -> dict:
        return {"seed": self.seed, "pgart_created": self.pgart_created,
                "pgart_pruned": self.pgart_pruned, "pgart_fraction": self.pgart_fraction,
                "rrt_created": self.rrt_created, "rrt_pruned": self.rrt_pruned,
                "rrt_fraction": self.rrt_fraction, "drift_at_closure": self.drift_at_closure,
                "corrected_vertices": self.corrected_vertices}


def route_poses(route: Sequence[Sequence[float]], step: float) -> list[Pose2D]:
    """Sample a polyline every ``step`` meters, heading along the current leg."""
    poses = []
    for (ax, ay), (bx, by) in zip(route[:-1], route[1:]):
        length = math.hypot(bx - ax, by - ay)
        th = math.atan2(by - ay, bx - ax)
        n = max(1, int(math.ceil(length / step)))
        for i in range(n):
            f = i / n
            poses.append(Pose2D(ax + f * (bx - ax), ay + f * (by - ay), th))
    bx, by = route[-1]
    poses.append(Pose2D(bx, by, poses[-1].theta if poses else 0.0))
    return poses


def exact_correction(slam: SlamSim, truth_poses: dict[int, Pose2D], tick: int = 0) -> LoopClosureEvent:
    """Per-vertex transforms that move every drifted vertex exactly onto its true pose."""
    corr = {}
    for v in slam.graph.vertices:
        true = truth_poses[v.id]
        corr[v.id] = true.compose(v.pose.inverse())
    return LoopClosureEvent(tick, 0, len(slam.graph) - 1, corr)


def doubled_corridor_trial(seed: int, world: Optional[GroundTruthWorld] = None,
                           drift_bias: float = 0.01, drift_sigma: float = 0.005,
                           budget: int = 40, step: float = 0.1, step_size: float = 1.0,
                           route: Sequence[Sequence[float]] = CORRIDOR_ROUTE) -> PruningTrial:
    """Run one paired trial; both planners see the same map and the same budget.

    ``drift_bias`` pushes the estimate towards +y by that many meters per meter
    travelled, so by the end of the loop the first corridor is mapped twice.
    """
    world = world or load_world(WORLDS_DIR / "doubled_corridor.world")
    slam = SlamSim(world.grid, LaserModel())
    slam.register_robot(0, DriftModel((0.0, drift_bias, 0.0), (drift_sigma, drift_sigma, 0.0), seed=seed))
    pgart = TaskGraph(step_size)
    slam.vertex_listeners.append(pgart.add_task_vertex)
    slam.correction_listeners.append(pgart.on_poses_corrected)
    rrt = GlobalRRT(world.origin, step_size)
    rng_p = np.random.default_rng([seed, 1])
    rng_r = np.random.default_rng([seed, 2])

    truth: dict[int, Pose2D] = {}
    for tick, pose in enumerate(route_poses(route, step)):
        v = slam.add_pose(0, pose, stamp=tick, force=tick == 0)
        if v is None:
            continue
        truth[v.id] = pose
        grid = slam.map
        for _ in range(budget):
            pgart.expand(grid, rng_p)
            rrt.expand(grid, rng_r)
        pgart.prune(grid)
        rrt.prune(grid)

    last = slam.graph.vertices[-1]
    drift = math.hypot(last.pose.x - truth[last.id].x, last.pose.y - truth[last.id].y)
    changes = slam.apply_loop_closure(exact_correction(slam, truth))
    pgart.prune(slam.map)
    rrt.prune(slam.map)
    return PruningTrial(seed, pgart.created, pgart.pruned, rrt.created, rrt.pruned, drift, len(changes))


def pruning_batch(seeds: Sequence[int], **kwargs) -> list[PruningTrial]:
    return [doubled_corridor_trial(s, **kwargs) for s in seeds]
