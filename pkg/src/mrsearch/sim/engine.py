"""Deterministic mission loop: motion, sensing, planning, allocation and metrics."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from ..baselines import GlobalRRT, PolicyKind, nbvp_allocate, rrt_exploration_step
from ..coverage_filter import CoverageFilter
from ..frontier_filter import FrontierNode, filter_exploration_nodes
from ..geometry import Pose2D
from ..high_alloc import Agent, DistanceOracle, Task, TaskKind, allocate, info_gain_coverage
from ..pgart import TaskGraph
from ..slam_sim import DriftModel, LaserModel, LoopClosureEvent, SlamSim
from ..world import FREE, UNKNOWN, GroundTruthWorld, load_world, raycast, shortcut_path, \
    visible_cells
from .config import MissionConfig
from .report import MissionReport

ARRIVAL_TOL = 1e-6
COVER_STEP = 0.1  # m of travel between camera footprints
SAME_TASK_TOL = 0.25  # m; a re-issued goal closer than this to the old one is not a new assignment


@dataclass
class Robot:
    id: int
    pose: Pose2D
    path: list[tuple[float, float]] = field(default_factory=list)
    task: Optional[Task] = None
    travelled: float = 0.0
    last_cover: Optional[tuple[float, float]] = None

    @property
    def xy(self) -> tuple[float, float]:
        return self.pose.xy


def advance(pose: Pose2D, path: list[tuple[float, float]], max_dist: float) -> tuple[Pose2D, float]:
    """Move along ``path`` (consumed in place) by at most ``max_dist``; returns (pose, moved)."""
    x, y, th = pose.x, pose.y, pose.theta
    left = max_dist
    moved = 0.0
    while path and left > 0:
        wx, wy = path[0]
        d = math.hypot(wx - x, wy - y)
        if d <= ARRIVAL_TOL:
            path.pop(0)
            continue
        th = math.atan2(wy - y, wx - x)
        if d <= left:
            x, y = wx, wy
            left -= d
            moved += d
            path.pop(0)
        else:
            x += (wx - x) * left / d
            y += (wy - y) * left / d
            moved += left
            left = 0.0
    return Pose2D(x, y, th), moved


def compute_sst(detection_times: Sequence[float], n_victims: int, miss_penalty: float) -> float:
    """Sum of detection times plus ``miss_penalty`` for each victim never found."""
    if miss_penalty < 0:
        raise ValueError("miss_penalty must be non-negative")
    found = len(detection_times)
    if found > n_victims:
        raise ValueError("more detections than victims")
    return float(sum(detection_times)) + (n_victims - found) * miss_penalty


def coverage_efficiency(covered_area: float, duration: float) -> float:
    if duration <= 0:
        raise ValueError("duration must be positive")
    return covered_area / duration


def victim_visible(truth, robot_xy, victim_xy, camera_radius: float) -> bool:
    if math.hypot(victim_xy[0] - robot_xy[0], victim_xy[1] - robot_xy[1]) > camera_radius:
        return False
    return raycast(truth, robot_xy, victim_xy)


def _is_new(prev: Optional[Task], task: Task) -> bool:
    """Whether ``task`` is a fresh assignment rather than the robot's previous goal re-issued.

    Task ids are regenerated each planner step, so sameness is judged by kind and position.
    """
    if prev is None or prev.kind is not task.kind:
        return True
    return math.hypot(prev.x - task.x, prev.y - task.y) > SAME_TASK_TOL


class Mission:
    """All mutable state of one seeded mission."""

    def __init__(self, cfg: MissionConfig, world: Optional[GroundTruthWorld] = None):
        self.cfg = cfg
        self.world = world if world is not None else load_world(cfg.world_path())
        if cfg.robots > len(self.world.robot_starts):
            raise ValueError(f"world has {len(self.world.robot_starts)} robot starts, "
                             f"config asks for {cfg.robots}")
        self.rng = np.random.default_rng(cfg.seed)
        truth = self.world.grid
        self.truth = truth
        laser = LaserModel(cfg.sensor_range, math.radians(cfg.laser_fov_deg), cfg.laser_rays)
        self.slam = SlamSim(truth, laser, spacing=cfg.vertex_spacing)
        self.robots = [Robot(i, self.world.robot_starts[i]) for i in range(cfg.robots)]
        for r in self.robots:
            drift = DriftModel((cfg.drift_bias, 0.0, 0.0), (cfg.drift_sigma, cfg.drift_sigma, 0.0),
                               seed=cfg.seed * 1000 + r.id)
            self.slam.register_robot(r.id, drift)

        self.policy = cfg.policy
        if self.policy is PolicyKind.RRT_EXPLORATION:
            self.planner = GlobalRRT(self.world.origin, cfg.step_size)
        else:
            self.planner = TaskGraph(cfg.step_size)
            self.slam.vertex_listeners.append(self.planner.add_task_vertex)
            self.slam.correction_listeners.append(self.planner.on_poses_corrected)
        self.coverage = CoverageFilter(cfg.visibility_cap, cfg.min_view_area, cfg.max_coverage_tasks,
                                       visited_radius=cfg.coverage_min_gain * cfg.camera_radius)
        self.frontiers: list[FrontierNode] = []
        self.tasks: list[Task] = []
        self._task_seq = 0

        self.covered = np.zeros(truth.cells.shape, dtype=bool)
        fence = self.world.geofence
        cx = truth.origin[0] + (np.arange(truth.width) + 0.5) * truth.resolution
        cy = truth.origin[1] + (np.arange(truth.height) + 0.5) * truth.resolution
        inside = ((cx[None, :] >= fence.x1) & (cx[None, :] <= fence.x2)
                  & (cy[:, None] >= fence.y1) & (cy[:, None] <= fence.y2))
        self.countable = inside & (truth.cells == FREE)
        self.free_area = float(self.countable.sum()) * truth.resolution ** 2

        self.tick = 0
        self.time = 0.0
        self.detections: dict[int, tuple[float, int]] = {}
        self.rounds: list[dict] = []
        self.events: list[dict] = []
        self.series: list[tuple[float, float, float]] = []
        self._next_plan = 0.0
        self._next_alloc = 0.0
        self._alloc_due = False
        self._closures = sorted(cfg.loop_closures, key=lambda lc: (lc.tick, lc.first))
        self.end_reason: Optional[str] = None

        for r in self.robots:
            self.slam.add_pose(r.id, r.pose, stamp=0, force=True)
            self._cover(r)
        self._detect()
        self._record()

    # -- sensing ---------------------------------------------------------

    def _cover(self, r: Robot) -> None:
        ix, iy = visible_cells(self.truth, r.xy, self.cfg.camera_radius, self.cfg.camera_rays)
        if ix.size:
            known = self.slam.map.cells[iy, ix] != UNKNOWN
            self.covered[iy[known], ix[known]] = True
        r.last_cover = r.xy

    def covered_area(self) -> float:
        return float(np.count_nonzero(self.covered & self.countable)) * self.truth.resolution ** 2

    def explored_area(self) -> float:
        return self.slam.map.mapped_area()

    def _detect(self) -> list[int]:
        new = []
        for vi, v in enumerate(self.world.victims):
            if vi in self.detections:
                continue
            for r in self.robots:
                if victim_visible(self.truth, r.xy, v, self.cfg.camera_radius):
                    self.detections[vi] = (self.time, r.id)
                    new.append(vi)
                    self.events.append({"type": "victim", "tick": self.tick, "time": self.time,
                                        "victim": vi, "robot": r.id})
                    break
        return new

    def _record(self) -> None:
        if self.tick % self.cfg.series_every == 0:
            self.series.append((self.time, self.explored_area(), self.covered_area()))

    # -- planning --------------------------------------------------------

    def _map_xy(self, r: Robot) -> tuple[float, float]:
        return self.slam.estimate(r.id, r.pose).xy

    def _plan(self) -> None:
        cfg = self.cfg
        grid = self.slam.map
        if self.policy is PolicyKind.RRT_EXPLORATION:
            step = rrt_exploration_step(self.planner, grid, self.rng, cfg.expansion_budget,
                                        cfg.sensor_range, cfg.min_frontier_gain, cfg.bandwidth)
            self.frontiers = step.frontiers
            self.tasks = self._make_tasks(self.frontiers, [])
            return
        for _ in range(cfg.expansion_budget):
            self.planner.expand(grid, self.rng)
        self.planner.prune(grid)
        cands = self.planner.take_frontier_candidates()
        self.frontiers = filter_exploration_nodes(cands, self.frontiers, cfg.sensor_range,
                                                  cfg.min_frontier_gain, cfg.bandwidth, grid)
        cov = self.coverage.update(self.planner, grid, self.slam.graph.positions())
        self.tasks = self._make_tasks(self.frontiers, cov)

    def _make_tasks(self, frontiers, coverage) -> list[Task]:
        tasks = []
        for f in frontiers:
            tasks.append(Task(self._task_seq, TaskKind.EXPLORATION, f.x, f.y, min(max(f.gain, 0.0), 1.0)))
            self._task_seq += 1
        for c in coverage:
            gain = info_gain_coverage(c.xy, self.slam.graph, self.cfg.camera_radius)
            tasks.append(Task(self._task_seq, TaskKind.COVERAGE, c.x, c.y, gain))
            self._task_seq += 1
        return tasks

    def _allocate(self) -> None:
        cfg = self.cfg
        grid = self.slam.map
        agents = [Agent(r.id, *self._map_xy(r)) for r in self.robots]
        dist = DistanceOracle(grid, agents, predecessors=True)
        if self.policy is PolicyKind.HIGH:
            rnd = allocate(agents, self.tasks, grid, self.slam.graph, cfg.utility_scale, cfg.sensor_range,
                           cfg.camera_radius, self.rng, self.world.geofence, cfg.sample_size, self.tick, dist)
        elif self.policy is PolicyKind.NBVP_GREEDY:
            rnd = nbvp_allocate(agents, self.tasks, grid, cfg.nbvp_discount, self.tick, dist)
        else:
            rnd = nbvp_allocate(agents, self.tasks, grid, cfg.nbvp_discount, self.tick, dist)
        rnd.mapped_fraction = min(grid.mapped_area() / self.world.geofence.area, 1.0)
        prev = {r.id: r.task for r in self.robots}
        for rec in rnd.log_records(self.policy.value):
            rec["time"] = self.time
            rec["new"] = _is_new(prev[rec["robot"]], rnd.assignments[rec["robot"]])
            self.rounds.append(rec)
        for r in self.robots:
            task = rnd.assignments.get(r.id)
            r.task = task
            r.path = []
            if task is None:
                continue
            here = self._map_xy(r)
            path = dist.path(r.id, task.xy)
            # the first waypoint is the center of the cell the robot already occupies
            path = shortcut_path(grid, here, path[1:] if len(path) > 1 else path)
            off = np.array(here) - np.array(r.xy)
            r.path = [(px - off[0], py - off[1]) for px, py in path]
        self._alloc_due = False
        self._next_alloc = self.time + cfg.assignment_period

    # -- main loop -------------------------------------------------------

    def step(self, dt: Optional[float] = None) -> None:
        cfg = self.cfg
        dt = cfg.dt if dt is None else dt
        if dt <= 0:
            raise ValueError("dt must be positive")
        self.tick += 1
        self.time = self.tick * cfg.dt if dt == cfg.dt else self.time + dt

        for r in self.robots:
            if not r.path:
                continue
            new_pose, moved = advance(r.pose, r.path, cfg.speed * dt)
            if not self.truth.is_free(*new_pose.xy):
                # drifted plan runs into a real wall: stop here and ask for a new task
                r.path = []
                r.task = None
                self._alloc_due = True
                continue
            r.pose = new_pose
            r.travelled += moved
            arrived = not r.path
            self.slam.add_pose(r.id, r.pose, stamp=self.tick, force=arrived)
            if arrived:
                done = r.task
                self.tasks = [t for t in self.tasks if t is not done]
                r.task = None
                self._alloc_due = True
            if arrived or math.hypot(r.xy[0] - r.last_cover[0], r.xy[1] - r.last_cover[1]) >= COVER_STEP:
                self._cover(r)

        self._detect()

        while self._closures and self._closures[0].tick <= self.tick:
            lc = self._closures.pop(0)
            n = len(self.slam.graph)
            if lc.first < n:
                ev = LoopClosureEvent.uniform(self.tick, lc.first, min(lc.last, n - 1),
                                              lc.dx, lc.dy, lc.dtheta)
                changes = self.slam.apply_loop_closure(ev)
                self.events.append({"type": "loop_closure", "tick": self.tick, "time": self.time,
                                    "vertices": [lc.first, min(lc.last, n - 1)],
                                    "changed": len(changes)})

        planned = False
        if self.time + 1e-9 >= self._next_plan:
            self._plan()
            self._next_plan += cfg.planner_period
            planned = True
        idle_with_work = planned and self.tasks and any(r.task is None for r in self.robots)
        if self._alloc_due or idle_with_work or self.time + 1e-9 >= self._next_alloc:
            self._allocate()
        self._record()

    def finished(self) -> bool:
        cfg = self.cfg
        if self.world.victims and len(self.detections) == len(self.world.victims):
            self.end_reason = "all_victims"
        elif self.time + 1e-9 >= cfg.time_limit:
            self.end_reason = "time_limit"
        elif cfg.stop_coverage > 0 and self.free_area > 0 and \
                self.covered_area() >= cfg.stop_coverage * self.free_area:
            self.end_reason = "coverage"
        else:
            return False
        return True

    def run(self) -> MissionReport:
        # the first planner/allocation round happens before any motion
        self._plan()
        self._next_plan = self.cfg.planner_period
        self._allocate()
        while not self.finished():
            self.step()
        return self.report()

    def report(self) -> MissionReport:
        cfg = self.cfg
        times = sorted(t for t, _ in self.detections.values())
        duration = max(self.time, cfg.dt)
        covered = self.covered_area()
        n_victims = len(self.world.victims)
        metrics = {
            "SST": compute_sst(times, n_victims, cfg.miss_penalty),
            "coverage_efficiency": coverage_efficiency(covered, duration),
            "pct_victims": 100.0 * len(times) / n_victims if n_victims else 100.0,
            "victims_found": len(times),
            "victims_total": n_victims,
            "duration": duration,
            "covered_area": covered,
            "explored_area": self.explored_area(),
            "free_area": self.free_area,
            "pct_coverage": 100.0 * covered / self.free_area if self.free_area else 0.0,
            "nodes_created": self.planner.created,
            "nodes_pruned": self.planner.pruned,
            "pruned_fraction": self.planner.pruned_fraction(),
            "pose_vertices": len(self.slam.graph),
            "distance_travelled": [r.travelled for r in self.robots],
            "end_reason": self.end_reason,
        }
        return MissionReport(
            meta={"policy": self.policy.value, "seed": cfg.seed, "world": cfg.world,
                  "config": cfg.as_dict()},
            series=[list(s) for s in self.series],
            detections=[{"victim": vi, "time": t, "robot": rid}
                        for vi, (t, rid) in sorted(self.detections.items(), key=lambda kv: (kv[1][0], kv[0]))],
            events=self.events,
            rounds=self.rounds,
            metrics=metrics,
        )


def run_mission(cfg: MissionConfig, world: Optional[GroundTruthWorld] = None) -> MissionReport:
    return Mission(cfg, world).run()


def detect_victims(mission: Mission) -> list[int]:
    """Record first sightings for the mission's current state; returns new victim indices."""
    return mission._detect()
