"""Simulated multi-robot graph SLAM.

There is no scan matching or optimisation here: vertices are the robots' true
poses perturbed by a seeded drift model, and loop closures are scripted rigid
corrections. The map is always the rendering of every vertex scan at its current
pose estimate, so a correction is realised by replaying scans.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional

import numpy as np

from .geometry import Pose2D
from .world import UNKNOWN, OccupancyGrid, Ray, cast_rays, integrate_scan


class PoseGraphError(ValueError):
    pass


@dataclass
class PoseVertex:
    id: int
    robot_id: int
    pose: Pose2D
    stamp: int


@dataclass
class DriftModel:
    """Per-meter odometry drift: a constant bias plus a seeded random walk.

    The accumulated offset is added to the true pose (x, y, heading).
    """
    bias: tuple[float, float, float] = (0.0, 0.0, 0.0)
    sigma: tuple[float, float, float] = (0.0, 0.0, 0.0)
    seed: int = 0
    _rng: np.random.Generator = field(init=False, repr=False)

    def __post_init__(self):
        self._rng = np.random.default_rng(self.seed)

    @property
    def is_zero(self) -> bool:
        return not any(self.bias) and not any(self.sigma)

    def step(self, distance: float) -> np.ndarray:
        inc = np.asarray(self.bias, dtype=float) * distance
        if any(self.sigma) and distance > 0:
            inc = inc + np.asarray(self.sigma) * math.sqrt(distance) * self._rng.standard_normal(3)
        return inc


@dataclass
class LoopClosureEvent:
    """Scripted pose-graph correction.

    ``corrections`` maps vertex id to a map-frame rigid transform C; the vertex
    pose becomes C * pose. Ids must cover the inclusive range first..last.
    """
    tick: int
    first: int
    last: int
    corrections: dict[int, Pose2D]

    @classmethod
    def uniform(cls, tick: int, first: int, last: int, dx: float = 0.0, dy: float = 0.0,
                dtheta: float = 0.0) -> LoopClosureEvent:
        c = Pose2D(dx, dy, dtheta)
        return cls(tick, first, last, {i: c for i in range(first, last + 1)})

    def inverse(self) -> LoopClosureEvent:
        return LoopClosureEvent(self.tick, self.first, self.last,
                                {i: c.inverse() for i, c in self.corrections.items()})


@dataclass
class _Scan:
    sensor_pose: Pose2D
    rays: list[Ray]


@dataclass
class _RobotTrack:
    drift: DriftModel
    offset: np.ndarray
    last_true: Optional[Pose2D] = None
    last_vertex: Optional[int] = None
    odometer: float = 0.0
    odometer_at_vertex: float = 0.0


class PoseGraph:
    """Vertices and odometry edges of the shared pose graph."""

    def __init__(self):
        self.vertices: list[PoseVertex] = []
        self.edges: list[tuple[int, int]] = []
        self._xy: Optional[np.ndarray] = None

    def __len__(self):
        return len(self.vertices)

    def __getitem__(self, vid: int) -> PoseVertex:
        return self.vertices[vid]

    def add(self, robot_id: int, pose: Pose2D, stamp: int, prev: Optional[int]) -> PoseVertex:
        v = PoseVertex(len(self.vertices), robot_id, pose, stamp)
        self.vertices.append(v)
        if prev is not None:
            self.edges.append((prev, v.id))
        self._xy = None
        return v

    def set_pose(self, vid: int, pose: Pose2D) -> None:
        self.vertices[vid].pose = pose
        self._xy = None

    def positions(self) -> np.ndarray:
        if self._xy is None:
            self._xy = np.array([[v.pose.x, v.pose.y] for v in self.vertices], dtype=float).reshape(-1, 2)
        return self._xy

    def nearest(self, p) -> PoseVertex:
        """Vertex closest to ``p``; ties go to the lowest id."""
        if not self.vertices:
            raise PoseGraphError("pose graph is empty")
        xy = self.positions()
        d2 = (xy[:, 0] - p[0]) ** 2 + (xy[:, 1] - p[1]) ** 2
        return self.vertices[int(np.argmin(d2))]

    def nearest_distance(self, p) -> float:
        v = self.nearest(p)
        return math.hypot(v.pose.x - p[0], v.pose.y - p[1])


@dataclass
class LaserModel:
    range: float = 4.0
    fov: float = math.radians(145.0)
    rays: int = 120


class SlamSim:
    """Central pose graph plus the occupancy map rendered from its vertex scans."""

    def __init__(self, truth: OccupancyGrid, laser: LaserModel = None, spacing: float = 0.5,
                 turn_spacing: float = math.pi / 4):
        self.truth = truth
        self.laser = laser or LaserModel()
        self.spacing = spacing
        self.turn_spacing = turn_spacing
        self.graph = PoseGraph()
        self.map = OccupancyGrid.filled(truth.width, truth.height, truth.resolution,
                                        UNKNOWN, truth.origin)
        self._scans: list[_Scan] = []
        self._tracks: dict[int, _RobotTrack] = {}
        # per-vertex stack of applied corrections, for exact undo
        self._applied: dict[int, list[tuple[Pose2D, Pose2D]]] = {}
        self.vertex_listeners: list[Callable[[PoseVertex], None]] = []
        self.correction_listeners: list[Callable[[list], None]] = []

    # -- robots ----------------------------------------------------------

    def register_robot(self, robot_id: int, drift: Optional[DriftModel] = None) -> None:
        if robot_id in self._tracks:
            raise PoseGraphError(f"robot {robot_id} already registered")
        self._tracks[robot_id] = _RobotTrack(drift or DriftModel(), np.zeros(3))

    def estimate(self, robot_id: int, true_pose: Pose2D) -> Pose2D:
        off = self._tracks[robot_id].offset
        return Pose2D(true_pose.x + off[0], true_pose.y + off[1], true_pose.theta + off[2])

    def add_pose(self, robot_id: int, true_pose: Pose2D, stamp: int = 0,
                 force: bool = False) -> Optional[PoseVertex]:
        """Offer a new true pose; returns the new vertex, or None when gated.

        A vertex is created for the robot's first pose, and afterwards whenever
        it has travelled ``spacing`` meters or turned ``turn_spacing`` radians
        since its last vertex.
        """
        track = self._tracks.get(robot_id)
        if track is None:
            raise PoseGraphError(f"robot {robot_id} is not registered")
        if track.last_true is not None:
            track.odometer += true_pose.distance_to(track.last_true)
        track.last_true = true_pose

        if track.last_vertex is not None and not force:
            ref = self._scans[track.last_vertex].sensor_pose
            moved = true_pose.distance_to(ref)
            turned = abs(math.remainder(true_pose.theta - ref.theta, 2 * math.pi))
            if moved < self.spacing and turned < self.turn_spacing:
                return None

        travelled = track.odometer - track.odometer_at_vertex
        track.odometer_at_vertex = track.odometer
        if not track.drift.is_zero:
            track.offset = track.offset + track.drift.step(travelled)
        est = self.estimate(robot_id, true_pose)

        rays = cast_rays(self.truth, true_pose.xy, self.laser.range, self.laser.rays,
                         heading=true_pose.theta, fov=self.laser.fov)
        vertex = self.graph.add(robot_id, est, stamp, track.last_vertex)
        self._scans.append(_Scan(true_pose, rays))
        track.last_vertex = vertex.id
        integrate_scan(self.map, est, rays, sensor_pose=true_pose)
        for fn in self.vertex_listeners:
            fn(vertex)
        return vertex

    # -- corrections -----------------------------------------------------

    def apply_loop_closure(self, event: LoopClosureEvent) -> list[tuple[int, Pose2D, Pose2D]]:
        """Apply a scripted correction, re-render the map and notify listeners.

        Returns the change-set ``[(vertex id, old pose, new pose)]``. Applying the
        inverse of the most recent correction restores the previous poses exactly.
        """
        n = len(self.graph)
        if not (0 <= event.first <= event.last < n):
            raise PoseGraphError(f"vertex range {event.first}..{event.last} invalid for {n} vertices")
        missing = set(range(event.first, event.last + 1)) - set(event.corrections)
        if missing:
            raise PoseGraphError(f"no correction for vertices {sorted(missing)[:5]}")
        changes = []
        for vid in range(event.first, event.last + 1):
            corr = event.corrections[vid]
            if not corr.is_finite():
                raise PoseGraphError(f"non-finite correction for vertex {vid}")
            old = self.graph[vid].pose
            stack = self._applied.setdefault(vid, [])
            if stack and stack[-1][0].inverse() == corr:
                _, new = stack.pop()
            else:
                new = corr.compose(old)
                stack.append((corr, old))
            if new != old:
                self.graph.set_pose(vid, new)
                changes.append((vid, old, new))
        if changes:
            self.rerender()
            for fn in self.correction_listeners:
                fn(changes)
        return changes

    def rerender(self) -> None:
        """Rebuild the map from scratch by replaying every vertex scan."""
        self.map.cells.fill(UNKNOWN)
        for v, scan in zip(self.graph.vertices, self._scans):
            integrate_scan(self.map, v.pose, scan.rays, sensor_pose=scan.sensor_pose)
        self.map.touch()

    def nearest_pose_vertex(self, p) -> PoseVertex:
        return self.graph.nearest(p)

    def last_vertex(self, robot_id: int) -> Optional[PoseVertex]:
        vid = self._tracks[robot_id].last_vertex
        return None if vid is None else self.graph[vid]

    def scan_of(self, vid: int) -> tuple[Pose2D, list[Ray]]:
        s = self._scans[vid]
        return s.sensor_pose, s.rays


def nearest_pose_vertex(graph: PoseGraph, p) -> PoseVertex:
    return graph.nearest(p)


def corrections_from(changes: Mapping[int, Pose2D], tick: int = 0) -> LoopClosureEvent:
    ids = sorted(changes)
    return LoopClosureEvent(tick, ids[0], ids[-1], dict(changes))
