"""Pose Graph Aware Random Trees.

Every pose-graph vertex roots a small RRT stored in the vertex's local frame.
When SLAM moves a vertex the whole tree moves rigidly with it; edges that end
up crossing obstacles are pruned together with their subtrees.
"""
from __future__ import annotations

import enum
import math
from typing import Iterable, Iterator, NamedTuple, Optional

import numpy as np
from scipy import ndimage

from .geometry import Pose2D
from .world import OCCUPIED, UNKNOWN, OccupancyGrid, segment_clear


class NodeClass(str, enum.Enum):
    PLAIN = "plain"
    FRONTIER = "frontier"
    COVERAGE = "coverage"


class TaskGraphError(ValueError):
    pass


class TreeNode:
    __slots__ = ("id", "lx", "ly", "parent", "kind", "children", "wx", "wy")

    def __init__(self, id: int, lx: float, ly: float, parent: Optional[int],
                 kind: NodeClass = NodeClass.PLAIN):
        self.id = id
        self.lx = lx
        self.ly = ly
        self.parent = parent
        self.kind = kind
        self.children: list[int] = []
        self.wx = 0.0
        self.wy = 0.0

    def __repr__(self):
        return f"TreeNode({self.id}, local=({self.lx:.3f}, {self.ly:.3f}), parent={self.parent})"


class RRTree:
    """Nodes in root-local coordinates; node 0 is the root at the local origin."""

    def __init__(self):
        self.nodes: dict[int, TreeNode] = {0: TreeNode(0, 0.0, 0.0, None)}
        self._next = 1

    def __len__(self):
        return len(self.nodes)

    def __iter__(self) -> Iterator[TreeNode]:
        return iter(self.nodes.values())

    @property
    def root(self) -> TreeNode:
        return self.nodes[0]

    def add(self, lx: float, ly: float, parent: int, kind: NodeClass = NodeClass.PLAIN) -> TreeNode:
        node = TreeNode(self._next, lx, ly, parent, kind)
        self._next += 1
        self.nodes[node.id] = node
        self.nodes[parent].children.append(node.id)
        return node

    def subtree(self, nid: int) -> list[int]:
        out, stack = [], [nid]
        while stack:
            n = stack.pop()
            out.append(n)
            stack.extend(self.nodes[n].children)
        return out

    def remove_subtree(self, nid: int) -> list[TreeNode]:
        if nid == 0:
            raise TaskGraphError("the root cannot be removed")
        ids = self.subtree(nid)
        node = self.nodes[nid]
        self.nodes[node.parent].children.remove(nid)
        return [self.nodes.pop(i) for i in ids]

    def bfs(self) -> Iterator[TreeNode]:
        queue = [0]
        i = 0
        while i < len(queue):
            node = self.nodes[queue[i]]
            i += 1
            yield node
            queue.extend(node.children)


class TaskVertex:
    def __init__(self, id: int, pose_vertex_id: int, transform: Pose2D):
        self.id = id
        self.pose_vertex_id = pose_vertex_id
        self.transform = transform
        self.tree = RRTree()
        self._arrays = None
        self.refresh_world()

    def __len__(self):
        return len(self.tree)

    def refresh_world(self) -> None:
        """Walk the tree from the root applying the map-to-root transform."""
        t = self.transform
        c, s = math.cos(t.theta), math.sin(t.theta)
        for node in self.tree.bfs():
            node.wx = t.x + c * node.lx - s * node.ly
            node.wy = t.y + s * node.lx + c * node.ly
        self._arrays = None

    def add_world_node(self, wx: float, wy: float, parent: int, kind: NodeClass) -> TreeNode:
        lx, ly = self.transform.inverse().apply(wx, wy)
        node = self.tree.add(lx, ly, parent, kind)
        t = self.transform
        c, s = math.cos(t.theta), math.sin(t.theta)
        node.wx = t.x + c * lx - s * ly
        node.wy = t.y + s * lx + c * ly
        if self._arrays is not None:
            ids, xy = self._arrays
            self._arrays = (np.append(ids, node.id), np.vstack([xy, [[node.wx, node.wy]]]))
        return node

    def arrays(self) -> tuple[np.ndarray, np.ndarray]:
        """(node ids, world xy) for the current tree, cached."""
        if self._arrays is None:
            nodes = list(self.tree)
            ids = np.fromiter((n.id for n in nodes), dtype=np.int64, count=len(nodes))
            xy = np.array([(n.wx, n.wy) for n in nodes], dtype=float).reshape(-1, 2)
            self._arrays = (ids, xy)
        return self._arrays

    def world_positions(self) -> dict[int, tuple[float, float]]:
        return {n.id: (n.wx, n.wy) for n in self.tree}

    def closest_node(self, x: float, y: float) -> TreeNode:
        if len(self.tree) <= 48:
            best, bd = None, math.inf
            for node in self.tree:
                d = (node.wx - x) ** 2 + (node.wy - y) ** 2
                if d < bd:
                    best, bd = node, d
            return best
        ids, xy = self.arrays()
        d2 = (xy[:, 0] - x) ** 2 + (xy[:, 1] - y) ** 2
        m = d2.min()
        return self.tree.nodes[int(ids[d2 == m].min())]


class SpatialHash:
    """Uniform hash grid over world-frame node positions."""

    def __init__(self, cell: float):
        self.cell = cell
        self.buckets: dict[tuple[int, int], dict[tuple[int, int], tuple[float, float]]] = {}
        self._size = 0

    def __len__(self):
        return self._size

    def _key(self, x, y):
        return (math.floor(x / self.cell), math.floor(y / self.cell))

    def insert(self, item: tuple[int, int], x: float, y: float) -> None:
        self.buckets.setdefault(self._key(x, y), {})[item] = (x, y)
        self._size += 1

    def remove(self, item: tuple[int, int], x: float, y: float) -> None:
        key = self._key(x, y)
        bucket = self.buckets[key]
        del bucket[item]
        if not bucket:
            del self.buckets[key]
        self._size -= 1

    def nearest(self, x: float, y: float) -> Optional[tuple[int, int]]:
        """Closest item; ties broken by the smaller item key."""
        if not self._size:
            return None
        cx, cy = self._key(x, y)
        keys = self.buckets.keys()
        kx = [k[0] for k in keys]
        ky = [k[1] for k in keys]
        max_r = max(abs(cx - min(kx)), abs(cx - max(kx)), abs(cy - min(ky)), abs(cy - max(ky)))
        best, bd = None, math.inf
        r = 0
        while r <= max_r:
            for key in _ring(cx, cy, r):
                bucket = self.buckets.get(key)
                if not bucket:
                    continue
                for item, (px, py) in bucket.items():
                    d = (px - x) ** 2 + (py - y) ** 2
                    if d < bd or (d == bd and item < best):
                        best, bd = item, d
            # anything in ring r+1 is at least r cells away
            if best is not None and bd <= (r * self.cell) ** 2:
                break
            r += 1
        return best


def _ring(cx: int, cy: int, r: int) -> Iterator[tuple[int, int]]:
    if r == 0:
        yield (cx, cy)
        return
    for dx in range(-r, r + 1):
        yield (cx + dx, cy - r)
        yield (cx + dx, cy + r)
    for dy in range(-r + 1, r):
        yield (cx - r, cy + dy)
        yield (cx + r, cy + dy)


class Expansion(NamedTuple):
    tree_id: int
    node_id: int
    fallback: bool


def _classify(grid: OccupancyGrid, x: float, y: float) -> NodeClass:
    ix, iy = grid.world_to_cell(x, y)
    block = grid.cells[max(iy - 1, 0):iy + 2, max(ix - 1, 0):ix + 2]
    return NodeClass.FRONTIER if (block == UNKNOWN).any() else NodeClass.PLAIN


def steer(fx: float, fy: float, tx: float, ty: float, step_size: float) -> tuple[float, float]:
    """Move from (fx, fy) toward (tx, ty) by at most ``step_size``."""
    d = math.hypot(tx - fx, ty - fy)
    if d <= step_size:
        return (tx, ty)
    return (fx + (tx - fx) * step_size / d, fy + (ty - fy) * step_size / d)


def sample_free(grid: OccupancyGrid, rng: np.random.Generator) -> Optional[tuple[float, float]]:
    """Uniform sample over the FREE cells of ``grid``."""
    free = grid.free_flat_indices()
    if free.size == 0:
        return None
    flat = int(free[rng.integers(free.size)])
    ix, iy = flat % grid.width, flat // grid.width
    ux, uy = rng.random(2)
    return (grid.origin[0] + (ix + ux) * grid.resolution,
            grid.origin[1] + (iy + uy) * grid.resolution)


class TaskGraph:
    def __init__(self, step_size: float = 1.0):
        self.step_size = step_size
        self.vertices: list[TaskVertex] = []
        self.by_pose_vertex: dict[int, TaskVertex] = {}
        self.index = SpatialHash(step_size)
        self._roots = np.empty((0, 2))
        self.created = 0
        self.pruned = 0
        self.frontier_candidates: list[tuple[int, int]] = []
        self.touched: set[int] = set()
        self._moved: set[int] = set()
        self._occ_seen: Optional[np.ndarray] = None

    def __len__(self):
        return len(self.vertices)

    def node_count(self) -> int:
        return sum(len(tv) for tv in self.vertices)

    def pruned_fraction(self) -> float:
        return self.pruned / self.created if self.created else 0.0

    # -- construction ----------------------------------------------------

    def add_task_vertex(self, pose_vertex) -> TaskVertex:
        if pose_vertex.id in self.by_pose_vertex:
            raise TaskGraphError(f"pose vertex {pose_vertex.id} already roots a tree")
        tv = TaskVertex(len(self.vertices), pose_vertex.id, pose_vertex.pose)
        self.vertices.append(tv)
        self.by_pose_vertex[pose_vertex.id] = tv
        self._roots = np.vstack([self._roots, [[tv.transform.x, tv.transform.y]]])
        root = tv.tree.root
        self.index.insert((tv.id, 0), root.wx, root.wy)
        self.touched.add(tv.id)
        return tv

    def _add_node(self, tv: TaskVertex, parent: TreeNode, x: float, y: float,
                  grid: OccupancyGrid) -> TreeNode:
        node = tv.add_world_node(x, y, parent.id, _classify(grid, x, y))
        self.index.insert((tv.id, node.id), node.wx, node.wy)
        self.created += 1
        self.touched.add(tv.id)
        if node.kind is NodeClass.FRONTIER:
            self.frontier_candidates.append((tv.id, node.id))
        return node

    def closest_task_vertex(self, x: float, y: float) -> TaskVertex:
        d2 = (self._roots[:, 0] - x) ** 2 + (self._roots[:, 1] - y) ** 2
        return self.vertices[int(np.argmin(d2))]

    def closest_node(self, x: float, y: float) -> tuple[TaskVertex, TreeNode]:
        tv_id, nid = self.index.nearest(x, y)
        tv = self.vertices[tv_id]
        return tv, tv.tree.nodes[nid]

    def expand(self, grid: OccupancyGrid, rng: np.random.Generator,
               step_size: Optional[float] = None, sample=None) -> Optional[Expansion]:
        """One TaskGraph expansion attempt; returns what was added, if anything."""
        if not self.vertices:
            raise TaskGraphError("TaskGraph has no task vertices")
        step_size = self.step_size if step_size is None else step_size
        if sample is None:
            sample = sample_free(grid, rng)
            if sample is None:
                return None
        sx, sy = sample
        tv = self.closest_task_vertex(sx, sy)
        near = tv.closest_node(sx, sy)
        new = steer(near.wx, near.wy, sx, sy, step_size)
        if new != (near.wx, near.wy) and segment_clear(grid, (near.wx, near.wy), new):
            node = self._add_node(tv, near, new[0], new[1], grid)
            return Expansion(tv.id, node.id, False)
        tv_k, near_k = self.closest_node(sx, sy)
        new = steer(near_k.wx, near_k.wy, sx, sy, step_size)
        if new != (near_k.wx, near_k.wy) and segment_clear(grid, (near_k.wx, near_k.wy), new):
            node = self._add_node(tv_k, near_k, new[0], new[1], grid)
            return Expansion(tv_k.id, node.id, True)
        return None

    # -- pose updates ----------------------------------------------------

    def update_task_vertex(self, tv: TaskVertex, pose: Pose2D) -> TaskVertex:
        if not pose.is_finite():
            raise TaskGraphError("task vertex pose must be finite")
        for node in tv.tree:
            self.index.remove((tv.id, node.id), node.wx, node.wy)
        tv.transform = pose
        tv.refresh_world()
        for node in tv.tree:
            self.index.insert((tv.id, node.id), node.wx, node.wy)
        self._roots[tv.id] = (pose.x, pose.y)
        self._moved.add(tv.id)
        self.touched.add(tv.id)
        return tv

    def on_poses_corrected(self, changes) -> None:
        for vid, _old, new in changes:
            tv = self.by_pose_vertex.get(vid)
            if tv is not None:
                self.update_task_vertex(tv, new)

    # -- pruning ---------------------------------------------------------

    def prune(self, grid: OccupancyGrid) -> int:
        """Drop every edge crossing an OCCUPIED cell along with its subtree.

        Only edges that could have changed status are checked: all edges of trees
        moved since the last call, and edges ending near cells that became
        OCCUPIED since the last call.
        """
        occ = grid.cells == OCCUPIED
        if self._occ_seen is None or self._occ_seen.shape != occ.shape:
            new_occ = occ
        else:
            new_occ = occ & ~self._occ_seen
        self._occ_seen = occ
        near = None
        if new_occ.any():
            r = int(math.ceil(self.step_size / grid.resolution)) + 2
            near = ndimage.maximum_filter(new_occ, size=2 * r + 1, mode="constant")

        h, w = occ.shape
        res = grid.resolution
        total = 0
        for tv in self.vertices:
            full = tv.id in self._moved
            if not full and near is None:
                continue
            if len(tv.tree) == 1:
                continue
            ids, xy = tv.arrays()
            ix = np.floor((xy[:, 0] - grid.origin[0]) / res).astype(np.int64)
            iy = np.floor((xy[:, 1] - grid.origin[1]) / res).astype(np.int64)
            inb = (ix >= 0) & (ix < w) & (iy >= 0) & (iy < h)
            if full:
                cand = ids
            else:
                flag = ~inb
                flag[inb] = near[iy[inb], ix[inb]]
                cand = ids[flag]
            if cand.size == 0:
                continue
            nodes = tv.tree.nodes
            for nid in np.sort(cand):
                node = nodes.get(int(nid))
                if node is None or node.parent is None:
                    continue
                parent = nodes[node.parent]
                if not segment_clear(grid, (parent.wx, parent.wy), (node.wx, node.wy)):
                    removed = tv.tree.remove_subtree(node.id)
                    for r_node in removed:
                        self.index.remove((tv.id, r_node.id), r_node.wx, r_node.wy)
                    total += len(removed)
                    tv._arrays = None
                    self.touched.add(tv.id)
        self._moved.clear()
        self.pruned += total
        return total

    # -- queries ---------------------------------------------------------

    def take_frontier_candidates(self) -> list[tuple[float, float]]:
        out = []
        for tv_id, nid in self.frontier_candidates:
            node = self.vertices[tv_id].tree.nodes.get(nid)
            if node is not None:
                out.append((node.wx, node.wy))
        self.frontier_candidates = []
        return out

    def take_touched(self) -> set[int]:
        t, self.touched = self.touched, set()
        return t

    def all_nodes(self) -> Iterable[tuple[int, TreeNode]]:
        for tv in self.vertices:
            for node in tv.tree:
                yield tv.id, node

    def check_invariants(self, grid: Optional[OccupancyGrid] = None) -> None:
        """Raise AssertionError if a tree is disconnected or an edge collides."""
        for tv in self.vertices:
            nodes = tv.tree.nodes
            assert nodes[0].parent is None
            seen = {n.id for n in tv.tree.bfs()}
            assert seen == set(nodes), f"tree {tv.id} is disconnected"
            for node in tv.tree:
                if node.parent is None:
                    continue
                p = nodes[node.parent]
                if grid is not None:
                    assert segment_clear(grid, (p.wx, p.wy), (node.wx, node.wy)), \
                        f"edge {tv.id}:{p.id}->{node.id} collides"


def add_task_vertex(graph: TaskGraph, pose_vertex) -> TaskVertex:
    return graph.add_task_vertex(pose_vertex)


def expand(graph: TaskGraph, grid: OccupancyGrid, step_size: float, rng) -> Optional[Expansion]:
    return graph.expand(grid, rng, step_size)


def update_task_vertex(graph: TaskGraph, tv: TaskVertex, pose: Pose2D) -> TaskVertex:
    return graph.update_task_vertex(tv, pose)


def prune(graph: TaskGraph, grid: OccupancyGrid) -> tuple[TaskGraph, int]:
    return graph, graph.prune(grid)


def dump_task_graph(graph: TaskGraph, coverage: Iterable[tuple[int, int]] = ()) -> str:
    """One ``tree_id node_id x y parent_id class`` record per node (parent -1 for roots)."""
    cov = set(coverage)
    lines = []
    for tv in graph.vertices:
        for node in sorted(tv.tree, key=lambda n: n.id):
            kind = NodeClass.COVERAGE if (tv.id, node.id) in cov else node.kind
            parent = -1 if node.parent is None else node.parent
            lines.append(f"{tv.id} {node.id} {node.wx:.6f} {node.wy:.6f} {parent} {kind.value}")
    return "\n".join(lines) + ("\n" if lines else "")


def parse_dump(text: str) -> list[tuple[int, int, float, float, int, str]]:
    out = []
    for line in text.splitlines():
        if not line.strip():
            continue
        t, n, x, y, p, k = line.split()
        out.append((int(t), int(n), float(x), float(y), int(p), k))
    return out
