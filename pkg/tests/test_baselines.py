import inspect

import numpy as np
import pytest

from mrsearch.baselines import GlobalRRT, PolicyKind, nbvp_allocate, rrt_allocate, rrt_exploration_step
from mrsearch.frontier_filter import FrontierNode, filter_exploration_nodes
from mrsearch.geometry import Pose2D
from mrsearch.high_alloc import Agent, Task, TaskKind
from mrsearch.pgart import TaskGraph
from mrsearch.sim.scenarios import doubled_corridor_trial
from mrsearch.slam_sim import PoseVertex
from mrsearch.world import FREE, UNKNOWN, OccupancyGrid


def open_grid(w=100, h=100):
    return OccupancyGrid.filled(w, h, 0.1, FREE)


def test_policy_parse():
    assert PolicyKind.parse("NBVP") is PolicyKind.NBVP_GREEDY
    assert PolicyKind.parse("rrt_exploration") is PolicyKind.RRT_EXPLORATION
    with pytest.raises(ValueError):
        PolicyKind.parse("astar")


def test_single_task_goes_to_nearest_robot():
    robots = [Agent(0, 1.05, 1.05), Agent(1, 8.05, 8.05)]
    rnd = nbvp_allocate(robots, [Task(0, TaskKind.COVERAGE, 7.05, 7.05, 0.5)], open_grid())
    assert rnd.assignments[1].id == 0 and rnd.assignments[0] is None


def test_closer_equal_gain_task_first():
    robots = [Agent(0, 1.05, 5.05)]
    tasks = [Task(0, TaskKind.EXPLORATION, 4.05, 5.05, 0.5), Task(1, TaskKind.EXPLORATION, 2.05, 5.05, 0.5)]
    rnd = nbvp_allocate(robots, tasks, open_grid())
    assert rnd.assignments[0].id == 1
    assert abs(rnd.terms[0].reward - 0.5 * np.exp(-0.5 * 1.0)) <= 1e-12


def test_kind_ignored_ties_by_task_id():
    robots = [Agent(0, 5.05, 5.05)]
    tasks = [Task(3, TaskKind.EXPLORATION, 7.05, 5.05, 0.5), Task(2, TaskKind.COVERAGE, 3.05, 5.05, 0.5)]
    assert nbvp_allocate(robots, tasks, open_grid()).assignments[0].id == 2
    tasks = [Task(2, TaskKind.EXPLORATION, 7.05, 5.05, 0.5), Task(3, TaskKind.COVERAGE, 3.05, 5.05, 0.5)]
    assert nbvp_allocate(robots, tasks, open_grid()).assignments[0].id == 2


def test_nbvp_never_sees_weights_or_utility():
    params = set(inspect.signature(nbvp_allocate).parameters)
    assert not params & {"utility_scale", "sensor_range", "camera_radius", "fence", "pose_graph", "assigned"}


def test_nbvp_each_task_at_most_once():
    rng = np.random.default_rng(0)
    robots = [Agent(i, *rng.uniform(0.5, 9.5, 2)) for i in range(4)]
    tasks = [Task(i, TaskKind.COVERAGE, *rng.uniform(0.5, 9.5, 2), float(rng.uniform())) for i in range(3)]
    rnd = nbvp_allocate(robots, tasks, open_grid())
    ids = [t.id for t in rnd.assigned_tasks()]
    assert len(ids) == len(set(ids)) == 3


def test_fully_mapped_world_has_no_frontiers():
    g = open_grid()
    tree = GlobalRRT((5.0, 5.0))
    step = rrt_exploration_step(tree, g, np.random.default_rng(0), 300, 4.0, 0.15, 1.5)
    assert step.expanded > 0 and step.frontiers == []
    rnd = rrt_allocate([Agent(0, 5.0, 5.0)], step.frontiers, g)
    assert rnd.idle() == [0]


def test_frontiers_match_shared_filter():
    g = open_grid()
    g.cells[:, 50::3] = UNKNOWN   # comb of unknown strips joined along the top
    g.cells[90:, 50:] = UNKNOWN
    a = GlobalRRT((2.0, 5.0))
    step = rrt_exploration_step(a, g, np.random.default_rng(4), 200, 4.0, 0.15, 1.5)
    b = GlobalRRT((2.0, 5.0))
    rng = np.random.default_rng(4)
    for _ in range(200):
        b.expand(g, rng)
    b.prune(g)
    ref = filter_exploration_nodes(b.take_frontier_candidates(), [], 4.0, 0.15, 1.5, g)
    assert step.frontiers == ref and ref
    assert all(isinstance(f, FrontierNode) for f in ref)


def test_global_tree_ignores_pose_corrections():
    tree = GlobalRRT((2.0, 2.0))
    rng = np.random.default_rng(0)
    for _ in range(50):
        tree.expand(open_grid(), rng)
    before = sorted((n.wx, n.wy) for n in tree.tree)
    tree.on_poses_corrected([(0, Pose2D(0, 0, 0), Pose2D(1, 1, 0))])
    assert sorted((n.wx, n.wy) for n in tree.tree) == before


def test_rrt_allocate_builds_exploration_tasks():
    fr = [FrontierNode(3.05, 5.05, 0.7), FrontierNode(8.05, 5.05, 0.4)]
    rnd = rrt_allocate([Agent(0, 2.05, 5.05)], fr, open_grid(), first_id=10)
    t = rnd.assignments[0]
    assert t.kind is TaskKind.EXPLORATION and t.id == 10 and t.gain == 0.7


def test_global_tree_prunes_more_than_pose_rooted_forest():
    t = doubled_corridor_trial(0)
    assert t.rrt_fraction > t.pgart_fraction
    assert t.pgart_created > 0 and t.rrt_created > 0


def test_forest_and_global_tree_share_expansion_contract():
    g = open_grid()
    forest = TaskGraph(1.0)
    forest.add_task_vertex(PoseVertex(0, 0, Pose2D(2.0, 2.0, 0.0), 0))
    tree = GlobalRRT((2.0, 2.0))
    ra, rb = np.random.default_rng(1), np.random.default_rng(1)
    for _ in range(100):
        ea, eb = forest.expand(g, ra), tree.expand(g, rb)
        assert (ea is None) == (eb is None)
    assert forest.node_count() == tree.node_count()
