"""Sampling-based planners: RRT* and Informed-RRT* with pluggable samplers.

The tree planner accepts any object with a ``next(rng) -> config`` method as
its sample source, which is how the learned samplers drive it.  Samplers may
also expose ``observe(best_cost)``; the planner calls it whenever the best
known solution cost improves, which is all Informed-RRT* needs.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.spatial import cKDTree

from .cspace import (
    Config,
    Path,
    RobotModel,
    Workspace,
    segments_free,
    steer_to,
)
from .models import PointCloud


class PlanningError(ValueError):
    pass


@dataclass
class PlanningProblem:
    """One query: robot + workspace + start + goal-region center (+ cloud)."""

    robot: RobotModel
    ws: Workspace
    start: Config
    goal: Config
    cloud: Optional[PointCloud] = None

    def __post_init__(self):
        if not isinstance(self.start, Config):
            self.start = Config(self.start)
        if not isinstance(self.goal, Config):
            self.goal = Config(self.goal)
        if self.start.dim != self.robot.d or self.goal.dim != self.robot.d:
            raise PlanningError("start/goal dimensionality must match the robot")
        if self.robot.collides(self.start.coords, self.ws):
            raise PlanningError("start configuration is in collision")
        if self.robot.collides(self.goal.coords, self.ws):
            raise PlanningError("goal-region center is in collision")


class Tree:
    """Rooted tree over configurations with per-node parent and cost-to-root."""

    def __init__(self, root, d: int, capacity: int = 256):
        self._coords = np.empty((capacity, d))
        self.parent = np.empty(capacity, dtype=np.int64)
        self.cost = np.empty(capacity)
        self.children: list = [[]]
        self._coords[0] = np.asarray(root, dtype=float)
        self.parent[0] = -1
        self.cost[0] = 0.0
        self.n = 1

    @property
    def coords(self) -> np.ndarray:
        return self._coords[: self.n]

    def _grow(self):
        cap = self._coords.shape[0] * 2
        self._coords = np.resize(self._coords, (cap, self._coords.shape[1]))
        self.parent = np.resize(self.parent, cap)
        self.cost = np.resize(self.cost, cap)

    def add(self, q, parent: int, cost: float) -> int:
        if self.n == self._coords.shape[0]:
            self._grow()
        i = self.n
        self._coords[i] = q
        self.parent[i] = parent
        self.cost[i] = cost
        self.children.append([])
        self.children[parent].append(i)
        self.n += 1
        return i

    def reparent(self, idx: int, new_parent: int, new_cost: float) -> None:
        """Move idx under new_parent and push the cost change to its subtree."""
        old_parent = self.parent[idx]
        self.children[old_parent].remove(idx)
        self.children[new_parent].append(idx)
        self.parent[idx] = new_parent
        delta = new_cost - self.cost[idx]
        stack = [idx]
        while stack:
            i = stack.pop()
            self.cost[i] += delta
            stack.extend(self.children[i])

    def path_indices(self, idx: int) -> list:
        out = []
        while idx != -1:
            out.append(int(idx))
            idx = self.parent[idx]
        return out[::-1]

    def extract_path(self, idx: int) -> Path:
        return Path([Config(self._coords[i]) for i in self.path_indices(idx)])

    def to_json(self) -> dict:
        return {
            "nodes": self.coords.tolist(),
            "parents": self.parent[: self.n].tolist(),
            "costs": self.cost[: self.n].tolist(),
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json())


KD_LINEAR_LIMIT = 2000  # linear scan below, kd-tree over a frozen prefix beyond
KD_TAIL_LIMIT = 1000


class _NnIndex:
    """Nearest/near queries over a growing tree.

    Point robots get a cKDTree once the tree outgrows the linear-scan limit
    (rebuilt whenever the un-indexed tail gets long); wrapped-angle metrics
    stay on the vectorized linear scan, which a kd-tree cannot express.
    """

    def __init__(self, robot: RobotModel, tree: Tree):
        self.robot = robot
        self.tree = tree
        self.kd = None
        self.kd_size = 0
        self.kd_ok = robot.metric_is_euclidean

    def _maybe_rebuild(self):
        n = self.tree.n
        if not self.kd_ok or n <= KD_LINEAR_LIMIT:
            return
        if n - self.kd_size > KD_TAIL_LIMIT:
            self.kd = cKDTree(self.tree.coords.copy())
            self.kd_size = n

    def nearest(self, q: np.ndarray) -> int:
        self._maybe_rebuild()
        tree = self.tree
        if self.kd is None:
            return int(np.argmin(self.robot.distances_to(tree.coords, q)))
        kd_dist, kd_idx = self.kd.query(q)
        best_idx, best_dist = int(kd_idx), float(kd_dist)
        if tree.n > self.kd_size:
            tail = tree.coords[self.kd_size :]
            d = self.robot.distances_to(tail, q)
            j = int(np.argmin(d))
            if d[j] < best_dist:
                best_idx, best_dist = self.kd_size + j, float(d[j])
        return best_idx

    def near(self, q: np.ndarray, radius: float) -> np.ndarray:
        self._maybe_rebuild()
        tree = self.tree
        if self.kd is None:
            d = self.robot.distances_to(tree.coords, q)
            return np.flatnonzero(d <= radius)
        idx = sorted(self.kd.query_ball_point(q, radius))
        if tree.n > self.kd_size:
            tail = tree.coords[self.kd_size :]
            d = self.robot.distances_to(tail, q)
            idx.extend((self.kd_size + np.flatnonzero(d <= radius)).tolist())
        return np.asarray(idx, dtype=np.int64)


class UniformSampler:
    """Uniform over the bounds with a small goal-region bias."""

    def __init__(self, problem: PlanningProblem, goal_bias: float = 0.05):
        self.problem = problem
        self.goal_bias = goal_bias

    def next(self, rng: np.random.Generator) -> np.ndarray:
        if self.goal_bias > 0.0 and rng.random() < self.goal_bias:
            return self.problem.goal.coords.copy()
        return self.problem.robot.sample_uniform(self.problem.ws, rng)


def unit_ball_sample(d: int, rng: np.random.Generator) -> np.ndarray:
    x = rng.normal(size=d)
    x /= np.linalg.norm(x)
    return x * rng.random() ** (1.0 / d)


def _rotation_to_world(axis: np.ndarray) -> np.ndarray:
    """Rotation whose first column is `axis` (the prolate spheroid frame)."""
    d = axis.size
    m = np.outer(axis, np.eye(d)[0])
    u, _s, vt = np.linalg.svd(m)
    diag = np.ones(d)
    diag[-1] = np.linalg.det(u) * np.linalg.det(vt.T)
    return u @ np.diag(diag) @ vt


def informed_sample(c_init, c_goal, c_best: float, rng: np.random.Generator) -> np.ndarray:
    """Uniform sample from the prolate hyperspheroid of improving states.

    Foci at init/goal, transverse diameter c_best, conjugate diameters
    sqrt(c_best^2 - c_min^2).  c_best == c_min degenerates to the segment.
    """
    a = np.asarray(c_init, dtype=float)
    b = np.asarray(c_goal, dtype=float)
    c_min = float(np.linalg.norm(b - a))
    if c_best < c_min - 1e-12:
        raise PlanningError("c_best below the start-goal distance")
    c_best = max(c_best, c_min)
    center = (a + b) / 2.0
    d = a.size
    radii = np.full(d, math.sqrt(max(c_best**2 - c_min**2, 0.0)) / 2.0)
    radii[0] = c_best / 2.0
    if c_min == 0.0:
        rot = np.eye(d)
    else:
        rot = _rotation_to_world((b - a) / c_min)
    return rot @ (radii * unit_ball_sample(d, rng)) + center


class InformedSampler:
    """Uniform until a solution exists, then ellipsoidal rejection sampling.

    For planar rigid bodies the ellipse constrains the positional axes only
    (a superset of the true improving set, so nothing is lost) and the angle
    stays uniform.
    """

    def __init__(self, problem: PlanningProblem, goal_bias: float = 0.05,
                 max_rejects: int = 100):
        self.problem = problem
        self.uniform = UniformSampler(problem, goal_bias)
        self.best = math.inf
        self.max_rejects = max_rejects
        self.se2 = not problem.robot.metric_is_euclidean

    def observe(self, best_cost: float) -> None:
        self.best = best_cost

    def _draw(self, rng) -> np.ndarray:
        a, b = self.problem.start.coords, self.problem.goal.coords
        if self.se2:
            xy = informed_sample(a[:2], b[:2], self.best, rng)
            return np.array([xy[0], xy[1], rng.uniform(-math.pi, math.pi)])
        return informed_sample(a, b, self.best, rng)

    def next(self, rng: np.random.Generator) -> np.ndarray:
        if not math.isfinite(self.best):
            return self.uniform.next(rng)
        ws = self.problem.ws
        m = ws.bounds.shape[0]
        for _ in range(self.max_rejects):
            q = self._draw(rng)
            if ws.in_bounds(q[None, :m])[0]:
                return q
        return self.uniform.next(rng)


# ---------------------------------------------------------------------------
# RRT*
# ---------------------------------------------------------------------------

def rrt_gamma(robot: RobotModel, ws: Workspace) -> float:
    """Connection-radius constant: 2 (1 + 1/d)^(1/d) (mu_free / zeta_d)^(1/d)."""
    d = robot.d
    mu = ws.free_volume()
    if d > ws.dim:  # angular axes contribute their full extent
        mu *= (2.0 * math.pi * getattr(robot, "angle_weight", 1.0)) ** (d - ws.dim)
    zeta = math.pi ** (d / 2.0) / math.gamma(d / 2.0 + 1.0)
    return 2.0 * (1.0 + 1.0 / d) ** (1.0 / d) * (mu / zeta) ** (1.0 / d)


@dataclass
class SearchStats:
    iters: int = 0
    nodes: int = 0
    cost: Optional[float] = None
    first_solution_iter: Optional[int] = None

    def as_dict(self) -> dict:
        return {
            "iters": self.iters,
            "nodes": self.nodes,
            "cost": self.cost,
            "first_solution_iter": self.first_solution_iter,
        }


def rewire(tree: Tree, new_idx: int, neighbor_idxs, robot: RobotModel,
           ws: Workspace, step: float) -> Tree:
    """Re-parent any neighbor whose route through new_idx is shorter.

    Candidate segments are collision-checked in one batched query; accepted
    re-parents propagate the cost drop through the whole subtree.
    """
    neighbor_idxs = np.asarray(neighbor_idxs, dtype=np.int64)
    neighbor_idxs = neighbor_idxs[neighbor_idxs != new_idx]
    if neighbor_idxs.size == 0:
        return tree
    q_new = tree.coords[new_idx]
    dists = robot.distances_to(tree.coords[neighbor_idxs], q_new)
    through = tree.cost[new_idx] + dists
    improving = through < tree.cost[neighbor_idxs]
    if not improving.any():
        return tree
    cand = neighbor_idxs[improving]
    cand_cost = through[improving]
    free = segments_free(
        robot, np.tile(q_new, (cand.size, 1)), tree.coords[cand], ws, step
    )
    for idx, cost, ok in zip(cand, cand_cost, free):
        if ok and cost < tree.cost[idx]:
            tree.reparent(int(idx), new_idx, float(cost))
    return tree


def rrt_star(
    problem: PlanningProblem,
    sampler,
    max_iters: int,
    rng: np.random.Generator,
    eta: float = 4.0,
    step: float = 0.05,
    gamma: Optional[float] = None,
    stop_cost: Optional[float] = None,
    connect_exact: bool = False,
):
    """Asymptotically-optimal tree search; returns (path or None, tree, stats).

    sample -> nearest -> steer by at most eta -> collision check at `step`
    -> choose cheapest feasible parent in the shrinking radius ball ->
    insert -> rewire.  A node whose distance to the goal center is within
    the robot's goal radius ends a candidate solution; with connect_exact
    the node must also steer to the exact goal config, which is then
    appended to the returned path.

    stop_cost, when set, ends the search as soon as the best solution cost
    reaches it (math.inf means "stop at the first solution").
    """
    robot, ws = problem.robot, problem.ws
    goal = problem.goal.coords
    d = robot.d
    if gamma is None:
        gamma = rrt_gamma(robot, ws)
    tree = Tree(problem.start.coords, d)
    index = _NnIndex(robot, tree)
    stats = SearchStats()
    goal_nodes: list = []
    goal_tail: dict = {}  # node -> extra cost of the exact-goal hop
    best_cost = math.inf
    best_node = None

    if robot.in_goal(problem.start.coords, goal):
        ok = (not connect_exact) or steer_to(robot, problem.start.coords, goal, ws, step)
        if ok:
            goal_nodes.append(0)
            goal_tail[0] = robot.distance(problem.start.coords, goal) if connect_exact else 0.0

    for it in range(1, max_iters + 1):
        stats.iters = it
        q_rand = sampler.next(rng)
        near_idx = index.nearest(q_rand)
        q_near = tree.coords[near_idx]
        dist = robot.distance(q_near, q_rand)
        if dist == 0.0:
            continue
        q_new = robot.interpolate(q_near, q_rand, min(eta / dist, 1.0))
        if robot.collides(q_new, ws):
            continue
        if not steer_to(robot, q_near, q_new, ws, step):
            continue

        n = tree.n
        r_n = min(gamma * (math.log(max(n, 2)) / max(n, 2)) ** (1.0 / d), eta)
        near_set = index.near(q_new, r_n)

        # choose parent: cheapest feasible connection, ties to the lowest index
        parent = near_idx
        parent_cost = tree.cost[near_idx] + robot.distance(q_near, q_new)
        if near_set.size:
            cand_d = robot.distances_to(tree.coords[near_set], q_new)
            cand_cost = tree.cost[near_set] + cand_d
            for j in np.argsort(cand_cost, kind="stable"):
                cidx = int(near_set[j])
                ccost = float(cand_cost[j])
                if ccost >= parent_cost:
                    break
                if steer_to(robot, tree.coords[cidx], q_new, ws, step):
                    parent, parent_cost = cidx, ccost
                    break
        new_idx = tree.add(q_new, parent, parent_cost)
        rewire(tree, new_idx, near_set, robot, ws, step)

        if robot.in_goal(q_new, goal):
            ok = (not connect_exact) or steer_to(robot, q_new, goal, ws, step)
            if ok:
                goal_nodes.append(new_idx)
                goal_tail[new_idx] = robot.distance(q_new, goal) if connect_exact else 0.0
                if stats.first_solution_iter is None:
                    stats.first_solution_iter = it

        if goal_nodes:
            tails = np.asarray([goal_tail[i] for i in goal_nodes])
            totals = tree.cost[np.asarray(goal_nodes)] + tails
            j = int(np.argmin(totals))
            if totals[j] < best_cost:
                best_cost = float(totals[j])
                best_node = goal_nodes[j]
                if hasattr(sampler, "observe"):
                    sampler.observe(best_cost)
            if stop_cost is not None and best_cost <= stop_cost:
                break

    stats.nodes = tree.n
    if best_node is None:
        return None, tree, stats
    stats.cost = best_cost
    states = [Config(tree.coords[i]) for i in tree.path_indices(best_node)]
    if connect_exact and not np.array_equal(states[-1].coords, goal):
        states.append(Config(goal))
    return Path(states), tree, stats


def informed_rrt_star(
    problem: PlanningProblem,
    max_iters: int,
    rng: np.random.Generator,
    eta: float = 4.0,
    step: float = 0.05,
    gamma: Optional[float] = None,
    stop_cost: Optional[float] = None,
    goal_bias: float = 0.05,
):
    """RRT* that narrows sampling to the improving ellipsoid once a path exists."""
    sampler = InformedSampler(problem, goal_bias=goal_bias)
    path, tree, stats = rrt_star(
        problem, sampler, max_iters, rng, eta=eta, step=step, gamma=gamma,
        stop_cost=stop_cost,
    )
    return path, tree, stats
