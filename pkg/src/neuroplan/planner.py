"""Neural path planning: bidirectional rollout, contraction, replanning.

The planner grows two waypoint chains, one from the start and one from the
goal, asking the predictor for the next state of whichever chain is active
and greedily trying to bridge the two ends after every step.  Colliding
proposals are discarded (the dropout noise yields a fresh one next call).
Beacon pairs, consecutive waypoints that cannot be bridged, are handed back
to the planner recursively, or to a tree-search oracle in hybrid mode.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .cspace import Config, Path, path_feasible, segments_free, steer_to
from .models import PlannerModel
from .smp import PlanningProblem, UniformSampler, rrt_star


@dataclass(frozen=True)
class PlanConfig:
    """Budgets and step sizes for the neural planner."""

    n_bnp: int = 80          # rollout iterations per bidirectional attempt
    n_replan: int = 12       # neural replanning rounds
    n_smp: int = 300         # learned samples before a sampler turns uniform
    coarse_step: float = 0.8
    medium_step: float = 0.2
    fine_step: float = 0.05
    plan_oracle: bool = False
    oracle_iters: int = 10_000
    oracle_eta: float = 4.0

    def __post_init__(self):
        if min(self.n_bnp, self.n_replan, self.n_smp) < 0:
            raise ValueError("budgets must be non-negative")

    def with_oracle(self, flag: bool) -> "PlanConfig":
        return replace(self, plan_oracle=flag)


def bidirectional_neural_plan(
    model: PlannerModel,
    z: np.ndarray,
    start,
    goal,
    problem: PlanningProblem,
    cfg: PlanConfig,
    rng: np.random.Generator,
    step: Optional[float] = None,
    budget: Optional[int] = None,
    stats: Optional[dict] = None,
) -> Optional[Path]:
    """Grow start- and goal-rooted chains until their ends can be bridged.

    Every iteration first attempts the bridge, then extends the active chain
    with one predictor proposal (dropped if it collides), then swaps roles.
    Returns the concatenated start-to-goal path, or None after the budget.
    """
    robot, ws = problem.robot, problem.ws
    step = cfg.coarse_step if step is None else step
    budget = cfg.n_bnp if budget is None else budget
    a = [np.asarray(start, dtype=float)]  # grows from the start
    b = [np.asarray(goal, dtype=float)]   # grows from the goal
    for i in range(budget):
        if steer_to(robot, a[-1], b[-1], ws, step):
            return Path([Config(q) for q in a + b[::-1]])
        active, passive = (a, b) if i % 2 == 0 else (b, a)
        c_new = model.predict_next(z, active[-1], passive[-1], rng)
        if stats is not None:
            stats["pnet_calls"] += 1
        if not robot.collides(c_new, ws):
            active.append(c_new)
    if steer_to(robot, a[-1], b[-1], ws, step):
        return Path([Config(q) for q in a + b[::-1]])
    return None


def lazy_states_contraction(sigma: Path, robot, ws, step: float) -> Path:
    """Drop redundant waypoints by bridging the farthest reachable state.

    From each kept state, the most distant later state with a collision-free
    straight connection becomes the next kept state; unbridgeable consecutive
    pairs survive untouched.  The result is a subsequence with the same
    endpoints and never a higher cost.
    """
    if len(sigma) <= 2:
        return sigma
    states = sigma.states
    kept = [states[0]]
    i = 0
    last = len(states) - 1
    while i < last:
        j = i + 1
        for k in range(last, i + 1, -1):
            if k == i + 1 or steer_to(robot, states[i], states[k], ws, step):
                j = k
                break
        kept.append(states[j])
        i = j
    return Path(kept)


def replan(
    sigma: Path,
    model: PlannerModel,
    z: np.ndarray,
    problem: PlanningProblem,
    cfg: PlanConfig,
    rng: np.random.Generator,
    plan_oracle: bool,
    beacon_step: Optional[float] = None,
    stats: Optional[dict] = None,
) -> Optional[Path]:
    """Bridge every beacon pair of sigma with a fresh sub-plan.

    Connectable consecutive pairs are kept as-is.  Beacon pairs go to the
    bidirectional planner (plan_oracle=False) or to the tree-search oracle
    (plan_oracle=True); failure on any pair fails the whole pass.
    """
    robot, ws = problem.robot, problem.ws
    beacon_step = cfg.medium_step if beacon_step is None else beacon_step
    arr = sigma.as_array()
    ok = segments_free(robot, arr[:-1], arr[1:], ws, beacon_step)
    out = [sigma[0]]
    for i, connected in enumerate(ok):
        if connected:
            out.append(sigma[i + 1])
            continue
        if plan_oracle:
            sub = _oracle_segment(problem, arr[i], arr[i + 1], cfg, rng)
        else:
            sub = bidirectional_neural_plan(
                model, z, arr[i], arr[i + 1], problem, cfg, rng,
                step=beacon_step, stats=stats,
            )
        if sub is None:
            return None
        out.extend(sub.states[1:])
    return Path(out)


def _oracle_segment(problem: PlanningProblem, a, b, cfg: PlanConfig, rng) -> Optional[Path]:
    """Exact point-to-point segment plan via the sampling-based oracle."""
    sub = PlanningProblem(problem.robot, problem.ws, Config(a), Config(b), problem.cloud)
    path, _tree, _stats = rrt_star(
        sub,
        UniformSampler(sub),
        cfg.oracle_iters,
        rng,
        eta=cfg.oracle_eta,
        step=cfg.fine_step,
        stop_cost=math.inf,
        connect_exact=True,
    )
    return path


def plan_path(
    model: PlannerModel,
    problem: PlanningProblem,
    cfg: PlanConfig,
    rng: np.random.Generator,
):
    """Full planning pipeline; returns (path or None, stats).

    Rollout, contraction, feasibility; then neural replanning rounds; then,
    if configured, one oracle-backed round.  Any returned path has passed
    the fine-step feasibility check end to end.  stats records pnet_calls,
    oracle_called, and replanning_rounds.
    """
    robot, ws = problem.robot, problem.ws
    stats = {"pnet_calls": 0, "oracle_called": False, "replanning_rounds": 0}
    z = model.encode(problem.cloud)
    start, goal = problem.start.coords, problem.goal.coords

    sigma = bidirectional_neural_plan(
        model, z, start, goal, problem, cfg, rng, stats=stats
    )
    if sigma is None:
        # treat the whole query as one beacon pair so replanning (and in
        # hybrid mode the oracle) still sees the full problem
        sigma = Path([Config(start), Config(goal)])
    sigma = lazy_states_contraction(sigma, robot, ws, cfg.fine_step)
    if path_feasible(robot, sigma, ws, cfg.fine_step):
        return sigma, stats

    for _ in range(cfg.n_replan):
        stats["replanning_rounds"] += 1
        new = replan(sigma, model, z, problem, cfg, rng, plan_oracle=False, stats=stats)
        if new is None:
            continue  # retry from the same beacons with fresh dropout noise
        sigma = lazy_states_contraction(new, robot, ws, cfg.fine_step)
        if path_feasible(robot, sigma, ws, cfg.fine_step):
            return sigma, stats

    if cfg.plan_oracle:
        stats["oracle_called"] = True
        new = replan(
            sigma, model, z, problem, cfg, rng, plan_oracle=True,
            beacon_step=cfg.fine_step, stats=stats,
        )
        if new is not None:
            sigma = lazy_states_contraction(new, robot, ws, cfg.fine_step)
            if path_feasible(robot, sigma, ws, cfg.fine_step):
                return sigma, stats
    return None, stats


# ---------------------------------------------------------------------------
# learned samplers for tree planners
# ---------------------------------------------------------------------------

class NeuralSampler:
    """One-step-ahead prediction chain feeding a tree planner.

    The chain starts at the start config and walks proposal by proposal
    toward the goal; reaching the goal region resets it to the start.  After
    n_smp draws the sampler turns into a plain uniform one (no goal bias),
    which preserves the underlying planner's completeness.
    """

    def __init__(self, model: PlannerModel, problem: PlanningProblem, cfg: PlanConfig,
                 z: Optional[np.ndarray] = None):
        self.model = model
        self.problem = problem
        self.cfg = cfg
        self.z = model.encode(problem.cloud) if z is None else z
        self.current = problem.start.coords.copy()
        self.draws = 0
        self.resets = 0

    def next(self, rng: np.random.Generator) -> np.ndarray:
        robot, ws = self.problem.robot, self.problem.ws
        goal = self.problem.goal.coords
        if self.draws < self.cfg.n_smp:
            q = self.model.predict_next(self.z, self.current, goal, rng)
            self.current = q
        else:
            q = robot.sample_uniform(ws, rng)
        self.draws += 1
        if robot.in_goal(q, goal):
            self.current = self.problem.start.coords.copy()
            self.resets += 1
        return q


class BidirectionalNeuralSampler:
    """Two interleaved prediction chains, one per endpoint, swapped each draw.

    Chain 0 grows from the start toward chain 1's head and vice versa; a
    chain reaching the opposite endpoint's region resets to its own origin.
    """

    def __init__(self, model: PlannerModel, problem: PlanningProblem, cfg: PlanConfig,
                 z: Optional[np.ndarray] = None):
        self.model = model
        self.problem = problem
        self.cfg = cfg
        self.z = model.encode(problem.cloud) if z is None else z
        self.origins = [problem.start.coords.copy(), problem.goal.coords.copy()]
        self.chains = [problem.start.coords.copy(), problem.goal.coords.copy()]
        self.parity = 0
        self.draws = 0
        self.resets = [0, 0]

    def next(self, rng: np.random.Generator) -> np.ndarray:
        robot, ws = self.problem.robot, self.problem.ws
        if self.draws >= self.cfg.n_smp:
            self.draws += 1
            return robot.sample_uniform(ws, rng)
        k = self.parity
        other = 1 - k
        q = self.model.predict_next(self.z, self.chains[k], self.chains[other], rng)
        self.chains[k] = q
        self.draws += 1
        self.parity = other
        anchor = self.origins[other]  # the far endpoint this chain is heading for
        if robot.distance(q, anchor) <= robot.goal_radius:
            self.chains[k] = self.origins[k].copy()
            self.resets[k] += 1
        return q


def plan_with_neural_sampler(
    model: PlannerModel,
    problem: PlanningProblem,
    cfg: PlanConfig,
    max_iters: int,
    rng: np.random.Generator,
    bidirectional: bool = False,
    eta: float = 4.0,
    step: float = 0.05,
    stop_cost: Optional[float] = None,
):
    """Drive the tree planner with learned samples (uniform past n_smp)."""
    cls = BidirectionalNeuralSampler if bidirectional else NeuralSampler
    sampler = cls(model, problem, cfg)
    return rrt_star(
        problem, sampler, max_iters, rng, eta=eta, step=step, stop_cost=stop_cost
    )
