"""Continual and active continual learning with gradient episodic memory.

Streaming demos are distilled into one-step training samples.  An episodic
memory (with pluggable selection policies) anchors a first-order constraint:
the proposed gradient is projected so the loss on remembered samples cannot
increase to first order.  A separate append-only replay buffer feeds periodic
rehearsal steps.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np
from scipy.spatial.distance import cdist

from .cspace import Path
from .models import (
    PlannerModel,
    combined_params,
    one_step_pairs,
    samples_loss_and_grad,
)
from .neuralnet import AdamState, Gradient, NetParams, adam_step


class LearnError(ValueError):
    pass


class TrainingSample(NamedTuple):
    """One supervised pair: predict `target` from (current, goal, cloud)."""

    current: np.ndarray
    goal: np.ndarray
    cloud_id: int
    target: np.ndarray


def samples_from_demo(demo: Path, cloud_id: int) -> list:
    cur, nxt, goal = one_step_pairs(demo)
    return [
        TrainingSample(cur[i], goal, cloud_id, nxt[i]) for i in range(cur.shape[0])
    ]


def default_features(sample: TrainingSample) -> np.ndarray:
    """Coverage-policy feature vector: raw (current, goal, target) coordinates."""
    return np.concatenate([sample.current, sample.goal, sample.target])


class EpisodicMemory:
    """Finite sample store with a running count of everything ever offered."""

    def __init__(self, capacity: int):
        if capacity < 0:
            raise LearnError("capacity must be non-negative")
        self.capacity = capacity
        self.items: list = []
        self.losses: list = []
        self.seen_count = 0

    def __len__(self) -> int:
        return len(self.items)


def reservoir_update(mem: EpisodicMemory, sample, rng: np.random.Generator) -> EpisodicMemory:
    """Classic reservoir step: accept the i-th offer with probability |M|/i.

    While the memory is filling the acceptance probability is >= 1, so
    everything is kept; afterwards an accepted sample replaces a uniformly
    random resident.  Every offered item ends up retained with probability
    capacity/N after N offers.
    """
    mem.seen_count += 1
    if mem.capacity == 0:
        return mem
    if len(mem.items) < mem.capacity:
        mem.items.append(sample)
        mem.losses.append(None)
        return mem
    if rng.random() < mem.capacity / mem.seen_count:
        j = int(rng.integers(mem.capacity))
        mem.items[j] = sample
        mem.losses[j] = None
    return mem


SELECTION_POLICIES = ("reservoir", "surprise", "reward", "coverage_knn")


def select_update(
    mem: EpisodicMemory,
    sample,
    loss_of_sample: float | None,
    policy: str,
    rng: np.random.Generator,
    feature_fn: Callable = default_features,
) -> EpisodicMemory:
    """Offer one sample under the chosen selection policy.

    surprise keeps the highest-loss residents, reward the lowest-loss;
    coverage_knn spreads the memory out in feature space (O(|M|^2) per
    offer, intended for modest capacities).
    """
    if policy == "reservoir":
        return reservoir_update(mem, sample, rng)
    if policy not in SELECTION_POLICIES:
        raise LearnError(f"unknown selection policy {policy!r}")
    mem.seen_count += 1
    if mem.capacity == 0:
        return mem
    if policy in ("surprise", "reward"):
        if loss_of_sample is None:
            raise LearnError(f"{policy} policy needs the sample's loss")
        if len(mem.items) < mem.capacity:
            mem.items.append(sample)
            mem.losses.append(float(loss_of_sample))
            return mem
        if policy == "surprise":
            j = int(np.argmin(mem.losses))
            if loss_of_sample > mem.losses[j]:
                mem.items[j] = sample
                mem.losses[j] = float(loss_of_sample)
        else:
            j = int(np.argmax(mem.losses))
            if loss_of_sample < mem.losses[j]:
                mem.items[j] = sample
                mem.losses[j] = float(loss_of_sample)
        return mem
    # coverage_knn
    if len(mem.items) < mem.capacity:
        mem.items.append(sample)
        mem.losses.append(None)
        return mem
    feats = np.stack([feature_fn(s) for s in mem.items])
    new_feat = feature_fn(sample)[None, :]
    d_new = float(cdist(new_feat, feats).min())
    pair = cdist(feats, feats)
    np.fill_diagonal(pair, np.inf)
    nn = pair.min(axis=1)
    if d_new < float(np.median(nn)):
        return mem  # too close to what we already hold
    j = int(np.argmin(nn))
    mem.items[j] = sample
    mem.losses[j] = None
    return mem


class ReplayBuffer:
    """Append-only rehearsal pool with a replay period and batch size."""

    def __init__(self, replay_period: int = 100, batch_size: int = 100):
        if replay_period < 1 or batch_size < 1:
            raise LearnError("replay_period and batch_size must be >= 1")
        self.items: list = []
        self.replay_period = replay_period
        self.batch_size = batch_size

    def extend(self, samples) -> None:
        self.items.extend(samples)

    def sample_batch(self, rng: np.random.Generator) -> list:
        idx = rng.choice(len(self.items), size=self.batch_size, replace=False)
        return [self.items[i] for i in idx]

    def __len__(self) -> int:
        return len(self.items)


# ---------------------------------------------------------------------------
# constrained update
# ---------------------------------------------------------------------------

def memory_gradient(model: PlannerModel, mem: EpisodicMemory, clouds) -> np.ndarray:
    """Mean squared-error gradient over everything in memory (dropout off)."""
    if not mem.items:
        raise LearnError("memory gradient over an empty memory")
    _, g = samples_loss_and_grad(model, mem.items, clouds)
    return g


def gem_project(g: np.ndarray, g_mem: np.ndarray) -> np.ndarray:
    """Project g onto the halfspace <g', g_mem> >= 0, minimally in L2.

    When the proposed step already agrees with the memory gradient the input
    is returned unchanged; otherwise the single-constraint projection has the
    closed form g - (<g, g_mem>/<g_mem, g_mem>) g_mem.
    """
    dot = float(g @ g_mem)
    if dot >= 0.0:
        return g
    denom = float(g_mem @ g_mem)
    if denom == 0.0:
        return g
    return g - (dot / denom) * g_mem


@dataclass
class GemOptimizer:
    """Optimizer over the combined (encoder, predictor) parameter vector.

    Plain SGD by default: the projected gradient's first-order guarantee
    (memory loss cannot increase) only holds when the update direction is
    the projected gradient itself.  Adam is available for callers that
    prefer speed over the strict guarantee.
    """

    model: PlannerModel
    lr: float = 1e-3
    kind: str = "sgd"
    state: AdamState | None = None

    @classmethod
    def for_model(cls, model: PlannerModel, lr: float = 1e-3, kind: str = "sgd") -> "GemOptimizer":
        state = None
        if kind == "adam":
            state = AdamState.for_params(combined_params(model).size, lr=lr)
        elif kind != "sgd":
            raise LearnError(f"unknown optimizer kind {kind!r}")
        return cls(model, lr=lr, kind=kind, state=state)

    def step(self, grad_flat: np.ndarray) -> None:
        if self.kind == "sgd":
            ne = self.model.encoder.params.flat.size
            self.model.encoder.params.flat -= self.lr * grad_flat[:ne]
            self.model.predictor.params.flat -= self.lr * grad_flat[ne:]
            return
        combined = combined_params(self.model)
        params = NetParams(combined)
        adam_step(params, Gradient(grad_flat), self.state)
        ne = self.model.encoder.params.flat.size
        self.model.encoder.params.flat[:] = combined[:ne]
        self.model.predictor.params.flat[:] = combined[ne:]


def _constrained_step(model, opt, samples, mem, clouds, rng):
    """One projected optimizer step on `samples`; returns the sample loss."""
    loss, g = samples_loss_and_grad(model, samples, clouds, rng)
    if mem.items:
        g_mem = memory_gradient(model, mem, clouds)
        g = gem_project(g, g_mem)
    opt.step(g)
    return loss


def continual_step(
    model: PlannerModel,
    demo: Path,
    cloud_id: int,
    mem: EpisodicMemory,
    buf: ReplayBuffer,
    clouds,
    opt: GemOptimizer,
    rng: np.random.Generator,
    policy: str = "reservoir",
    feature_fn: Callable = default_features,
) -> dict:
    """Absorb one expert demo: memory/buffer updates plus one projected step.

    The memory-gradient constraint is evaluated against the memory state
    before this demo's samples are offered, so the constraint refers purely
    to past data.
    """
    samples = samples_from_demo(demo, cloud_id)
    loss, g = samples_loss_and_grad(model, samples, clouds, rng)
    if mem.items:
        g_mem = memory_gradient(model, mem, clouds)
        g = gem_project(g, g_mem)
    buf.extend(samples)
    per_sample_losses = _per_sample_losses(model, samples, clouds) if policy in (
        "surprise",
        "reward",
    ) else [None] * len(samples)
    for s, sl in zip(samples, per_sample_losses):
        select_update(mem, s, sl, policy, rng, feature_fn)
    opt.step(g)
    return {"loss": loss, "demo_len": len(demo), "mem_size": len(mem), "buf_size": len(buf)}


def _per_sample_losses(model, samples, clouds):
    return [samples_loss_and_grad(model, [s], clouds)[0] for s in samples]


def rehearse(
    model: PlannerModel,
    buf: ReplayBuffer,
    mem: EpisodicMemory,
    clouds,
    opt: GemOptimizer,
    rng: np.random.Generator,
    t: int,
) -> bool:
    """Projected step on a uniform replay batch every replay_period steps."""
    if t % buf.replay_period != 0:
        return False
    if len(buf) <= buf.batch_size:
        return False
    batch = buf.sample_batch(rng)
    _constrained_step(model, opt, batch, mem, clouds, rng)
    return True


def backward_transfer(success_before: float, success_after: float) -> float:
    """Change in success rate on remembered tasks after new learning."""
    for v in (success_before, success_after):
        if not 0.0 <= v <= 1.0:
            raise LearnError("success rates must lie in [0, 1]")
    return success_after - success_before


# ---------------------------------------------------------------------------
# learning loops
# ---------------------------------------------------------------------------

@dataclass
class LoopConfig:
    """Shared knobs for the streaming loops."""

    memory_capacity: int = 10_000
    replay_period: int = 100
    replay_batch: int = 100
    pretrain_steps: int = 50  # expert-only warmup before the planner is trusted
    lr: float = 1e-3
    policy: str = "reservoir"
    optimizer: str = "sgd"


@dataclass
class StreamState:
    """Mutable containers shared across a learning run."""

    mem: EpisodicMemory
    buf: ReplayBuffer
    opt: GemOptimizer
    clouds: dict = field(default_factory=dict)
    cloud_ids: dict = field(default_factory=dict)

    @classmethod
    def fresh(cls, model: PlannerModel, cfg: LoopConfig) -> "StreamState":
        return cls(
            mem=EpisodicMemory(cfg.memory_capacity),
            buf=ReplayBuffer(cfg.replay_period, cfg.replay_batch),
            opt=GemOptimizer.for_model(model, lr=cfg.lr, kind=cfg.optimizer),
        )

    def cloud_id_for(self, cloud) -> int:
        key = id(cloud)
        if key not in self.cloud_ids:
            cid = len(self.clouds)
            self.cloud_ids[key] = cid
            self.clouds[cid] = cloud
        return self.cloud_ids[key]


def continual_loop(
    model: PlannerModel,
    problems,
    expert: Callable,
    rng: np.random.Generator,
    cfg: LoopConfig | None = None,
    state: StreamState | None = None,
):
    """Every streamed problem gets an expert demo and one projected step."""
    cfg = cfg or LoopConfig()
    state = state or StreamState.fresh(model, cfg)
    log = []
    for t, problem in enumerate(problems):
        demo = expert(problem)
        record = {"t": t, "expert_called": True, "demo_len": 0, "loss": None,
                  "mem_size": len(state.mem), "buf_size": len(state.buf)}
        if demo is not None:
            cid = state.cloud_id_for(problem.cloud)
            info = continual_step(
                model, demo, cid, state.mem, state.buf, state.clouds, state.opt,
                rng, cfg.policy,
            )
            record.update(info)
        rehearse(model, state.buf, state.mem, state.clouds, state.opt, rng, t)
        log.append(record)
    return model, log


def active_continual_loop(
    model: PlannerModel,
    problems,
    expert: Callable,
    rng: np.random.Generator,
    cfg: LoopConfig | None = None,
    plan_cfg=None,
    state: StreamState | None = None,
):
    """Ask the expert only when the planner itself fails (after a warmup).

    Returns (model, demo_count, log); demo_count is the number of expert
    demonstrations actually consumed, the data-efficiency metric.
    """
    from .planner import PlanConfig, plan_path  # local import avoids a cycle

    cfg = cfg or LoopConfig()
    state = state or StreamState.fresh(model, cfg)
    plan_cfg = plan_cfg or PlanConfig()
    attempt_cfg = plan_cfg.with_oracle(False)
    demo_count = 0
    log = []
    for t, problem in enumerate(problems):
        sigma = None
        attempted = False
        if t > cfg.pretrain_steps:
            attempted = True
            sigma, _ = plan_path(model, problem, attempt_cfg, rng)
        record = {"t": t, "attempted": attempted, "planner_solved": sigma is not None,
                  "expert_called": False, "demo_len": 0, "loss": None,
                  "mem_size": len(state.mem), "buf_size": len(state.buf)}
        if sigma is None:
            demo = expert(problem)
            record["expert_called"] = True
            if demo is not None:
                demo_count += 1
                cid = state.cloud_id_for(problem.cloud)
                info = continual_step(
                    model, demo, cid, state.mem, state.buf, state.clouds,
                    state.opt, rng, cfg.policy,
                )
                record.update(info)
        rehearse(model, state.buf, state.mem, state.clouds, state.opt, rng, t)
        log.append(record)
    return model, demo_count, log
