"""Shared fixtures: a trained simple-2D setup, cached on disk across runs.

Building the bundle (expert demos, offline training, feasibility screening,
full-budget comparator runs) takes several minutes, so it is keyed by a hash
of every knob and reused until one changes.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass
from pathlib import Path as FsPath

import numpy as np
import pytest

from neuroplan.data import Dataset, gen_dataset, gen_problem, load_dataset, save_dataset
from neuroplan.models import PlannerModel, TrainHyper, load_model, make_model, save_model, train_offline
from neuroplan.smp import UniformSampler, rrt_star

ACCEPTANCE_LINES: list = []


def pytest_terminal_summary(terminalreporter):
    """Surface the per-criterion verdicts in the run summary, capture or not."""
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.line(line)


FIXTURE_PARAMS = {
    "env": "simple2d",
    "n_workspaces": 12,
    "demos_per_ws": 35,
    "expert_iters": 2000,
    "data_seed": 100,
    "problem_seed": 999,
    "n_problems": 50,
    "feasibility_iters": 10_000,
    "comparator_iters": 20_000,
    "n_comparator": 30,
    "model_seed": 0,
    "latent_dim": 28,
    "predictor_hidden": [512, 512, 256, 128],
    "epochs": 250,
    "batch_size": 256,
    "lr": 1e-3,
    "cae_epochs": 400,
    "lam": 1e-2,
}

CACHE_ROOT = FsPath(__file__).parent / ".cache"


@dataclass
class TrainedSetup:
    """Everything the acceptance suite needs for the seen simple-2D scenario."""

    dataset: Dataset
    model: PlannerModel
    problems: list            # 50 feasibility-screened PlanningProblems
    expert_costs: dict        # problem index -> full-budget tree-search cost
    expert_paths: dict        # problem index -> waypoint array of that run


def _cache_dir() -> FsPath:
    key = hashlib.md5(json.dumps(FIXTURE_PARAMS, sort_keys=True).encode()).hexdigest()[:12]
    return CACHE_ROOT / f"trained-{FIXTURE_PARAMS['env']}-{key}"


def _build(root: FsPath) -> None:
    p = FIXTURE_PARAMS
    print(f"\n[fixture] building trained setup in {root} (one-time, ~7 min)")
    ds = gen_dataset(
        p["env"],
        n_workspaces=p["n_workspaces"],
        seed=p["data_seed"],
        demos_per_ws=p["demos_per_ws"],
        expert_iters=p["expert_iters"],
    )
    print(f"[fixture] dataset: {len(ds.demos)} demos")
    model = make_model(
        "point2d",
        [[-20, 20], [-20, 20]],
        n_cloud_points=ds.clouds[0].n_points,
        latent_dim=p["latent_dim"],
        predictor_hidden=tuple(p["predictor_hidden"]),
        seed=p["model_seed"],
    )
    hyper = TrainHyper(
        epochs=p["epochs"],
        batch_size=p["batch_size"],
        lr=p["lr"],
        cae_epochs=p["cae_epochs"],
        lam=p["lam"],
        seed=p["model_seed"],
    )
    curves = train_offline(model, [(path, ds.clouds[i]) for i, path in ds.demos],
                           "separate", hyper)
    print(f"[fixture] trained: predictor loss {curves['predictor'][0]:.4f} -> "
          f"{curves['predictor'][-1]:.4f}")

    # fresh queries on the training workspaces, screened for feasibility
    robot = ds.robot()
    rng = np.random.default_rng(p["problem_seed"])
    kept = []
    k = 0
    while len(kept) < p["n_problems"]:
        i = k % p["n_workspaces"]
        k += 1
        problem = gen_problem(ds.workspaces[i], robot, ds.clouds[i], rng)
        _path, _tree, st = rrt_star(
            problem, UniformSampler(problem), p["feasibility_iters"],
            np.random.default_rng([p["problem_seed"], k]), stop_cost=math.inf,
        )
        if st.cost is not None:
            kept.append((i, problem))
    ds.problems = [(i, prob.start, prob.goal) for i, prob in kept]
    print(f"[fixture] {len(kept)} feasible seen problems")

    # full-budget comparator runs (near-optimal costs and paths)
    costs, paths = {}, {}
    for idx in range(p["n_comparator"]):
        _i, problem = kept[idx]
        path, _tree, st = rrt_star(
            problem, UniformSampler(problem), p["comparator_iters"],
            np.random.default_rng([p["problem_seed"], 7, idx]),
        )
        if path is not None:
            costs[idx] = st.cost
            paths[idx] = path.as_array().tolist()
    print(f"[fixture] comparator solved {len(costs)}/{p['n_comparator']}")

    save_dataset(ds, root / "dataset")
    save_model(model, root / "model")
    (root / "expert.json").write_text(json.dumps({"costs": costs, "paths": paths}))
    (root / "done.json").write_text(json.dumps(FIXTURE_PARAMS))


@pytest.fixture(scope="session")
def trained_setup() -> TrainedSetup:
    root = _cache_dir()
    if not (root / "done.json").exists():
        root.mkdir(parents=True, exist_ok=True)
        _build(root)
    ds = load_dataset(root / "dataset")
    model = load_model(root / "model")
    expert = json.loads((root / "expert.json").read_text())
    problems = [ds.problem(i) for i in range(len(ds.problems))]
    return TrainedSetup(
        dataset=ds,
        model=model,
        problems=problems,
        expert_costs={int(k): v for k, v in expert["costs"].items()},
        expert_paths={int(k): np.asarray(v) for k, v in expert["paths"].items()},
    )
