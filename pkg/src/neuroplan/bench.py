"""Benchmark harness: run planners over datasets, aggregate success/time/cost.

Every (problem, trial) pair owns an rng stream derived from the bench seed,
so results are reproducible no matter how the worker pool schedules them.
Wall-clock covers the planner call only; dataset IO and model loading stay
outside the timer.
"""

from __future__ import annotations

import csv
import json
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path as FsPath
from typing import Optional

import numpy as np

from .cspace import path_cost
from .data import Dataset
from .models import PlannerModel
from .planner import PlanConfig, plan_path, plan_with_neural_sampler
from .smp import PlanningProblem, UniformSampler, informed_rrt_star, rrt_star

PLANNER_NAMES = (
    "rrt-star",
    "informed-rrt-star",
    "neural-np",
    "neural-hp",
    "neural-smp",
    "neural-smp-bi",
)


class BenchError(ValueError):
    pass


@dataclass(frozen=True)
class PlannerSpec:
    """What to run: planner name plus its budgets.

    stop_costs, when given, carries one per-problem cost threshold (the
    matched-cost stopping rule for classical baselines); stop_at_first makes
    tree planners return on the first solution.
    """

    name: str
    iters: int = 10_000
    eta: float = 4.0
    step: float = 0.05
    goal_radius: float = 1.0
    plan: PlanConfig = field(default_factory=PlanConfig)
    stop_at_first: bool = False
    stop_costs: Optional[tuple] = None

    def __post_init__(self):
        if self.name not in PLANNER_NAMES:
            raise BenchError(f"unknown planner {self.name!r}")

    def needs_model(self) -> bool:
        return self.name.startswith("neural")


@dataclass
class Metrics:
    planner: str
    env: str
    split: str
    success_rate: float
    mean_time_ms: Optional[float]
    std_time_ms: Optional[float]
    mean_cost: Optional[float]
    std_cost: Optional[float]
    n: int
    records: list = field(default_factory=list)

    def row(self) -> dict:
        return {
            "planner": self.planner,
            "env": self.env,
            "split": self.split,
            "success": self.success_rate,
            "t_mean": self.mean_time_ms,
            "t_std": self.std_time_ms,
            "c_mean": self.mean_cost,
            "c_std": self.std_cost,
            "n": self.n,
        }


def _solve(spec: PlannerSpec, problem: PlanningProblem,
           model: Optional[PlannerModel], rng: np.random.Generator,
           stop_cost: Optional[float]):
    """Dispatch one planning call; returns (path, extra-stats dict)."""
    if spec.stop_at_first and stop_cost is None:
        stop_cost = math.inf
    if spec.name == "rrt-star":
        path, _tree, st = rrt_star(
            problem, UniformSampler(problem), spec.iters, rng,
            eta=spec.eta, step=spec.step, stop_cost=stop_cost,
        )
        return path, {"iters": st.iters, "pnet_calls": 0, "oracle_called": False}
    if spec.name == "informed-rrt-star":
        path, _tree, st = informed_rrt_star(
            problem, spec.iters, rng, eta=spec.eta, step=spec.step, stop_cost=stop_cost,
        )
        return path, {"iters": st.iters, "pnet_calls": 0, "oracle_called": False}
    if spec.name in ("neural-np", "neural-hp"):
        cfg = spec.plan.with_oracle(spec.name == "neural-hp")
        path, st = plan_path(model, problem, cfg, rng)
        return path, {
            "iters": None,
            "pnet_calls": st["pnet_calls"],
            "oracle_called": st["oracle_called"],
        }
    path, _tree, st = plan_with_neural_sampler(
        model, problem, spec.plan, spec.iters, rng,
        bidirectional=spec.name.endswith("bi"), eta=spec.eta, step=spec.step,
        stop_cost=stop_cost,
    )
    return path, {
        "iters": st.iters,
        "pnet_calls": min(st.iters, spec.plan.n_smp),
        "oracle_called": False,
    }


def _worker_count() -> int:
    raw = os.environ.get("NEUROPLAN_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def run_bench(
    dataset: Dataset,
    spec: PlannerSpec,
    model: Optional[PlannerModel] = None,
    trials: int = 1,
    seed: int = 0,
) -> Metrics:
    """Run one planner over every problem in the dataset; aggregate metrics.

    Cost and time aggregates cover successful runs only; the success rate is
    reported separately.  Records carry one JSON-ready dict per run.
    """
    if spec.needs_model() and model is None:
        raise BenchError(f"planner {spec.name} requires a trained model")
    if not dataset.problems:
        raise BenchError("dataset has no benchmark problems")
    if spec.stop_costs is not None and len(spec.stop_costs) != len(dataset.problems):
        raise BenchError("stop_costs length must match the problem count")

    jobs = [
        (pid, trial) for pid in range(len(dataset.problems)) for trial in range(trials)
    ]

    def run_one(job):
        pid, trial = job
        problem = dataset.problem(pid, goal_radius=spec.goal_radius)
        rng = np.random.default_rng([seed, pid, trial])
        stop = spec.stop_costs[pid] if spec.stop_costs is not None else None
        t0 = time.perf_counter()
        path, extra = _solve(spec, problem, model, rng, stop)
        wall_ms = (time.perf_counter() - t0) * 1e3
        record = {
            "problem_id": pid,
            "planner": spec.name,
            "success": path is not None,
            "cost": path_cost(path, problem.robot) if path is not None else None,
            "states": len(path) if path is not None else 0,
            "pnet_calls": extra["pnet_calls"],
            "oracle_called": extra["oracle_called"],
            "wall_ms": wall_ms,
            "seed": seed,
            "trial": trial,
        }
        return record

    workers = _worker_count()
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(run_one, jobs))
    else:
        records = [run_one(j) for j in jobs]

    succ = [r for r in records if r["success"]]
    times = np.array([r["wall_ms"] for r in succ])
    costs = np.array([r["cost"] for r in succ])
    return Metrics(
        planner=spec.name,
        env=dataset.env_kind,
        split=dataset.split,
        success_rate=len(succ) / len(records),
        mean_time_ms=float(times.mean()) if succ else None,
        std_time_ms=float(times.std()) if succ else None,
        mean_cost=float(costs.mean()) if succ else None,
        std_cost=float(costs.std()) if succ else None,
        n=len(records),
        records=records,
    )


REPORT_COLUMNS = ["planner", "env", "split", "success", "t_mean", "t_std", "c_mean", "c_std", "n"]


def emit_report(metrics_list, fmt: str, out_path) -> FsPath:
    """One row per (planner, env, split); stable column order; csv or json."""
    if fmt not in ("csv", "json"):
        raise BenchError(f"unknown report format {fmt!r}")
    out = FsPath(out_path)
    out.parent.mkdir(parents=True, exist_ok=True)
    rows = [m.row() for m in metrics_list]
    if fmt == "json":
        out.write_text(json.dumps(rows, indent=2))
        return out
    with out.open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=REPORT_COLUMNS)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: ("" if row[k] is None else row[k]) for k in REPORT_COLUMNS})
    return out


def save_metrics(metrics: Metrics, out_path) -> FsPath:
    """Full dump including per-problem records (for `report` to consume)."""
    out = FsPath(out_path)
    out.parent.mkdir(parents=True, exist_ok=True)
    doc = {"row": metrics.row(), "records": metrics.records}
    out.write_text(json.dumps(doc, indent=2))
    return out


def load_metrics(path) -> Metrics:
    doc = json.loads(FsPath(path).read_text())
    row = doc["row"]
    return Metrics(
        planner=row["planner"],
        env=row["env"],
        split=row["split"],
        success_rate=row["success"],
        mean_time_ms=row["t_mean"],
        std_time_ms=row["t_std"],
        mean_cost=row["c_mean"],
        std_cost=row["c_std"],
        n=row["n"],
        records=doc.get("records", []),
    )
