"""Command-line interface: dataset generation, training, planning, benchmarks."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path as FsPath

import numpy as np

from . import bench as bench_mod
from . import data as data_mod
from .learn import LoopConfig, active_continual_loop, continual_loop
from .models import (
    TrainHyper,
    load_model,
    make_model,
    robot_kind_of,
    save_model,
    train_offline,
)
from .planner import PlanConfig, plan_path

EXIT_OK = 0
EXIT_PLANNER_FAILURE = 1
EXIT_USAGE = 2


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="neuroplan", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    data_p = sub.add_parser("data", help="dataset utilities")
    data_sub = data_p.add_subparsers(dest="data_command", required=True)
    gen = data_sub.add_parser("gen", help="generate a dataset directory")
    gen.add_argument("--env", required=True, choices=sorted(data_mod.ENV_KINDS))
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--out", required=True)
    gen.add_argument("--workspaces", type=int, default=data_mod.TRAIN_WORKSPACES)
    gen.add_argument("--demos", type=int, default=0, help="demos per workspace")
    gen.add_argument("--problems", type=int, default=0, help="problems per workspace")
    gen.add_argument("--split", choices=("seen", "unseen"), default="seen")
    gen.add_argument("--expert-iters", type=int, default=data_mod.DEFAULT_EXPERT_ITERS)
    gen.add_argument("--workspace-seed", type=int, default=None)

    train = sub.add_parser("train", help="train a planner model")
    train_sub = train.add_subparsers(dest="train_command", required=True)
    off = train_sub.add_parser("offline", help="batch training from a demo dataset")
    off.add_argument("--data", required=True)
    off.add_argument("--out", required=True)
    off.add_argument("--mode", choices=("separate", "end_to_end"), default="separate")
    off.add_argument("--seed", type=int, default=0)
    off.add_argument("--epochs", type=int, default=200)
    off.add_argument("--batch-size", type=int, default=256)
    off.add_argument("--lr", type=float, default=1e-3)
    for name in ("continual", "active"):
        t = train_sub.add_parser(name, help=f"{name} learning from a problem stream")
        t.add_argument("--env", required=True, choices=sorted(data_mod.ENV_KINDS))
        t.add_argument("--steps", type=int, default=400)
        t.add_argument("--stream-workspaces", type=int, default=20)
        t.add_argument("--seed", type=int, default=0)
        t.add_argument("--out", required=True)
        t.add_argument("--expert-iters", type=int, default=2000)
        t.add_argument("--log", default=None, help="JSON-lines training log path")
        if name == "active":
            t.add_argument("--nc", type=int, default=50, help="expert-only warmup steps")

    plan = sub.add_parser("plan", help="solve one problem JSON with a trained model")
    plan.add_argument("--problem", required=True)
    plan.add_argument("--model", required=True)
    plan.add_argument("--oracle", action="store_true", help="enable hybrid replanning")
    plan.add_argument("--seed", type=int, default=0)
    plan.add_argument("--out", default=None, help="write the result record here")

    bench = sub.add_parser("bench", help="run one planner over a dataset")
    bench.add_argument("--data", required=True)
    bench.add_argument("--planner", required=True, choices=bench_mod.PLANNER_NAMES)
    bench.add_argument("--model", default=None)
    bench.add_argument("--seed", type=int, default=0)
    bench.add_argument("--iters", type=int, default=10_000)
    bench.add_argument("--trials", type=int, default=1)
    bench.add_argument("--stop-at-first", action="store_true")
    bench.add_argument("--out", required=True)

    report = sub.add_parser("report", help="aggregate bench outputs into a table")
    report.add_argument("--inputs", nargs="+", required=True)
    report.add_argument("--format", choices=("csv", "json"), default="csv")
    report.add_argument("--out", required=True)
    return p


def _cmd_data_gen(args) -> int:
    ds = data_mod.gen_dataset(
        args.env,
        n_workspaces=args.workspaces,
        seed=args.seed,
        demos_per_ws=args.demos,
        problems_per_ws=args.problems,
        split=args.split,
        expert_iters=args.expert_iters,
        workspace_seed=args.workspace_seed,
    )
    data_mod.save_dataset(ds, args.out)
    print(f"wrote {args.env}/{args.split} dataset: {len(ds.workspaces)} workspaces, "
          f"{len(ds.demos)} demos, {len(ds.problems)} problems -> {args.out}")
    return EXIT_OK


def _cmd_train_offline(args) -> int:
    ds = data_mod.load_dataset(args.data)
    if not ds.demos:
        print("dataset has no demos to train on", file=sys.stderr)
        return EXIT_USAGE
    robot = ds.robot()
    model = make_model(
        robot_kind_of(robot),
        data_mod.env_bounds(ds.env_kind),
        n_cloud_points=ds.clouds[0].n_points,
        seed=args.seed,
    )
    demos = [(p, ds.clouds[i]) for i, p in ds.demos]
    hyper = TrainHyper(
        epochs=args.epochs, batch_size=args.batch_size, lr=args.lr, seed=args.seed
    )
    curves = train_offline(model, demos, args.mode, hyper)
    save_model(model, args.out)
    final = {k: v[-1] for k, v in curves.items()}
    print(f"trained ({args.mode}) on {len(demos)} demos; final losses {final}; -> {args.out}")
    return EXIT_OK


def _problem_stream(env: str, n_workspaces: int, steps: int, seed: int):
    robot = data_mod.make_robot(env)
    n_pc = data_mod.cloud_size(env)
    pool = []
    for i in range(n_workspaces):
        ws = data_mod.gen_workspace(env, np.random.default_rng([seed, i]))
        cloud = data_mod.gen_point_cloud(ws, n_pc, np.random.default_rng([seed, i, 1]))
        pool.append((ws, cloud))
    rng = np.random.default_rng([seed, 99])
    stream = []
    for t in range(steps):
        ws, cloud = pool[t % len(pool)]
        stream.append(data_mod.gen_problem(ws, robot, cloud, rng))
    return stream


def _cmd_train_stream(args, active: bool) -> int:
    stream = _problem_stream(args.env, args.stream_workspaces, args.steps, args.seed)
    model = make_model(
        robot_kind_of(data_mod.make_robot(args.env)),
        data_mod.env_bounds(args.env),
        n_cloud_points=data_mod.cloud_size(args.env),
        seed=args.seed,
    )
    expert_rng = np.random.default_rng([args.seed, 7])

    def expert(problem):
        return data_mod.gen_demo(problem, args.expert_iters, expert_rng)

    rng = np.random.default_rng(args.seed)
    if active:
        cfg = LoopConfig(pretrain_steps=args.nc)
        model, demo_count, log = active_continual_loop(model, stream, expert, rng, cfg)
        print(f"active continual: {demo_count} expert demos over {args.steps} problems")
    else:
        model, log = continual_loop(model, stream, expert, rng)
        print(f"continual: {args.steps} expert demos consumed")
    save_model(model, args.out)
    if args.log:
        with open(args.log, "w") as fh:
            for record in log:
                fh.write(json.dumps(record) + "\n")
    print(f"model -> {args.out}")
    return EXIT_OK


def _cmd_plan(args) -> int:
    problem = data_mod.problem_from_json(json.loads(FsPath(args.problem).read_text()))
    model = load_model(args.model)
    cfg = PlanConfig(plan_oracle=args.oracle)
    rng = np.random.default_rng(args.seed)
    path, stats = plan_path(model, problem, cfg, rng)
    from .cspace import path_cost

    record = {
        "success": path is not None,
        "cost": path_cost(path, problem.robot) if path is not None else None,
        "states": path.as_array().tolist() if path is not None else [],
        "pnet_calls": stats["pnet_calls"],
        "oracle_called": stats["oracle_called"],
        "seed": args.seed,
    }
    text = json.dumps(record, indent=2)
    if args.out:
        FsPath(args.out).write_text(text)
    print(text)
    return EXIT_OK if path is not None else EXIT_PLANNER_FAILURE


def _cmd_bench(args) -> int:
    ds = data_mod.load_dataset(args.data)
    spec = bench_mod.PlannerSpec(
        name=args.planner, iters=args.iters, stop_at_first=args.stop_at_first
    )
    model = load_model(args.model) if args.model else None
    metrics = bench_mod.run_bench(ds, spec, model=model, trials=args.trials, seed=args.seed)
    bench_mod.save_metrics(metrics, args.out)
    print(f"{args.planner}: success {metrics.success_rate:.3f} over {metrics.n} runs -> {args.out}")
    return EXIT_OK


def _cmd_report(args) -> int:
    metrics = [bench_mod.load_metrics(p) for p in args.inputs]
    out = bench_mod.emit_report(metrics, args.format, args.out)
    print(f"report -> {out}")
    return EXIT_OK


def cli(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 0 for --help, 2 for usage errors
        return int(exc.code or 0)
    try:
        if args.command == "data":
            return _cmd_data_gen(args)
        if args.command == "train":
            if args.train_command == "offline":
                return _cmd_train_offline(args)
            return _cmd_train_stream(args, active=args.train_command == "active")
        if args.command == "plan":
            return _cmd_plan(args)
        if args.command == "bench":
            return _cmd_bench(args)
        if args.command == "report":
            return _cmd_report(args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return EXIT_USAGE


def main() -> None:
    sys.exit(cli())


if __name__ == "__main__":
    main()
