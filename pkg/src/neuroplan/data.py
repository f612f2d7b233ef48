"""Dataset generation and serialization.

Workspaces are reproducible functions of (seed, index): every worker derives
its own generator stream, so regenerating with the same seed is bit-identical
no matter how the work is scheduled.  Datasets persist as a directory of
JSON metadata plus raw little-endian float64 blocks, each guarded by a CRC32
in the manifest.
"""

from __future__ import annotations

import json
import zlib
from dataclasses import dataclass, field
from pathlib import Path as FsPath
from typing import Optional

import numpy as np

from .cspace import (
    Box,
    Config,
    Path,
    PointRobot2D,
    PointRobot3D,
    RigidBodySE2,
    RobotModel,
    Workspace,
    path_feasible,
    sample_free,
)
from .models import POINTS_PER_CLOUD, PointCloud
from .planner import lazy_states_contraction
from .smp import PlanningProblem, UniformSampler, rrt_star

WORKSPACE_HALF_EXTENT = 20.0
OBSTACLE_SIDE = 5.0
SE2_BODY = [[-1.25, -0.75], [1.25, -0.75], [1.25, 0.75], [-1.25, 0.75]]

ENV_KINDS = {
    "simple2d": {"m": 2, "n_obstacles": 7, "robot": "point2d"},
    "complex2d": {"m": 2, "n_obstacles": 10, "robot": "point2d"},
    "complex3d": {"m": 3, "n_obstacles": 10, "robot": "point3d"},
    "rigid_se2": {"m": 2, "n_obstacles": 7, "robot": "se2"},
}

FINE_STEP = 0.05
DEFAULT_EXPERT_ITERS = 10_000
DEFAULT_MIN_SEPARATION = 5.0

# desk-scale corpus sizes
TRAIN_WORKSPACES = 40
TRAIN_DEMOS_PER_WS = 100
SEEN_TEST_WORKSPACES = 10
SEEN_TEST_PROBLEMS_PER_WS = 50
UNSEEN_TEST_WORKSPACES = 5
UNSEEN_TEST_PROBLEMS_PER_WS = 100
UNSEEN_SEED_OFFSET = 100_000  # keeps seen/unseen workspace streams disjoint


class DataError(ValueError):
    pass


def env_bounds(env_kind: str) -> list:
    m = ENV_KINDS[env_kind]["m"]
    return [[-WORKSPACE_HALF_EXTENT, WORKSPACE_HALF_EXTENT]] * m


def make_robot(env_kind: str, goal_radius: float = 1.0) -> RobotModel:
    kind = ENV_KINDS[env_kind]["robot"]
    if kind == "point2d":
        return PointRobot2D(goal_radius)
    if kind == "point3d":
        return PointRobot3D(goal_radius)
    return RigidBodySE2(SE2_BODY, goal_radius)


def cloud_size(env_kind: str) -> int:
    return POINTS_PER_CLOUD[ENV_KINDS[env_kind]["m"]]


def gen_workspace(env_kind: str, rng: np.random.Generator, max_tries: int = 2000) -> Workspace:
    """Uniformly placed, pairwise non-overlapping square/cube obstacles."""
    spec = ENV_KINDS[env_kind]
    m, count = spec["m"], spec["n_obstacles"]
    half = OBSTACLE_SIDE / 2.0
    lo = -WORKSPACE_HALF_EXTENT + half
    hi = WORKSPACE_HALF_EXTENT - half
    centers: list = []
    tries = 0
    while len(centers) < count:
        if tries >= max_tries:
            raise DataError("obstacle placement failed after retries")
        tries += 1
        c = rng.uniform(lo, hi, size=m)
        # positive-measure overlap only; touching faces are fine
        if any(np.all(np.abs(c - other) < OBSTACLE_SIDE) for other in centers):
            continue
        centers.append(c)
    boxes = [Box(tuple(c), (half,) * m) for c in centers]
    return Workspace(env_bounds(env_kind), boxes)


def gen_workspaces(env_kind: str, count: int, seed: int) -> list:
    """Deterministic per (seed, index); identical seeds are bit-identical."""
    if count < 1:
        raise DataError("count must be >= 1")
    return [gen_workspace(env_kind, np.random.default_rng([seed, i])) for i in range(count)]


def gen_point_cloud(ws: Workspace, n_points: int, rng: np.random.Generator) -> PointCloud:
    """Surface samples in a fixed order: obstacle, then face, then sample index.

    Faces are enumerated axis-major (low side before high side); counts are
    split as evenly as possible with remainders going to the earlier slots.
    """
    m = ws.dim
    obstacles = ws.obstacles
    if not obstacles:
        raise DataError("point cloud of an empty workspace is undefined")
    per_obs = _split_evenly(n_points, len(obstacles))
    pts = np.empty((n_points, m))
    row = 0
    for box, n_box in zip(obstacles, per_obs):
        lo, hi = box.lo, box.hi
        per_face = _split_evenly(n_box, 2 * m)
        f = 0
        for axis in range(m):
            for side in (lo[axis], hi[axis]):
                k = per_face[f]
                f += 1
                if k == 0:
                    continue
                face_pts = rng.uniform(lo, hi, size=(k, m))
                face_pts[:, axis] = side
                pts[row : row + k] = face_pts
                row += k
    return PointCloud(pts)


def _split_evenly(total: int, parts: int) -> list:
    base, extra = divmod(total, parts)
    return [base + (1 if i < extra else 0) for i in range(parts)]


def gen_problem(
    ws: Workspace,
    robot: RobotModel,
    cloud: Optional[PointCloud],
    rng: np.random.Generator,
    min_separation: float = DEFAULT_MIN_SEPARATION,
    max_tries: int = 200,
) -> PlanningProblem:
    """Random free start/goal pair with a minimum separation."""
    for _ in range(max_tries):
        start = sample_free(robot, ws, rng)
        goal = sample_free(robot, ws, rng)
        if robot.distance(start.coords, goal.coords) >= min_separation:
            return PlanningProblem(robot, ws, start, goal, cloud)
    raise DataError("could not sample a separated start/goal pair")


def gen_demo(
    problem: PlanningProblem,
    expert_iters: int = DEFAULT_EXPERT_ITERS,
    rng: Optional[np.random.Generator] = None,
    eta: float = 4.0,
) -> Optional[Path]:
    """Near-optimal expert demo: full-budget tree search plus contraction.

    Returns None when the expert cannot solve the query within its budget;
    every returned demo ends exactly at the goal config and passes the
    fine-step feasibility check.
    """
    rng = rng or np.random.default_rng(0)
    path, _tree, _stats = rrt_star(
        problem, UniformSampler(problem), expert_iters, rng,
        eta=eta, step=FINE_STEP, connect_exact=True,
    )
    if path is None:
        return None
    path = lazy_states_contraction(path, problem.robot, problem.ws, FINE_STEP)
    if not path_feasible(problem.robot, path, problem.ws, FINE_STEP):
        return None  # defensive; contraction preserves feasibility
    return path


@dataclass
class Dataset:
    """Workspaces with clouds, plus demos and/or benchmark problems."""

    env_kind: str
    split: str  # "seen" | "unseen"
    seed: int
    workspaces: list = field(default_factory=list)
    clouds: list = field(default_factory=list)
    demos: list = field(default_factory=list)      # (workspace_id, Path)
    problems: list = field(default_factory=list)   # (workspace_id, Config, Config)

    def robot(self, goal_radius: float = 1.0) -> RobotModel:
        return make_robot(self.env_kind, goal_radius)

    def problem(self, i: int, goal_radius: float = 1.0) -> PlanningProblem:
        ws_id, start, goal = self.problems[i]
        return PlanningProblem(
            self.robot(goal_radius), self.workspaces[ws_id], start, goal,
            self.clouds[ws_id],
        )


def gen_dataset(
    env_kind: str,
    n_workspaces: int,
    seed: int,
    demos_per_ws: int = 0,
    problems_per_ws: int = 0,
    split: str = "seen",
    expert_iters: int = DEFAULT_EXPERT_ITERS,
    min_separation: float = DEFAULT_MIN_SEPARATION,
    demo_resamples: int = 5,
    workspace_seed: Optional[int] = None,
) -> Dataset:
    """Generate workspaces, clouds, and (optionally) demos and problems.

    workspace_seed decouples the workspace layouts from the problem draws so
    a seen-test set can reuse training workspaces with fresh queries.
    """
    if env_kind not in ENV_KINDS:
        raise DataError(f"unknown env kind {env_kind!r}")
    ws_seed = seed if workspace_seed is None else workspace_seed
    ds = Dataset(env_kind=env_kind, split=split, seed=seed)
    robot = make_robot(env_kind)
    n_pc = cloud_size(env_kind)
    for i in range(n_workspaces):
        ws = gen_workspace(env_kind, np.random.default_rng([ws_seed, i]))
        cloud = gen_point_cloud(ws, n_pc, np.random.default_rng([ws_seed, i, 1]))
        ds.workspaces.append(ws)
        ds.clouds.append(cloud)
        work_rng = np.random.default_rng([seed, i, 2])
        made = 0
        attempts = 0
        while made < demos_per_ws and attempts < demos_per_ws * demo_resamples:
            attempts += 1
            problem = gen_problem(ws, robot, cloud, work_rng, min_separation)
            demo = gen_demo(problem, expert_iters, work_rng)
            if demo is None:
                continue
            ds.demos.append((i, demo))
            made += 1
        if made < demos_per_ws:
            raise DataError(f"workspace {i}: only {made}/{demos_per_ws} demos")
        for _ in range(problems_per_ws):
            problem = gen_problem(ws, robot, cloud, work_rng, min_separation)
            ds.problems.append((i, problem.start, problem.goal))
    return ds


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

DATASET_FORMAT_VERSION = 1


def _write_block(out_dir: FsPath, name: str, arr: np.ndarray) -> dict:
    data = np.ascontiguousarray(arr, dtype="<f8").tobytes()
    (out_dir / f"{name}.bin").write_bytes(data)
    return {
        "file": f"{name}.bin",
        "crc32": zlib.crc32(data),
        "dtype": "<f8",
        "shape": list(arr.shape),
    }


def _read_block(src: FsPath, meta: dict) -> np.ndarray:
    data = (src / meta["file"]).read_bytes()
    if zlib.crc32(data) != meta["crc32"]:
        raise DataError(f"checksum mismatch in {meta['file']}")
    flat = np.frombuffer(data, dtype=meta["dtype"])
    shape = tuple(meta["shape"])
    if flat.size != int(np.prod(shape)):
        raise DataError(f"block {meta['file']} size does not match its declared shape")
    return flat.reshape(shape).astype(float)


def save_dataset(ds: Dataset, out_dir) -> None:
    out = FsPath(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "workspaces.json").write_text(
        json.dumps([ws.to_json() for ws in ds.workspaces])
    )
    blocks = {}
    if ds.clouds:
        blocks["clouds"] = _write_block(out, "clouds", np.stack([c.points for c in ds.clouds]))
    demo_index = []
    if ds.demos:
        states = np.concatenate([p.as_array() for _i, p in ds.demos])
        demo_index = [[int(i), len(p)] for i, p in ds.demos]
        blocks["demo_states"] = _write_block(out, "demo_states", states)
    problem_ws = []
    if ds.problems:
        arr = np.stack(
            [np.stack([s.coords, g.coords]) for _i, s, g in ds.problems]
        )
        problem_ws = [int(i) for i, _s, _g in ds.problems]
        blocks["problems"] = _write_block(out, "problems", arr)
    manifest = {
        "format_version": DATASET_FORMAT_VERSION,
        "env_kind": ds.env_kind,
        "split": ds.split,
        "seed": ds.seed,
        "demo_index": demo_index,
        "problem_ws": problem_ws,
        "blocks": blocks,
    }
    (out / "manifest.json").write_text(json.dumps(manifest))


def load_dataset(src_dir) -> Dataset:
    src = FsPath(src_dir)
    manifest = json.loads((src / "manifest.json").read_text())
    if manifest.get("format_version") != DATASET_FORMAT_VERSION:
        raise DataError(
            f"unsupported dataset format version {manifest.get('format_version')!r}"
        )
    env_kind = manifest["env_kind"]
    if env_kind not in ENV_KINDS:
        raise DataError(f"unknown env kind {env_kind!r}")
    m = ENV_KINDS[env_kind]["m"]
    d = 3 if ENV_KINDS[env_kind]["robot"] == "se2" else m
    ds = Dataset(env_kind=env_kind, split=manifest["split"], seed=manifest["seed"])
    ds.workspaces = [
        Workspace.from_json(obj) for obj in json.loads((src / "workspaces.json").read_text())
    ]
    if any(ws.dim != m for ws in ds.workspaces):
        raise DataError("workspace dimensionality does not match the env kind")
    blocks = manifest["blocks"]
    if "clouds" in blocks:
        clouds = _read_block(src, blocks["clouds"])
        if clouds.ndim != 3 or clouds.shape[0] != len(ds.workspaces) or clouds.shape[2] != m:
            raise DataError("cloud block shape does not match the workspaces")
        ds.clouds = [PointCloud(c) for c in clouds]
    if "demo_states" in blocks:
        states = _read_block(src, blocks["demo_states"])
        if states.shape[1] != d:
            raise DataError("demo state width does not match the env kind")
        off = 0
        for ws_id, length in manifest["demo_index"]:
            ds.demos.append((ws_id, Path(states[off : off + length])))
            off += length
        if off != states.shape[0]:
            raise DataError("demo index does not cover the demo block")
    if "problems" in blocks:
        arr = _read_block(src, blocks["problems"])
        if arr.ndim != 3 or arr.shape[1] != 2 or arr.shape[2] != d:
            raise DataError("problem block shape does not match the env kind")
        for ws_id, pair in zip(manifest["problem_ws"], arr):
            ds.problems.append((ws_id, Config(pair[0]), Config(pair[1])))
    return ds


# ---------------------------------------------------------------------------
# single-problem JSON (CLI surface)
# ---------------------------------------------------------------------------

def robot_to_json(robot: RobotModel) -> dict:
    if isinstance(robot, RigidBodySE2):
        return {
            "kind": "se2",
            "goal_radius": robot.goal_radius,
            "body": robot.body.tolist(),
            "angle_weight": robot.angle_weight,
        }
    return {"kind": f"point{robot.d}d", "goal_radius": robot.goal_radius}


def robot_from_json(obj: dict) -> RobotModel:
    kind = obj["kind"]
    if kind == "point2d":
        return PointRobot2D(obj.get("goal_radius", 1.0))
    if kind == "point3d":
        return PointRobot3D(obj.get("goal_radius", 1.0))
    if kind == "se2":
        return RigidBodySE2(
            obj["body"], obj.get("goal_radius", 1.0), obj.get("angle_weight", 1.0)
        )
    raise DataError(f"unknown robot kind {kind!r}")


def problem_to_json(problem: PlanningProblem) -> dict:
    obj = {
        "workspace": problem.ws.to_json(),
        "robot": robot_to_json(problem.robot),
        "start": problem.start.coords.tolist(),
        "goal": problem.goal.coords.tolist(),
    }
    if problem.cloud is not None:
        obj["cloud"] = problem.cloud.points.tolist()
    return obj


def problem_from_json(obj: dict) -> PlanningProblem:
    cloud = PointCloud(np.asarray(obj["cloud"])) if "cloud" in obj else None
    return PlanningProblem(
        robot_from_json(obj["robot"]),
        Workspace.from_json(obj["workspace"]),
        Config(obj["start"]),
        Config(obj["goal"]),
        cloud,
    )
