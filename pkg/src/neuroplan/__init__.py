"""Motion planning toolkit: learned bidirectional planning and informed
sampling on top of classical tree search, with offline and continual trainers
and a benchmark harness."""

from .cspace import (
    Box,
    Config,
    CSpaceError,
    Path,
    PointRobot2D,
    PointRobot3D,
    RigidBodySE2,
    RobotModel,
    Workspace,
    collides,
    interpolate,
    path_cost,
    path_feasible,
    sample_free,
    steer_to,
)
from .models import PlannerModel, PointCloud, load_model, make_model, save_model, train_offline
from .planner import PlanConfig, plan_path, plan_with_neural_sampler
from .smp import PlanningProblem, Tree, informed_rrt_star, rrt_star

__version__ = "0.1.0"

__all__ = [
    "Box",
    "Config",
    "CSpaceError",
    "Path",
    "PlanConfig",
    "PlannerModel",
    "PlanningProblem",
    "PointCloud",
    "PointRobot2D",
    "PointRobot3D",
    "RigidBodySE2",
    "RobotModel",
    "Tree",
    "Workspace",
    "collides",
    "informed_rrt_star",
    "interpolate",
    "load_model",
    "make_model",
    "path_cost",
    "path_feasible",
    "plan_path",
    "plan_with_neural_sampler",
    "rrt_star",
    "sample_free",
    "save_model",
    "steer_to",
    "train_offline",
]
