"""Configuration-space geometry: configs, paths, workspaces, robots, collision checks.

Everything here is a plain value type plus pure functions.  Planners and
trainers build on these primitives; nothing in this module knows about
neural networks or trees.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np

TWO_PI = 2.0 * math.pi


class CSpaceError(ValueError):
    """Raised for malformed geometry or unsatisfiable sampling requests."""


def _coords(c) -> np.ndarray:
    """Accept a Config or anything array-like and return a 1-D float array."""
    if isinstance(c, Config):
        return c.coords
    arr = np.asarray(c, dtype=float)
    if arr.ndim != 1:
        raise CSpaceError(f"expected a single configuration, got shape {arr.shape}")
    return arr


def wrap_angle(theta):
    """Map angles to (-pi, pi]."""
    wrapped = theta - np.floor((theta + math.pi) / TWO_PI) * TWO_PI
    # floor maps pi -> -pi; push it back onto the closed upper end
    return np.where(wrapped <= -math.pi, math.pi, wrapped) if np.ndim(theta) else (
        math.pi if wrapped <= -math.pi else float(wrapped)
    )


class Config:
    """A single point in C-space, stored as an immutable float vector."""

    __slots__ = ("coords",)

    def __init__(self, coords):
        arr = np.array(coords, dtype=float)
        if arr.ndim != 1 or arr.size == 0:
            raise CSpaceError(f"config must be a non-empty vector, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise CSpaceError("config coordinates must be finite")
        arr.flags.writeable = False
        self.coords = arr

    @property
    def dim(self) -> int:
        return self.coords.size

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.coords, dtype=dtype)

    def __len__(self) -> int:
        return self.coords.size

    def __getitem__(self, i):
        return self.coords[i]

    def __eq__(self, other) -> bool:
        if not isinstance(other, Config):
            return NotImplemented
        return self.coords.shape == other.coords.shape and bool(
            np.all(self.coords == other.coords)
        )

    def __repr__(self) -> str:
        return f"Config({self.coords.tolist()})"


class Path:
    """An ordered list of configurations sharing one dimensionality."""

    __slots__ = ("states",)

    def __init__(self, states: Sequence):
        configs = tuple(s if isinstance(s, Config) else Config(s) for s in states)
        if not configs:
            raise CSpaceError("path must contain at least one state")
        d = configs[0].dim
        if any(c.dim != d for c in configs):
            raise CSpaceError("all path states must share one dimensionality")
        self.states = configs

    @property
    def end(self) -> Config:
        return self.states[-1]

    @property
    def dim(self) -> int:
        return self.states[0].dim

    def as_array(self) -> np.ndarray:
        return np.array([c.coords for c in self.states])

    def reversed(self) -> "Path":
        return Path(self.states[::-1])

    def __len__(self) -> int:
        return len(self.states)

    def __getitem__(self, i) -> Config:
        return self.states[i]

    def __iter__(self) -> Iterator[Config]:
        return iter(self.states)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Path):
            return NotImplemented
        return len(self) == len(other) and all(a == b for a, b in zip(self, other))

    def __repr__(self) -> str:
        return f"Path(<{len(self.states)} states, d={self.dim}>)"


@dataclass(frozen=True)
class Box:
    """Axis-aligned box given by center and half extents (closed set)."""

    center: tuple
    half_extents: tuple

    def __post_init__(self):
        c = np.asarray(self.center, dtype=float)
        h = np.asarray(self.half_extents, dtype=float)
        if c.shape != h.shape or c.ndim != 1:
            raise CSpaceError("box center and half_extents must be vectors of equal length")
        if np.any(h <= 0):
            raise CSpaceError("box half_extents must be positive")
        object.__setattr__(self, "center", tuple(float(x) for x in c))
        object.__setattr__(self, "half_extents", tuple(float(x) for x in h))

    @property
    def lo(self) -> np.ndarray:
        return np.asarray(self.center) - np.asarray(self.half_extents)

    @property
    def hi(self) -> np.ndarray:
        return np.asarray(self.center) + np.asarray(self.half_extents)


class Workspace:
    """A bounded axis-aligned region of R^m with axis-aligned box obstacles."""

    def __init__(self, bounds, obstacles: Sequence[Box] = ()):
        b = np.array(bounds, dtype=float)
        if b.ndim != 2 or b.shape[1] != 2:
            raise CSpaceError("bounds must be a list of [lo, hi] pairs")
        if np.any(b[:, 0] >= b[:, 1]):
            raise CSpaceError("each bounds axis needs lo < hi")
        self.bounds = b
        self.bounds.flags.writeable = False
        self.obstacles = tuple(obstacles)
        m = b.shape[0]
        for box in self.obstacles:
            if len(box.center) != m:
                raise CSpaceError("obstacle dimensionality must match bounds")
            if np.any(box.lo < b[:, 0]) or np.any(box.hi > b[:, 1]):
                raise CSpaceError("every obstacle must lie inside the workspace bounds")
        if self.obstacles:
            self._obs_lo = np.array([box.lo for box in self.obstacles])
            self._obs_hi = np.array([box.hi for box in self.obstacles])
        else:
            self._obs_lo = np.zeros((0, m))
            self._obs_hi = np.zeros((0, m))

    @property
    def dim(self) -> int:
        return self.bounds.shape[0]

    def in_bounds(self, pts: np.ndarray) -> np.ndarray:
        """Vectorized bounds membership for points of shape (n, m)."""
        return np.all((pts >= self.bounds[:, 0]) & (pts <= self.bounds[:, 1]), axis=-1)

    def in_obstacle(self, pts: np.ndarray) -> np.ndarray:
        """Vectorized closed-box membership test against all obstacles."""
        if not self.obstacles:
            return np.zeros(pts.shape[0], dtype=bool)
        p = pts[:, None, :]
        inside = np.all((p >= self._obs_lo) & (p <= self._obs_hi), axis=2)
        return inside.any(axis=1)

    def free_volume(self) -> float:
        """Bounds volume minus summed obstacle volume (overlap-free layouts)."""
        total = float(np.prod(self.bounds[:, 1] - self.bounds[:, 0]))
        blocked = sum(float(np.prod(2.0 * np.asarray(b.half_extents))) for b in self.obstacles)
        return max(total - blocked, 1e-9 * total)

    def to_json(self) -> dict:
        return {
            "bounds": [[float(lo), float(hi)] for lo, hi in self.bounds],
            "obstacles": [
                {"center": list(b.center), "half_extents": list(b.half_extents)}
                for b in self.obstacles
            ],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "Workspace":
        boxes = [Box(tuple(o["center"]), tuple(o["half_extents"])) for o in obj["obstacles"]]
        return cls(obj["bounds"], boxes)

    def dumps(self) -> str:
        return json.dumps(self.to_json())

    @classmethod
    def loads(cls, s: str) -> "Workspace":
        return cls.from_json(json.loads(s))


class RobotModel:
    """Base robot: defines the C-space metric, interpolation, and collision."""

    d: int
    goal_radius: float
    metric_is_euclidean = False  # True permits kd-tree nearest-neighbor queries

    def normalize(self, q: np.ndarray) -> np.ndarray:
        return q

    def distance(self, a, b) -> float:
        raise NotImplementedError

    def distances_to(self, pts: np.ndarray, q: np.ndarray) -> np.ndarray:
        """Vectorized distance from each row of pts to q."""
        raise NotImplementedError

    def interpolate(self, a, b, delta: float) -> np.ndarray:
        raise NotImplementedError

    def interpolate_many(self, a, b, deltas: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def collides_many(self, pts: np.ndarray, ws: Workspace) -> np.ndarray:
        raise NotImplementedError

    def collides(self, q, ws: Workspace) -> bool:
        return bool(self.collides_many(np.asarray(q, dtype=float)[None, :], ws)[0])

    def sample_uniform(self, ws: Workspace, rng: np.random.Generator) -> np.ndarray:
        raise NotImplementedError

    def in_goal(self, q, goal) -> bool:
        return self.distance(q, goal) <= self.goal_radius

    def _check_dim(self, q: np.ndarray):
        if q.shape[-1] != self.d:
            raise CSpaceError(f"config has dimension {q.shape[-1]}, robot expects {self.d}")


class _PointRobot(RobotModel):
    """Point robot in R^d: Euclidean metric, point-in-box collision."""

    metric_is_euclidean = True

    def __init__(self, d: int, goal_radius: float = 1.0):
        if goal_radius <= 0:
            raise CSpaceError("goal_radius must be positive")
        self.d = d
        self.goal_radius = float(goal_radius)

    def distance(self, a, b) -> float:
        d = np.asarray(a, dtype=float) - np.asarray(b, dtype=float)
        return math.sqrt(float(d @ d))

    def distances_to(self, pts: np.ndarray, q: np.ndarray) -> np.ndarray:
        diff = pts - q
        return np.sqrt(np.einsum("ij,ij->i", diff, diff))

    def interpolate(self, a, b, delta: float) -> np.ndarray:
        a = np.asarray(a, dtype=float)
        b = np.asarray(b, dtype=float)
        return (1.0 - delta) * a + delta * b

    def interpolate_many(self, a, b, deltas: np.ndarray) -> np.ndarray:
        a = np.asarray(a, dtype=float)
        b = np.asarray(b, dtype=float)
        # (1-d)*a + d*b rather than a + d*(b-a): bitwise symmetric under reversal
        return (1.0 - deltas)[:, None] * a + deltas[:, None] * b

    def collides_many(self, pts: np.ndarray, ws: Workspace) -> np.ndarray:
        self._check_dim(pts)
        return ~ws.in_bounds(pts) | ws.in_obstacle(pts)

    def sample_uniform(self, ws: Workspace, rng: np.random.Generator) -> np.ndarray:
        return rng.uniform(ws.bounds[:, 0], ws.bounds[:, 1])


class PointRobot2D(_PointRobot):
    def __init__(self, goal_radius: float = 1.0):
        super().__init__(2, goal_radius)


class PointRobot3D(_PointRobot):
    def __init__(self, goal_radius: float = 1.0):
        super().__init__(3, goal_radius)


class RigidBodySE2(RobotModel):
    """Planar rigid body (x, y, theta) with a convex polygon footprint.

    The angular coordinate lives in (-pi, pi] and is wrapped on the way in.
    Distances weight the (wrapped) angle difference by ``angle_weight`` so the
    metric stays a proper metric on the cylinder.
    """

    d = 3

    def __init__(self, body, goal_radius: float = 1.0, angle_weight: float = 1.0):
        verts = np.array(body, dtype=float)
        if verts.ndim != 2 or verts.shape[1] != 2 or verts.shape[0] < 3:
            raise CSpaceError("body must be a polygon with at least 3 (x, y) vertices")
        if not _is_convex_ccw(verts):
            raise CSpaceError("body polygon must be convex with counter-clockwise winding")
        if goal_radius <= 0:
            raise CSpaceError("goal_radius must be positive")
        self.body = verts
        self.body.flags.writeable = False
        self.goal_radius = float(goal_radius)
        self.angle_weight = float(angle_weight)
        # outward edge normals in the body frame, one per edge
        edges = np.roll(verts, -1, axis=0) - verts
        normals = np.stack([edges[:, 1], -edges[:, 0]], axis=1)
        self._body_normals = normals / np.linalg.norm(normals, axis=1, keepdims=True)
        self._body_radius = float(np.max(np.linalg.norm(verts, axis=1)))

    def normalize(self, q: np.ndarray) -> np.ndarray:
        q = np.array(q, dtype=float)
        q[..., 2] = wrap_angle(q[..., 2])
        return q

    def distance(self, a, b) -> float:
        a = np.asarray(a, dtype=float)
        b = np.asarray(b, dtype=float)
        dpos = a[:2] - b[:2]
        dth = wrap_angle(a[2] - b[2])
        return float(math.sqrt(dpos @ dpos + (self.angle_weight * dth) ** 2))

    def distances_to(self, pts: np.ndarray, q: np.ndarray) -> np.ndarray:
        dpos = pts[:, :2] - q[:2]
        dth = wrap_angle(pts[:, 2] - q[2])
        return np.sqrt((dpos * dpos).sum(axis=1) + (self.angle_weight * dth) ** 2)

    def interpolate(self, a, b, delta: float) -> np.ndarray:
        return self.interpolate_many(a, b, np.array([delta]))[0]

    def interpolate_many(self, a, b, deltas: np.ndarray) -> np.ndarray:
        a = np.asarray(a, dtype=float)
        b = np.asarray(b, dtype=float)
        out = np.empty((deltas.size, 3))
        out[:, :2] = (1.0 - deltas)[:, None] * a[:2] + deltas[:, None] * b[:2]
        dth = wrap_angle(b[2] - a[2])  # shortest arc
        out[:, 2] = wrap_angle(a[2] + deltas * dth)
        return out

    def _world_vertices(self, q: np.ndarray) -> np.ndarray:
        """Body vertices in world frame for configs of shape (n, 3) -> (n, k, 2)."""
        cos_t = np.cos(q[:, 2])
        sin_t = np.sin(q[:, 2])
        rot = np.empty((q.shape[0], 2, 2))
        rot[:, 0, 0] = cos_t
        rot[:, 0, 1] = -sin_t
        rot[:, 1, 0] = sin_t
        rot[:, 1, 1] = cos_t
        return np.einsum("nij,kj->nki", rot, self.body) + q[:, None, :2]

    def collides_many(self, pts: np.ndarray, ws: Workspace) -> np.ndarray:
        self._check_dim(pts)
        n = pts.shape[0]
        verts = self._world_vertices(pts)  # (n, k, 2)
        out = ~np.all(
            (verts >= ws.bounds[:, 0]) & (verts <= ws.bounds[:, 1]), axis=(1, 2)
        )
        if not ws.obstacles:
            return out
        todo = ~out
        if not todo.any():
            return out
        hit = _polygon_box_overlap(
            verts[todo], pts[todo, 2], self._body_normals, ws._obs_lo, ws._obs_hi
        )
        out[np.flatnonzero(todo)[hit]] = True
        return out

    def sample_uniform(self, ws: Workspace, rng: np.random.Generator) -> np.ndarray:
        xy = rng.uniform(ws.bounds[:, 0], ws.bounds[:, 1])
        theta = rng.uniform(-math.pi, math.pi)
        return np.array([xy[0], xy[1], theta])


def _is_convex_ccw(verts: np.ndarray) -> bool:
    n = verts.shape[0]
    cross = np.empty(n)
    for i in range(n):
        a = verts[(i + 1) % n] - verts[i]
        b = verts[(i + 2) % n] - verts[(i + 1) % n]
        cross[i] = a[0] * b[1] - a[1] * b[0]
    return bool(np.all(cross > 0))


def _polygon_box_overlap(verts, thetas, body_normals, obs_lo, obs_hi) -> np.ndarray:
    """Separating-axis test: convex polygons (n, k, 2) vs boxes (m, 2).

    Returns a boolean (n,) marking polygons that overlap any box.  Boxes and
    polygons are closed sets, so touching counts as overlap.
    """
    n, k, _ = verts.shape
    m = obs_lo.shape[0]
    # world-frame edge normals, (n, e, 2)
    cos_t = np.cos(thetas)
    sin_t = np.sin(thetas)
    rot = np.empty((n, 2, 2))
    rot[:, 0, 0] = cos_t
    rot[:, 0, 1] = -sin_t
    rot[:, 1, 0] = sin_t
    rot[:, 1, 1] = cos_t
    normals = np.einsum("nij,ej->nei", rot, body_normals)

    # axes 1 & 2: box axes (x, y).  Poly extent vs box interval per axis.
    poly_min = verts.min(axis=1)  # (n, 2)
    poly_max = verts.max(axis=1)
    sep_box_axes = (
        (poly_max[:, None, 0] < obs_lo[None, :, 0])
        | (poly_min[:, None, 0] > obs_hi[None, :, 0])
        | (poly_max[:, None, 1] < obs_lo[None, :, 1])
        | (poly_min[:, None, 1] > obs_hi[None, :, 1])
    )  # (n, m)

    # remaining axes: polygon edge normals.
    proj_poly = np.einsum("nki,nei->nek", verts, normals)  # (n, e, k)
    pmin = proj_poly.min(axis=2)[:, :, None]  # (n, e, 1)
    pmax = proj_poly.max(axis=2)[:, :, None]
    corners = np.stack(
        [
            np.stack([obs_lo[:, 0], obs_lo[:, 1]], axis=1),
            np.stack([obs_hi[:, 0], obs_lo[:, 1]], axis=1),
            np.stack([obs_hi[:, 0], obs_hi[:, 1]], axis=1),
            np.stack([obs_lo[:, 0], obs_hi[:, 1]], axis=1),
        ],
        axis=1,
    )  # (m, 4, 2)
    proj_box = np.einsum("mci,nei->nemc", corners, normals)  # (n, e, m, 4)
    bmin = proj_box.min(axis=3)  # (n, e, m)
    bmax = proj_box.max(axis=3)
    sep_poly_axes = np.any((bmax < pmin) | (bmin > pmax), axis=1)  # (n, m)

    return np.any(~(sep_box_axes | sep_poly_axes), axis=1)


# ---------------------------------------------------------------------------
# operations
# ---------------------------------------------------------------------------

def interpolate(robot: RobotModel, c1, c2, delta: float) -> Config:
    """Convex combination of two configs (shortest angular arc for SE2)."""
    a, b = _coords(c1), _coords(c2)
    if a.shape != b.shape:
        raise CSpaceError("interpolate endpoints must share one dimensionality")
    if not 0.0 <= delta <= 1.0:
        raise CSpaceError("delta must lie in [0, 1]")
    if delta == 0.0:
        return Config(a)
    if delta == 1.0:
        return Config(b)
    return Config(robot.interpolate(a, b, delta))


def collides(robot: RobotModel, c, ws: Workspace) -> bool:
    """True iff the robot at c intersects any obstacle or exits bounds."""
    return robot.collides(_coords(c), ws)


_DELTA_CACHE: dict = {}


def _steer_deltas(dist: float, step: float) -> np.ndarray:
    """Symmetric interpolation grid with spacing <= step.

    The segment is split into 2^ceil(log2(dist/step)) equal intervals.  The
    power-of-two count makes grids nested across step sizes, so a finer step
    can only discover more collisions, and the grid maps onto itself under
    reversal, which makes steering exactly symmetric.
    """
    n = max(1, int(2 ** math.ceil(math.log2(max(dist / step, 1.0)))))
    grid = _DELTA_CACHE.get(n)
    if grid is None:
        grid = np.arange(n + 1) / n  # dyadic deltas are exact floats
        grid.flags.writeable = False
        _DELTA_CACHE[n] = grid
    return grid


def steer_to(robot: RobotModel, c1, c2, ws: Workspace, step: float) -> bool:
    """Walk the straight segment c1->c2 and require every sample collision-free."""
    if step <= 0:
        raise CSpaceError("step must be positive")
    a, b = _coords(c1), _coords(c2)
    dist = robot.distance(a, b)
    if dist == 0.0:
        return not robot.collides(a, ws)
    pts = robot.interpolate_many(a, b, _steer_deltas(dist, step))
    return not robot.collides_many(pts, ws).any()


def segments_free(robot: RobotModel, starts: np.ndarray, ends: np.ndarray,
                  ws: Workspace, step: float) -> np.ndarray:
    """Batched steer_to over many segments at once.

    starts/ends are (n, d).  One collision query covers all sample points,
    which keeps tree planners out of per-segment Python loops.
    """
    n = starts.shape[0]
    if n == 0:
        return np.zeros(0, dtype=bool)
    starts = np.asarray(starts, dtype=float)
    ends = np.asarray(ends, dtype=float)
    if isinstance(robot, _PointRobot):
        diff = ends - starts
        dist = np.linalg.norm(diff, axis=1)
        ratio = np.maximum(dist / step, 1.0)
        counts = (2 ** np.ceil(np.log2(ratio))).astype(np.int64) + 1
        offsets = np.concatenate([[0], np.cumsum(counts)])
        owner = np.repeat(np.arange(n), counts)
        k = np.arange(offsets[-1]) - offsets[owner]
        deltas = (k / (counts[owner] - 1))[:, None]
        pts = (1.0 - deltas) * starts[owner] + deltas * ends[owner]
        hit = robot.collides_many(pts, ws)
    else:
        pts_list = []
        owner_list = []
        for i in range(n):
            dist = robot.distance(starts[i], ends[i])
            deltas = _steer_deltas(dist, step) if dist > 0 else np.zeros(1)
            pts_list.append(robot.interpolate_many(starts[i], ends[i], deltas))
            owner_list.append(np.full(deltas.size, i))
        pts = np.concatenate(pts_list)
        owner = np.concatenate(owner_list)
        hit = robot.collides_many(pts, ws)
    bad = np.zeros(n, dtype=bool)
    np.logical_or.at(bad, owner, hit)
    return ~bad


def path_feasible(robot: RobotModel, sigma: Path, ws: Workspace, step: float) -> bool:
    """True iff every consecutive pair of states steers collision-free."""
    if len(sigma) == 1:
        return not collides(robot, sigma[0], ws)
    arr = sigma.as_array()
    return bool(segments_free(robot, arr[:-1], arr[1:], ws, step).all())


def path_cost(sigma: Path, robot: RobotModel | None = None) -> float:
    """Sum of consecutive state distances (robot metric if given, else Euclidean)."""
    arr = sigma.as_array()
    if arr.shape[0] < 2:
        return 0.0
    if robot is None:
        return float(np.linalg.norm(np.diff(arr, axis=0), axis=1).sum())
    return float(sum(robot.distance(arr[i], arr[i + 1]) for i in range(arr.shape[0] - 1)))


def sample_free(robot: RobotModel, ws: Workspace, rng: np.random.Generator,
                max_tries: int = 10_000) -> Config:
    """Rejection-sample a collision-free config, uniform over the bounds."""
    for _ in range(max_tries):
        q = robot.sample_uniform(ws, rng)
        if not robot.collides(q, ws):
            return Config(q)
    raise CSpaceError("free space not found")
