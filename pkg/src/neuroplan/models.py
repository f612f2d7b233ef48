"""Planner model assemblies: obstacle encoder, next-state predictor, training.

The encoder maps a flattened obstacle point cloud to a latent code; the
predictor maps (latent code, current config, goal config) to the next
config.  Configs cross the network boundary through a codec that
normalizes workspace axes to [-1, 1] and, for planar rigid bodies, swaps
the angle for its (cos, sin) pair so there is no wrap discontinuity to
regress through.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path as FsPath

import numpy as np

from .cspace import Path, RigidBodySE2, RobotModel
from .neuralnet import (
    AdamState,
    NetParams,
    NetSpec,
    adam_step,
    backward,
    cae_loss,
    forward,
    init_params,
    load_net,
    path_mse_loss,
    save_net,
)

DEFAULT_LATENT_DIM = 28
DEFAULT_PREDICTOR_HIDDEN = (512, 512, 256, 128)
DEFAULT_ENCODER_HIDDEN = (256, 128)
DEFAULT_DROPOUT_P = 0.5
POINTS_PER_CLOUD = {2: 200, 3: 500}


class ModelError(ValueError):
    """Raised for model assembly or checkpoint problems."""


@dataclass(frozen=True)
class PointCloud:
    """Obstacle surface samples in a fixed order, shape (n_points, m)."""

    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim != 2:
            raise ModelError("point cloud must be an (n_points, m) array")
        object.__setattr__(self, "points", pts)

    @property
    def n_points(self) -> int:
        return self.points.shape[0]

    def flat(self) -> np.ndarray:
        return self.points.reshape(-1)


@dataclass(frozen=True)
class Normalizer:
    """Per-axis affine map between workspace coordinates and [-1, 1]."""

    offset: np.ndarray
    scale: np.ndarray

    @classmethod
    def from_bounds(cls, bounds) -> "Normalizer":
        b = np.asarray(bounds, dtype=float)
        return cls(offset=(b[:, 0] + b[:, 1]) / 2.0, scale=(b[:, 1] - b[:, 0]) / 2.0)

    def normalize(self, x: np.ndarray) -> np.ndarray:
        return (np.asarray(x, dtype=float) - self.offset) / self.scale

    def denormalize(self, v: np.ndarray) -> np.ndarray:
        return np.asarray(v, dtype=float) * self.scale + self.offset

    def to_json(self) -> dict:
        return {"offset": self.offset.tolist(), "scale": self.scale.tolist()}

    @classmethod
    def from_json(cls, obj: dict) -> "Normalizer":
        return cls(np.asarray(obj["offset"], dtype=float), np.asarray(obj["scale"], dtype=float))


class PointCodec:
    """Identity codec for point robots: normalize, denormalize."""

    def __init__(self, normalizer: Normalizer):
        self.normalizer = normalizer
        self.dim = normalizer.offset.size
        self.enc_dim = self.dim

    def encode(self, q) -> np.ndarray:
        return self.normalizer.normalize(np.asarray(q, dtype=float))

    def encode_many(self, qs: np.ndarray) -> np.ndarray:
        return self.normalizer.normalize(qs)

    def decode(self, v: np.ndarray) -> np.ndarray:
        return self.normalizer.denormalize(v)


class SE2Codec:
    """Planar rigid-body codec: (x, y, theta) <-> (nx, ny, cos, sin)."""

    def __init__(self, normalizer: Normalizer):
        self.normalizer = normalizer  # covers the two positional axes
        self.dim = 3
        self.enc_dim = 4

    def encode(self, q) -> np.ndarray:
        q = np.asarray(q, dtype=float)
        nxy = self.normalizer.normalize(q[:2])
        return np.array([nxy[0], nxy[1], math.cos(q[2]), math.sin(q[2])])

    def encode_many(self, qs: np.ndarray) -> np.ndarray:
        nxy = self.normalizer.normalize(qs[:, :2])
        return np.column_stack([nxy, np.cos(qs[:, 2]), np.sin(qs[:, 2])])

    def decode(self, v: np.ndarray) -> np.ndarray:
        xy = self.normalizer.denormalize(v[:2])
        c, s = v[2], v[3]
        theta = math.atan2(s, c) if math.hypot(c, s) > 1e-12 else 0.0
        return np.array([xy[0], xy[1], theta])


@dataclass
class Net:
    """A spec bundled with its parameters."""

    spec: NetSpec
    params: NetParams


@dataclass
class PlannerModel:
    """Encoder + predictor pair sharing one workspace normalizer."""

    encoder: Net
    predictor: Net
    codec: PointCodec | SE2Codec
    cloud_normalizer: Normalizer
    robot_kind: str

    def __post_init__(self):
        want_in = self.latent_dim + 2 * self.codec.enc_dim
        if self.predictor.spec.in_dim != want_in:
            raise ModelError(
                f"predictor input is {self.predictor.spec.in_dim}, expected {want_in}"
            )
        if self.predictor.spec.out_dim != self.codec.enc_dim:
            raise ModelError("predictor output width must match the config encoding")

    @property
    def latent_dim(self) -> int:
        return self.encoder.spec.out_dim

    def _normalize_cloud(self, pc: PointCloud) -> np.ndarray:
        return self.cloud_normalizer.normalize(pc.points).reshape(-1)

    def encode(self, pc: PointCloud) -> np.ndarray:
        """Deterministic latent code for an obstacle cloud (dropout off)."""
        x = self._normalize_cloud(pc)
        z, _ = forward(self.encoder.spec, self.encoder.params, x)
        return z

    def predict_next(self, z: np.ndarray, c, goal, rng: np.random.Generator) -> np.ndarray:
        """One stochastic next-config proposal; each call samples fresh dropout."""
        x = np.concatenate([z, self.codec.encode(c), self.codec.encode(goal)])
        out, _ = forward(self.predictor.spec, self.predictor.params, x, rng)
        return self.codec.decode(out)

    def copy(self) -> "PlannerModel":
        return PlannerModel(
            encoder=Net(self.encoder.spec, self.encoder.params.copy()),
            predictor=Net(self.predictor.spec, self.predictor.params.copy()),
            codec=self.codec,
            cloud_normalizer=self.cloud_normalizer,
            robot_kind=self.robot_kind,
        )


def make_codec(robot_kind: str, bounds) -> PointCodec | SE2Codec:
    norm = Normalizer.from_bounds(bounds)
    if robot_kind in ("point2d", "point3d"):
        return PointCodec(norm)
    if robot_kind == "se2":
        return SE2Codec(norm)
    raise ModelError(f"unknown robot kind {robot_kind!r}")


def robot_kind_of(robot: RobotModel) -> str:
    if isinstance(robot, RigidBodySE2):
        return "se2"
    return f"point{robot.d}d"


def make_model(
    robot_kind: str,
    bounds,
    n_cloud_points: int,
    latent_dim: int = DEFAULT_LATENT_DIM,
    encoder_hidden=DEFAULT_ENCODER_HIDDEN,
    predictor_hidden=DEFAULT_PREDICTOR_HIDDEN,
    dropout_p: float = DEFAULT_DROPOUT_P,
    seed: int = 0,
) -> PlannerModel:
    """Fresh randomly-initialized model for a workspace family."""
    b = np.asarray(bounds, dtype=float)
    m = b.shape[0]
    codec = make_codec(robot_kind, b)
    cloud_norm = Normalizer.from_bounds(b)
    enc_spec = NetSpec((n_cloud_points * m, *encoder_hidden, latent_dim))
    pred_spec = NetSpec(
        (latent_dim + 2 * codec.enc_dim, *predictor_hidden, codec.enc_dim),
        dropout_p=dropout_p,
    )
    rng = np.random.default_rng(seed)
    return PlannerModel(
        encoder=Net(enc_spec, init_params(enc_spec, rng)),
        predictor=Net(pred_spec, init_params(pred_spec, rng)),
        codec=codec,
        cloud_normalizer=cloud_norm,
        robot_kind=robot_kind,
    )


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

@dataclass
class TrainHyper:
    """Offline training knobs; defaults sized for desk-scale corpora."""

    epochs: int = 200
    batch_size: int = 256
    lr: float = 1e-3
    cae_epochs: int = 300
    cae_lr: float = 1e-3
    lam: float = 1e-2
    decoder_hidden: tuple = ()  # () mirrors the encoder hidden layers
    seed: int = 0


def one_step_pairs(demo: Path):
    """(current, next) config rows for one demo; the goal is the demo's last state.

    A demo of length T+1 yields exactly T pairs.
    """
    arr = demo.as_array()
    return arr[:-1], arr[1:], arr[-1]


def _unique_clouds(demos):
    clouds = []
    index = {}
    for _path, cloud in demos:
        if id(cloud) not in index:
            index[id(cloud)] = len(clouds)
            clouds.append(cloud)
    return clouds, index


def _predictor_dataset(model: PlannerModel, demos, z_by_cloud):
    xs, ys = [], []
    for demo, cloud in demos:
        cur, nxt, goal = one_step_pairs(demo)
        if cur.shape[0] == 0:
            continue
        z = z_by_cloud[id(cloud)]
        enc_cur = model.codec.encode_many(cur)
        enc_goal = np.tile(model.codec.encode(goal), (cur.shape[0], 1))
        xs.append(np.column_stack([np.tile(z, (cur.shape[0], 1)), enc_cur, enc_goal]))
        ys.append(model.codec.encode_many(nxt))
    if not xs:
        raise ModelError("demos produced no training pairs")
    return np.concatenate(xs), np.concatenate(ys)


def train_cae(model: PlannerModel, clouds, hyper: TrainHyper):
    """Contractive-style autoencoder training of the encoder.

    Returns (loss curve, decoder spec, decoder params); the decoder is only
    needed again to measure reconstruction quality.
    """
    dec_hidden = hyper.decoder_hidden or tuple(reversed(model.encoder.spec.layer_sizes[1:-1]))
    dec_spec = NetSpec((model.latent_dim, *dec_hidden, model.encoder.spec.in_dim))
    rng = np.random.default_rng(hyper.seed)
    dec_params = init_params(dec_spec, rng)
    x = np.stack([model._normalize_cloud(c) for c in clouds])
    enc_state = AdamState.for_params(model.encoder.params, lr=hyper.cae_lr)
    dec_state = AdamState.for_params(dec_params, lr=hyper.cae_lr)
    curve = []
    for _ in range(hyper.cae_epochs):
        loss, enc_grad, dec_grad = cae_loss(
            model.encoder.spec, dec_spec, model.encoder.params, dec_params, x, hyper.lam
        )
        adam_step(model.encoder.params, enc_grad, enc_state)
        adam_step(dec_params, dec_grad, dec_state)
        curve.append(loss)
    return curve, dec_spec, dec_params


def cae_reconstruction_error(model: PlannerModel, clouds, dec_spec: NetSpec,
                             dec_params: NetParams) -> float:
    x = np.stack([model._normalize_cloud(c) for c in clouds])
    z, _ = forward(model.encoder.spec, model.encoder.params, x)
    xhat, _ = forward(dec_spec, dec_params, z)
    return float(((xhat - x) ** 2).sum() / x.shape[0])


def train_offline(model: PlannerModel, demos, mode: str = "separate",
                  hyper: TrainHyper | None = None):
    """Train in place on (Path, PointCloud) demos; returns {curve_name: [loss, ...]}.

    separate: encoder first via the autoencoder loss, then frozen while the
    predictor regresses one-step targets.  end_to_end: the waypoint MSE is
    backpropagated through the predictor into the encoder.
    """
    if not demos:
        raise ModelError("at least one demo is required")
    if mode not in ("separate", "end_to_end"):
        raise ModelError(f"unknown training mode {mode!r}")
    hyper = hyper or TrainHyper()
    rng = np.random.default_rng(hyper.seed)
    curves = {}
    clouds, _ = _unique_clouds(demos)

    if mode == "separate":
        curves["autoencoder"], _, _ = train_cae(model, clouds, hyper)
        z_by_cloud = {id(c): model.encode(c) for c in clouds}
        x, y = _predictor_dataset(model, demos, z_by_cloud)
        curves["predictor"] = _train_predictor(model, x, y, hyper, rng)
        return curves

    curves["predictor"] = _train_end_to_end(model, demos, hyper, rng)
    return curves


def _train_predictor(model: PlannerModel, x, y, hyper: TrainHyper, rng):
    spec, params = model.predictor.spec, model.predictor.params
    state = AdamState.for_params(params, lr=hyper.lr)
    n = x.shape[0]
    curve = []
    for _ in range(hyper.epochs):
        order = rng.permutation(n)
        for lo in range(0, n, hyper.batch_size):
            idx = order[lo : lo + hyper.batch_size]
            out, cache = forward(spec, params, x[idx], rng)
            _, g_out = path_mse_loss(out, y[idx])
            grad, _ = backward(spec, params, cache, g_out)
            adam_step(params, grad, state)
        # curve entries are deterministic (dropout-off) full-set evaluations,
        # so the reported loss is not confounded by mask sampling noise
        out, _ = forward(spec, params, x)
        curve.append(path_mse_loss(out, y)[0])
    return curve


def _train_end_to_end(model: PlannerModel, demos, hyper: TrainHyper, rng):
    enc, pred = model.encoder, model.predictor
    clouds, cloud_index = _unique_clouds(demos)
    cloud_mat = np.stack([model._normalize_cloud(c) for c in clouds])
    rows_cloud, rows_cur, rows_next, rows_goal = [], [], [], []
    for demo, cloud in demos:
        cur, nxt, goal = one_step_pairs(demo)
        for i in range(cur.shape[0]):
            rows_cloud.append(cloud_index[id(cloud)])
            rows_cur.append(model.codec.encode(cur[i]))
            rows_next.append(model.codec.encode(nxt[i]))
            rows_goal.append(model.codec.encode(goal))
    if not rows_cur:
        raise ModelError("demos produced no training pairs")
    cloud_ids = np.asarray(rows_cloud)
    cur = np.stack(rows_cur)
    nxt = np.stack(rows_next)
    goal = np.stack(rows_goal)
    n = cur.shape[0]
    enc_state = AdamState.for_params(enc.params, lr=hyper.lr)
    pred_state = AdamState.for_params(pred.params, lr=hyper.lr)
    curve = []
    for _ in range(hyper.epochs):
        order = rng.permutation(n)
        for lo in range(0, n, hyper.batch_size):
            idx = order[lo : lo + hyper.batch_size]
            z, enc_cache = forward(enc.spec, enc.params, cloud_mat[cloud_ids[idx]])
            x = np.column_stack([z, cur[idx], goal[idx]])
            out, pred_cache = forward(pred.spec, pred.params, x, rng)
            _, g_out = path_mse_loss(out, nxt[idx])
            pred_grad, g_in = backward(pred.spec, pred.params, pred_cache, g_out)
            enc_grad, _ = backward(enc.spec, enc.params, enc_cache, g_in[:, : model.latent_dim])
            adam_step(pred.params, pred_grad, pred_state)
            adam_step(enc.params, enc_grad, enc_state)
        z, _ = forward(enc.spec, enc.params, cloud_mat[cloud_ids])
        out, _ = forward(pred.spec, pred.params, np.column_stack([z, cur, goal]))
        curve.append(path_mse_loss(out, nxt)[0])
    return curve


# ---------------------------------------------------------------------------
# combined-parameter view (for constrained continual updates)
# ---------------------------------------------------------------------------

def combined_params(model: PlannerModel) -> np.ndarray:
    """Concatenated (encoder, predictor) parameter vector, copied."""
    return np.concatenate([model.encoder.params.flat, model.predictor.params.flat])


def apply_combined_delta(model: PlannerModel, delta: np.ndarray) -> None:
    ne = model.encoder.params.flat.size
    model.encoder.params.flat += delta[:ne]
    model.predictor.params.flat += delta[ne:]


def samples_loss_and_grad(model: PlannerModel, inputs, clouds,
                          rng: np.random.Generator | None = None):
    """Mean squared-error loss and combined-parameter gradient over samples.

    inputs is a list of (current, goal, cloud_id, target) raw-coordinate
    tuples; clouds maps cloud_id to a PointCloud.  rng=None keeps dropout
    off, which makes the gradient deterministic.
    """
    if not inputs:
        raise ModelError("gradient over an empty sample set")
    enc, pred = model.encoder, model.predictor
    ids = sorted({s[2] for s in inputs})
    cloud_mat = np.stack([model._normalize_cloud(clouds[i]) for i in ids])
    row_of = {cid: k for k, cid in enumerate(ids)}
    z_all, enc_cache = forward(enc.spec, enc.params, cloud_mat)
    pick = np.asarray([row_of[s[2]] for s in inputs])
    cur = np.stack([model.codec.encode(s[0]) for s in inputs])
    goal = np.stack([model.codec.encode(s[1]) for s in inputs])
    target = np.stack([model.codec.encode(s[3]) for s in inputs])
    x = np.column_stack([z_all[pick], cur, goal])
    out, pred_cache = forward(pred.spec, pred.params, x, rng)
    loss, g_out = path_mse_loss(out, target)
    pred_grad, g_in = backward(pred.spec, pred.params, pred_cache, g_out)
    # scatter per-sample latent grads back onto their shared cloud rows
    dz = np.zeros_like(z_all)
    np.add.at(dz, pick, g_in[:, : model.latent_dim])
    enc_grad, _ = backward(enc.spec, enc.params, enc_cache, dz)
    return loss, np.concatenate([enc_grad.flat, pred_grad.flat])


def samples_loss(model: PlannerModel, inputs, clouds) -> float:
    """Deterministic mean squared-error loss over samples (dropout off)."""
    loss, _ = samples_loss_and_grad(model, inputs, clouds)
    return loss


# ---------------------------------------------------------------------------
# model checkpoints
# ---------------------------------------------------------------------------

MODEL_FORMAT = "neuroplan-model-v1"


def save_model(model: PlannerModel, out_dir) -> None:
    out = FsPath(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_net(out / "encoder.json", model.encoder.spec, model.encoder.params)
    save_net(out / "predictor.json", model.predictor.spec, model.predictor.params)
    (out / "normalizer.json").write_text(json.dumps(model.cloud_normalizer.to_json()))
    meta = {
        "format": MODEL_FORMAT,
        "robot_kind": model.robot_kind,
        "codec_bounds_offset": model.codec.normalizer.offset.tolist(),
        "codec_bounds_scale": model.codec.normalizer.scale.tolist(),
    }
    (out / "model.json").write_text(json.dumps(meta))


def load_model(model_dir) -> PlannerModel:
    src = FsPath(model_dir)
    meta = json.loads((src / "model.json").read_text())
    if meta.get("format") != MODEL_FORMAT:
        raise ModelError(f"unsupported model format {meta.get('format')!r}")
    enc_spec, enc_params, _ = load_net(src / "encoder.json")
    pred_spec, pred_params, _ = load_net(src / "predictor.json")
    cloud_norm = Normalizer.from_json(json.loads((src / "normalizer.json").read_text()))
    codec_norm = Normalizer(
        np.asarray(meta["codec_bounds_offset"], dtype=float),
        np.asarray(meta["codec_bounds_scale"], dtype=float),
    )
    kind = meta["robot_kind"]
    codec = PointCodec(codec_norm) if kind.startswith("point") else SE2Codec(codec_norm)
    return PlannerModel(
        encoder=Net(enc_spec, enc_params),
        predictor=Net(pred_spec, pred_params),
        codec=codec,
        cloud_normalizer=cloud_norm,
        robot_kind=kind,
    )
