"""Minimal feedforward network engine on flat parameter vectors.

Dense layers with relu/prelu activations, inverted dropout that can stay
active at inference time, reverse-mode gradients, the training losses, and a
plain Adam optimizer.  Parameters live in a single flat float64 vector
(per-layer weight matrix row-major, then bias) so that gradient projection
and checkpointing stay trivial.
"""

from __future__ import annotations

import base64
import datetime
import json
from dataclasses import dataclass, field
from pathlib import Path as FsPath

import numpy as np


class NetError(ValueError):
    """Raised for shape mismatches, bad specs, or stale caches."""


@dataclass(frozen=True)
class NetSpec:
    """Architecture description: layer sizes, activation, per-hidden-layer dropout."""

    layer_sizes: tuple
    activation: str = "relu"
    dropout_p: float = 0.0
    prelu_alpha: float = 0.25  # fixed slope; keeps the parameter layout activation-free

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.layer_sizes)
        object.__setattr__(self, "layer_sizes", sizes)
        if len(sizes) < 2 or any(s <= 0 for s in sizes):
            raise NetError("layer_sizes needs at least 2 positive entries")
        if self.activation not in ("relu", "prelu"):
            raise NetError(f"unknown activation {self.activation!r}")
        if not 0.0 <= self.dropout_p < 1.0:
            raise NetError("dropout_p must lie in [0, 1)")

    @property
    def n_layers(self) -> int:
        return len(self.layer_sizes) - 1

    @property
    def in_dim(self) -> int:
        return self.layer_sizes[0]

    @property
    def out_dim(self) -> int:
        return self.layer_sizes[-1]

    @property
    def param_count(self) -> int:
        return sum(
            n_in * n_out + n_out
            for n_in, n_out in zip(self.layer_sizes, self.layer_sizes[1:])
        )

    def to_json(self) -> dict:
        return {
            "layer_sizes": list(self.layer_sizes),
            "activation": self.activation,
            "dropout_p": self.dropout_p,
            "prelu_alpha": self.prelu_alpha,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "NetSpec":
        return cls(
            tuple(obj["layer_sizes"]),
            obj.get("activation", "relu"),
            obj.get("dropout_p", 0.0),
            obj.get("prelu_alpha", 0.25),
        )


def _check_flat(spec: NetSpec, flat: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(flat, dtype=float)
    if arr.ndim != 1 or arr.size != spec.param_count:
        raise NetError(
            f"flat vector has length {arr.size}, spec needs {spec.param_count}"
        )
    return arr


@dataclass
class NetParams:
    """All weights and biases as one flat vector (see module docstring for layout)."""

    flat: np.ndarray

    def copy(self) -> "NetParams":
        return NetParams(self.flat.copy())


@dataclass
class Gradient:
    """Same layout and length as the paired NetParams."""

    flat: np.ndarray

    def copy(self) -> "Gradient":
        return Gradient(self.flat.copy())


def layer_views(spec: NetSpec, flat: np.ndarray):
    """Zero-copy (W, b) views into a flat vector, one pair per layer."""
    views = []
    off = 0
    for n_in, n_out in zip(spec.layer_sizes, spec.layer_sizes[1:]):
        w = flat[off : off + n_in * n_out].reshape(n_in, n_out)
        off += n_in * n_out
        b = flat[off : off + n_out]
        off += n_out
        views.append((w, b))
    return views


def init_params(spec: NetSpec, rng: np.random.Generator) -> NetParams:
    """Uniform +-sqrt(6/(n_in+n_out)) weights, zero biases."""
    flat = np.zeros(spec.param_count)
    for w, _b in layer_views(spec, flat):
        limit = np.sqrt(6.0 / (w.shape[0] + w.shape[1]))
        w[:] = rng.uniform(-limit, limit, size=w.shape)
    return NetParams(flat)


def _activate(spec: NetSpec, z: np.ndarray) -> np.ndarray:
    if spec.activation == "relu":
        return np.maximum(z, 0.0)
    return np.where(z > 0.0, z, spec.prelu_alpha * z)


def _activate_grad(spec: NetSpec, z: np.ndarray) -> np.ndarray:
    if spec.activation == "relu":
        return (z > 0.0).astype(float)
    return np.where(z > 0.0, 1.0, spec.prelu_alpha)


@dataclass
class ForwardCache:
    """Intermediate values for backward(); tied to the params that produced it."""

    spec: NetSpec
    params_flat: np.ndarray
    inputs: list = field(default_factory=list)  # layer inputs, batch-first
    pre_acts: list = field(default_factory=list)
    masks: list = field(default_factory=list)  # scaled dropout masks or None
    squeezed: bool = False


def forward(spec: NetSpec, params: NetParams, x, rng: np.random.Generator | None = None):
    """Run the net; rng=None disables dropout, otherwise masks are sampled.

    Accepts a single input vector or a (batch, in_dim) matrix.  Inverted
    dropout: kept units are rescaled by 1/(1-p), so the rng=None pass needs
    no mask at all.  Returns (output, cache).
    """
    flat = _check_flat(spec, params.flat)
    arr = np.asarray(x, dtype=float)
    squeezed = arr.ndim == 1
    h = np.atleast_2d(arr)
    if h.shape[1] != spec.in_dim:
        raise NetError(f"input has width {h.shape[1]}, spec expects {spec.in_dim}")
    cache = ForwardCache(spec, params.flat, squeezed=squeezed)
    keep = 1.0 - spec.dropout_p
    views = layer_views(spec, flat)
    for i, (w, b) in enumerate(views):
        cache.inputs.append(h)
        z = h @ w + b
        if i == spec.n_layers - 1:
            cache.pre_acts.append(None)  # linear output layer
            cache.masks.append(None)
            h = z
            continue
        cache.pre_acts.append(z)
        a = _activate(spec, z)
        if rng is not None and spec.dropout_p > 0.0:
            mask = (rng.random(a.shape) < keep) / keep
            a = a * mask
            cache.masks.append(mask)
        else:
            cache.masks.append(None)
        h = a
    out = h[0] if squeezed else h
    return out, cache


def backward(spec: NetSpec, params: NetParams, cache: ForwardCache, output_grad):
    """Gradient of a scalar loss given d(loss)/d(output).

    Honors whatever dropout masks the forward pass sampled.  Returns
    (Gradient, input_grad) so encoder/decoder stacks can be chained.
    """
    if cache.spec != spec or cache.params_flat is not params.flat:
        raise NetError("stale cache: produced by a different forward pass")
    g = np.atleast_2d(np.asarray(output_grad, dtype=float))
    if g.shape != (cache.inputs[0].shape[0], spec.out_dim):
        raise NetError("output_grad shape does not match the cached forward pass")
    flat_grad = np.zeros(spec.param_count)
    views = layer_views(spec, params.flat)
    grad_views = layer_views(spec, flat_grad)
    for i in range(spec.n_layers - 1, -1, -1):
        w, _b = views[i]
        gw, gb = grad_views[i]
        if i < spec.n_layers - 1:
            if cache.masks[i] is not None:
                g = g * cache.masks[i]
            g = g * _activate_grad(spec, cache.pre_acts[i])
        gw += cache.inputs[i].T @ g
        gb += g.sum(axis=0)
        g = g @ w.T
    input_grad = g[0] if cache.squeezed else g
    return Gradient(flat_grad), input_grad


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------

def _as_matrix(rows) -> np.ndarray:
    arr = np.asarray(rows, dtype=float) if isinstance(rows, np.ndarray) else np.array(
        [np.asarray(r, dtype=float) for r in rows]
    )
    if arr.ndim == 1:
        arr = arr[None, :]
    return arr


def path_mse_loss(pred, target):
    """Mean squared waypoint error: (1/N) sum_j ||pred_j - target_j||^2.

    N counts waypoint pairs, not scalar components.  Returns the scalar and
    the gradient with respect to every prediction row.
    """
    p = _as_matrix(pred)
    t = _as_matrix(target)
    if p.shape != t.shape:
        raise NetError(f"pred shape {p.shape} != target shape {t.shape}")
    if p.shape[0] == 0:
        raise NetError("at least one prediction pair is required")
    diff = p - t
    loss = float((diff * diff).sum() / p.shape[0])
    return loss, 2.0 * diff / p.shape[0]


def quaternion_loss(pred_q, target_q):
    """Unit-sphere rotation loss || q/||q|| - target ||^2 with its gradient.

    The gradient flows through the normalization, so any positive rescaling
    of a correct prediction stays a zero of the loss.
    """
    q = np.asarray(pred_q, dtype=float)
    t = np.asarray(target_q, dtype=float)
    if q.shape != (4,) or t.shape != (4,):
        raise NetError("quaternion loss expects 4-vectors")
    if abs(np.linalg.norm(t) - 1.0) > 1e-6:
        raise NetError("target quaternion must be normalized")
    r = float(np.linalg.norm(q))
    if r < 1e-9:
        raise NetError("prediction norm too small to normalize")
    u = q / r
    diff = u - t
    loss = float(diff @ diff)
    grad = (2.0 / r) * (diff - u * float(u @ diff))
    return loss, grad


def combined_pose_loss(pred_pos, target_pos, pred_quat, target_quat, beta: float = 1.0):
    """Rigid-body loss: positional MSE plus beta times the quaternion loss."""
    l_p, g_pos = path_mse_loss(pred_pos, target_pos)
    pq = _as_matrix(pred_quat)
    tq = _as_matrix(target_quat)
    l_q = 0.0
    g_quat = np.zeros_like(pq)
    for i in range(pq.shape[0]):
        li, gi = quaternion_loss(pq[i], tq[i])
        l_q += li / pq.shape[0]
        g_quat[i] = gi / pq.shape[0]
    return l_p + beta * l_q, g_pos, beta * g_quat


def cae_loss(enc_spec: NetSpec, dec_spec: NetSpec, enc_params: NetParams,
             dec_params: NetParams, batch, lam: float):
    """Autoencoder reconstruction MSE plus lam * sum of squared encoder weights.

    The regularizer covers encoder weight matrices only (biases excluded).
    Returns (loss, encoder Gradient, decoder Gradient).
    """
    if lam < 0:
        raise NetError("lam must be non-negative")
    x = _as_matrix(batch)
    if x.shape[0] == 0:
        raise NetError("batch must be non-empty")
    z, enc_cache = forward(enc_spec, enc_params, x)
    xhat, dec_cache = forward(dec_spec, dec_params, z)
    diff = xhat - x
    loss = float((diff * diff).sum() / x.shape[0])
    dec_grad, dz = backward(dec_spec, dec_params, dec_cache, 2.0 * diff / x.shape[0])
    enc_grad, _ = backward(enc_spec, enc_params, enc_cache, dz)
    for (w, _b), (gw, _gb) in zip(
        layer_views(enc_spec, enc_params.flat), layer_views(enc_spec, enc_grad.flat)
    ):
        loss += lam * float((w * w).sum())
        gw += 2.0 * lam * w
    return loss, enc_grad, dec_grad


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------

@dataclass
class AdamState:
    """First/second moment buffers plus hyperparameters for one parameter vector."""

    m: np.ndarray
    v: np.ndarray
    step: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params: NetParams | int, lr: float = 1e-3, **kw) -> "AdamState":
        n = params if isinstance(params, int) else params.flat.size
        return cls(m=np.zeros(n), v=np.zeros(n), lr=lr, **kw)


def adam_step(params: NetParams, grad: Gradient, state: AdamState):
    """One bias-corrected Adam update, in place.  Returns (params, state)."""
    g = grad.flat
    if g.size != params.flat.size or g.size != state.m.size:
        raise NetError("params, grad, and state lengths must match")
    state.step += 1
    state.m = state.beta1 * state.m + (1.0 - state.beta1) * g
    state.v = state.beta2 * state.v + (1.0 - state.beta2) * g * g
    m_hat = state.m / (1.0 - state.beta1**state.step)
    v_hat = state.v / (1.0 - state.beta2**state.step)
    params.flat -= state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return params, state


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

CHECKPOINT_FORMAT = "neuroplan-net-v1"


def save_net(path, spec: NetSpec, params: NetParams, seed: int | None = None) -> None:
    """Write a portable checkpoint: JSON header + base64 little-endian float64."""
    payload = np.ascontiguousarray(params.flat, dtype="<f8").tobytes()
    doc = {
        "format": CHECKPOINT_FORMAT,
        "spec": spec.to_json(),
        "created": datetime.datetime.now(datetime.timezone.utc).isoformat(),
        "seed": seed,
        "dtype": "<f8",
        "params_b64": base64.b64encode(payload).decode("ascii"),
    }
    FsPath(path).write_text(json.dumps(doc))


def load_net(path):
    """Read a checkpoint written by save_net; returns (spec, params, meta)."""
    doc = json.loads(FsPath(path).read_text())
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise NetError(f"unsupported checkpoint format {doc.get('format')!r}")
    spec = NetSpec.from_json(doc["spec"])
    raw = base64.b64decode(doc["params_b64"])
    flat = np.frombuffer(raw, dtype="<f8").astype(float)
    params = NetParams(_check_flat(spec, flat))
    meta = {"created": doc.get("created"), "seed": doc.get("seed")}
    return spec, params, meta
