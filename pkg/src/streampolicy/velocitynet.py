"""Velocity network: a small float64 MLP with hand-written gradients.

The network maps (action-space state x, horizon clock t, observation features)
to a velocity in action space. Gradients are analytic (no autodiff dependency)
and are validated against central differences in the test suite. The same
file also provides the Adam update and the binary checkpoint container shared
with the saliency predictor.
"""

from __future__ import annotations

import json
import math
import struct
import zlib
from dataclasses import dataclass, field, replace

import numpy as np

from . import normkit
from .core import DimensionMismatchError, make_rng
from .flowmatch import FlowParams
from .normkit import NormStats

# fixed input featurization: raw t plus four sin/cos pairs over [0, 1]
TIME_FREQS = (1.0, 2.0, 4.0, 8.0)
TIME_DIM = 1 + 2 * len(TIME_FREQS)
# observation features enter unscaled: the goal-position channels carry the
# fine corrections near the target, and downweighting them measurably hurts
# final-approach precision on the controller-mediated variant
OBS_FEATURE_SCALE = 1.0


def time_features(t) -> np.ndarray:
    """Featurize horizon time t in [0, 1]: [t, sin/cos(2 pi f t) for f in 1,2,4,8]."""
    t = np.asarray(t, dtype=np.float64)
    cols = [t[..., None]]
    for f in TIME_FREQS:
        ang = 2.0 * math.pi * f * t[..., None]
        cols.append(np.sin(ang))
        cols.append(np.cos(ang))
    return np.concatenate(cols, axis=-1)


@dataclass
class VelocityModel:
    """MLP weights plus the sizes needed to validate inputs.

    params maps "w0","b0",...: layer i computes tanh(x @ wi + bi) except the
    final layer, which is linear.
    """

    action_dim: int
    obs_dim: int
    hidden: tuple[int, ...]
    params: dict[str, np.ndarray]

    @property
    def input_dim(self) -> int:
        return self.action_dim + TIME_DIM + self.obs_dim

    def n_layers(self) -> int:
        return len(self.hidden) + 1


def init_velocity_model(action_dim: int, obs_dim: int, hidden=(128, 128), *, rng: np.random.Generator) -> VelocityModel:
    sizes = [action_dim + TIME_DIM + obs_dim, *hidden, action_dim]
    params: dict[str, np.ndarray] = {}
    for i in range(len(sizes) - 1):
        fan_in = sizes[i]
        params[f"w{i}"] = rng.normal(0.0, 1.0 / math.sqrt(fan_in), size=(sizes[i], sizes[i + 1]))
        params[f"b{i}"] = np.zeros(sizes[i + 1])
    return VelocityModel(action_dim=action_dim, obs_dim=obs_dim, hidden=tuple(hidden), params=params)


def _assemble_inputs(model: VelocityModel, x: np.ndarray, t, obs_feat: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    obs_feat = np.asarray(obs_feat, dtype=np.float64)
    if x.shape[-1] != model.action_dim:
        raise DimensionMismatchError(f"state dim {x.shape[-1]} != {model.action_dim}")
    if obs_feat.shape[-1] != model.obs_dim:
        raise DimensionMismatchError(f"obs dim {obs_feat.shape[-1]} != {model.obs_dim}")
    tf = time_features(t)
    if x.ndim == 1:
        tf = tf.reshape(TIME_DIM)
    return np.concatenate([x, tf, obs_feat * OBS_FEATURE_SCALE], axis=-1)


def _mlp_forward(params: dict[str, np.ndarray], inp: np.ndarray, n_layers: int):
    """Returns (output, activations). Hidden activations use tanh."""
    acts = [inp]
    h = inp
    for i in range(n_layers):
        z = h @ params[f"w{i}"] + params[f"b{i}"]
        h = np.tanh(z) if i < n_layers - 1 else z
        acts.append(h)
    return h, acts


def forward(model: VelocityModel, x: np.ndarray, t: float, obs_feat: np.ndarray) -> np.ndarray:
    """Velocity prediction for a single state/time/observation triple."""
    inp = _assemble_inputs(model, x, float(t), obs_feat)
    out, _ = _mlp_forward(model.params, inp, model.n_layers())
    return out


def forward_batch(model: VelocityModel, X: np.ndarray, T: np.ndarray, OBS: np.ndarray) -> np.ndarray:
    inp = _assemble_inputs(model, X, np.asarray(T, dtype=np.float64), OBS)
    out, _ = _mlp_forward(model.params, inp, model.n_layers())
    return out


def loss_and_grad(model: VelocityModel, X: np.ndarray, T: np.ndarray, OBS: np.ndarray, V_target: np.ndarray):
    """Mean squared-L2 velocity error over a batch, with analytic gradients.

    loss = mean_b ||v_pred_b - v_target_b||^2. Gradient layout matches
    model.params key for key.
    """
    n_layers = model.n_layers()
    inp = _assemble_inputs(model, X, np.asarray(T, dtype=np.float64), OBS)
    out, acts = _mlp_forward(model.params, inp, n_layers)
    B = out.shape[0]
    diff = out - np.asarray(V_target, dtype=np.float64)
    loss = float(np.sum(diff * diff)) / B

    grads: dict[str, np.ndarray] = {}
    delta = 2.0 * diff / B
    for i in reversed(range(n_layers)):
        a_prev = acts[i]
        grads[f"w{i}"] = a_prev.T @ delta
        grads[f"b{i}"] = delta.sum(axis=0)
        if i > 0:
            delta = (delta @ model.params[f"w{i}"].T) * (1.0 - acts[i] * acts[i])
    return loss, grads


@dataclass
class AdamState:
    """First/second moment accumulators keyed like the parameter dict."""

    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def init_adam(params: dict[str, np.ndarray], lr: float, **kw) -> AdamState:
    st = AdamState(lr=lr, **kw)
    for k, p in params.items():
        st.m[k] = np.zeros_like(p)
        st.v[k] = np.zeros_like(p)
    return st


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: AdamState, lr: float | None = None) -> None:
    """One Adam update, in place. Pass lr to override the stored rate (for schedules)."""
    state.step += 1
    rate = state.lr if lr is None else lr
    c1 = 1.0 - state.beta1**state.step
    c2 = 1.0 - state.beta2**state.step
    for k, p in params.items():
        g = grads[k]
        state.m[k] = state.beta1 * state.m[k] + (1.0 - state.beta1) * g
        state.v[k] = state.beta2 * state.v[k] + (1.0 - state.beta2) * (g * g)
        mhat = state.m[k] / c1
        vhat = state.v[k] / c2
        p -= rate * mhat / (np.sqrt(vhat) + state.eps)


# ---------------------------------------------------------------------------
# checkpoint container
#
# layout: magic(8) | version u32 | type tag u32 | meta_len u32 | meta JSON |
#         float64-LE array blob | crc32(blob) u32
# meta lists array names and shapes in blob order plus a free-form config
# dict. All scalars in config survive JSON round-trips exactly (shortest-repr
# floats), so reloading reproduces values bitwise.
# ---------------------------------------------------------------------------

CONTAINER_MAGIC = b"SPCONT01"
CONTAINER_VERSION = 1
TAG_VELOCITY_POLICY = 1
TAG_SALIENCY_PREDICTOR = 2


class CheckpointError(ValueError):
    """Checkpoint file is unreadable, truncated, or corrupt."""


class CheckpointVersionError(CheckpointError):
    """Checkpoint has an unsupported container version."""


def write_container(path, *, tag: int, arrays: list[tuple[str, np.ndarray]], config: dict) -> None:
    meta = {
        "arrays": [[name, list(a.shape)] for name, a in arrays],
        "config": config,
    }
    meta_bytes = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode("utf-8")
    blob = b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes() for _, a in arrays)
    with open(path, "wb") as fh:
        fh.write(CONTAINER_MAGIC)
        fh.write(struct.pack("<II", CONTAINER_VERSION, tag))
        fh.write(struct.pack("<I", len(meta_bytes)))
        fh.write(meta_bytes)
        fh.write(blob)
        fh.write(struct.pack("<I", zlib.crc32(blob) & 0xFFFFFFFF))


def read_container(path, *, expect_tag: int | None = None):
    """Returns (tag, arrays dict, config dict). Raises CheckpointError subtypes."""
    data = open(path, "rb").read()
    if len(data) < 20 or data[:8] != CONTAINER_MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint container")
    version, tag = struct.unpack_from("<II", data, 8)
    if version != CONTAINER_VERSION:
        raise CheckpointVersionError(f"{path}: container version {version}, supported {CONTAINER_VERSION}")
    (meta_len,) = struct.unpack_from("<I", data, 16)
    meta_end = 20 + meta_len
    if meta_end > len(data):
        raise CheckpointError(f"{path}: truncated metadata")
    try:
        meta = json.loads(data[20:meta_end].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt metadata: {exc}") from exc
    total = sum(int(np.prod(shape)) for _, shape in meta["arrays"])
    blob_end = meta_end + 8 * total
    if blob_end + 4 > len(data):
        raise CheckpointError(f"{path}: truncated parameter blob")
    blob = data[meta_end:blob_end]
    (crc,) = struct.unpack_from("<I", data, blob_end)
    if crc != (zlib.crc32(blob) & 0xFFFFFFFF):
        raise CheckpointError(f"{path}: parameter blob fails checksum")
    if expect_tag is not None and tag != expect_tag:
        raise CheckpointError(f"{path}: container tag {tag}, expected {expect_tag}")
    arrays: dict[str, np.ndarray] = {}
    offset = 0
    flat = np.frombuffer(blob, dtype="<f8")
    for name, shape in meta["arrays"]:
        n = int(np.prod(shape))
        arrays[name] = flat[offset:offset + n].reshape([int(s) for s in shape]).astype(np.float64)
        offset += n
    return tag, arrays, meta["config"]


# ---------------------------------------------------------------------------
# policy bundle: model + normalization + flow parameters + state convention
# ---------------------------------------------------------------------------

ALPHA0_ZERO = "zero"
ALPHA0_INITIAL_POSITION = "initial_position"


@dataclass
class Policy:
    """Everything needed to run the velocity model in a loop.

    alpha0_convention records how the training data seeded its state ledger:
    pure action accumulation starts at zero, while environments whose state
    space coincides with physical space seed it with the initial position.
    """

    model: VelocityModel
    stats: NormStats
    flow: FlowParams
    alpha0_convention: str = ALPHA0_ZERO

    def initial_alpha(self, position: np.ndarray) -> np.ndarray:
        """Normalized starting state for an episode beginning at position."""
        if self.alpha0_convention == ALPHA0_INITIAL_POSITION:
            raw = np.asarray(position, dtype=np.float64)
        else:
            raw = np.zeros(self.model.action_dim)
        return normkit.normalize(raw, self.stats)

    def velocity(self, alpha_norm: np.ndarray, T: int, obs_features: np.ndarray) -> np.ndarray:
        return forward(self.model, alpha_norm, T / float(self.flow.h), obs_features)

    def action(self, alpha_norm: np.ndarray, T: int, obs_features: np.ndarray):
        """Generate one action: returns (normalized, raw) pair."""
        v = self.velocity(alpha_norm, T, obs_features)
        a_norm = v / float(self.flow.h)
        return a_norm, normkit.denormalize(a_norm, self.stats)


def save_policy(path, policy: Policy, *, adam: AdamState | None = None, iteration: int | None = None) -> None:
    arrays: list[tuple[str, np.ndarray]] = [
        ("norm.q_min", policy.stats.q_min),
        ("norm.q_max", policy.stats.q_max),
        ("norm.scale", policy.stats.scale),
    ]
    for k in sorted(policy.model.params):
        arrays.append((f"model.{k}", policy.model.params[k]))
    config = {
        "kind": "velocity-policy",
        "action_dim": policy.model.action_dim,
        "obs_dim": policy.model.obs_dim,
        "hidden": list(policy.model.hidden),
        "flow": {"k": policy.flow.k, "sigma0": policy.flow.sigma0, "h": policy.flow.h},
        "alpha0": policy.alpha0_convention,
    }
    if iteration is not None:
        config["iteration"] = int(iteration)
    if adam is not None:
        config["adam"] = {"lr": adam.lr, "beta1": adam.beta1, "beta2": adam.beta2,
                          "eps": adam.eps, "step": adam.step}
        for k in sorted(adam.m):
            arrays.append((f"adam_m.{k}", adam.m[k]))
            arrays.append((f"adam_v.{k}", adam.v[k]))
    write_container(path, tag=TAG_VELOCITY_POLICY, arrays=arrays, config=config)


def load_policy(path):
    """Returns (Policy, AdamState | None, iteration | None)."""
    _, arrays, config = read_container(path, expect_tag=TAG_VELOCITY_POLICY)
    stats = NormStats(q_min=arrays["norm.q_min"], q_max=arrays["norm.q_max"], scale=arrays["norm.scale"])
    flow = FlowParams(k=config["flow"]["k"], sigma0=config["flow"]["sigma0"], h=int(config["flow"]["h"]))
    params = {k[len("model."):]: v for k, v in arrays.items() if k.startswith("model.")}
    model = VelocityModel(
        action_dim=int(config["action_dim"]),
        obs_dim=int(config["obs_dim"]),
        hidden=tuple(int(x) for x in config["hidden"]),
        params=params,
    )
    policy = Policy(model=model, stats=stats, flow=flow, alpha0_convention=config["alpha0"])
    adam = None
    if "adam" in config:
        a = config["adam"]
        adam = AdamState(lr=a["lr"], beta1=a["beta1"], beta2=a["beta2"], eps=a["eps"], step=int(a["step"]))
        adam.m = {k[len("adam_m."):]: v for k, v in arrays.items() if k.startswith("adam_m.")}
        adam.v = {k[len("adam_v."):]: v for k, v in arrays.items() if k.startswith("adam_v.")}
    return policy, adam, config.get("iteration")
