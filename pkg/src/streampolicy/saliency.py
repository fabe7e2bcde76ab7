"""Saliency prediction for adaptive early observation.

An early observation is safe when the scene will barely change while the
remaining actions of the horizon finish executing; it is harmful when those
actions are about to change what the policy should see (the latch regions in
the simulated tasks shift the goal). The predictor estimates the embedding
change between the current frame and the frame after the remaining actions,
without access to the future frame:

    score = || g(embed(obs); remaining actions) ||_2

Firing rule: observe early when score <= eta. The threshold eta is an order
statistic of scores collected on held-out demonstrations, chosen to hit a
target firing rate, so all indicator variants can be compared at matched
observation budgets.

The embedding is a frozen random projection of the observation features
followed by tanh; only the change-prediction head trains. Conditioning on the
remaining actions enters through per-layer scale-shift modulation of the
trunk's hidden pre-activations.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .core import (
    ACTION_DIM,
    OBS_DIM,
    STREAM_MODEL_INIT,
    STREAM_PREDICTOR,
    Observation,
    Trajectory,
    make_rng,
)
from .velocitynet import (
    AdamState,
    TAG_SALIENCY_PREDICTOR,
    adam_step,
    init_adam,
    read_container,
    write_container,
)

N_EO_MAX = 4
EMBED_DIM = 16

EO_NAIVE = "naive"
EO_RANDOM = "random"
EO_ACTION_NORM = "action_norm"
EO_ADAPTIVE = "adaptive"

INDICATOR_MODES = (EO_NAIVE, EO_RANDOM, EO_ACTION_NORM, EO_ADAPTIVE)


@dataclass(frozen=True)
class Indicator:
    """Early-observation firing rule.

    naive fires every horizon; random fires with probability p; action_norm
    fires when the remaining actions are small; adaptive fires when the
    predicted embedding change is small. Score-based modes fire on
    score <= eta.
    """

    mode: str
    eta: float = 0.0
    p: float = 1.0

    def __post_init__(self):
        if self.mode not in INDICATOR_MODES:
            raise ValueError(f"unknown indicator mode {self.mode!r}")
        if not 0.0 <= self.p <= 1.0:
            raise ValueError("p must lie in [0, 1]")


@dataclass(frozen=True)
class PredictorConfig:
    obs_dim: int = OBS_DIM
    action_dim: int = ACTION_DIM
    embed_dim: int = EMBED_DIM
    hidden: int = 64
    cond_hidden: int = 32
    n_eo_max: int = N_EO_MAX
    iterations: int = 3000
    batch_size: int = 64
    lr: float = 1e-4
    gap_choices: tuple[int, ...] = (1, 2, 3)
    seed: int = 0

    def __post_init__(self):
        if self.iterations < 1 or self.batch_size < 1:
            raise ValueError("iterations and batch_size must be positive")
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if min(self.gap_choices) < 1:
            raise ValueError("gaps must be at least 1")
        if self.n_eo_max < 1:
            raise ValueError("n_eo_max must be at least 1")

    @property
    def cond_dim(self) -> int:
        return self.n_eo_max * self.action_dim


@dataclass
class Predictor:
    config: PredictorConfig
    params: dict[str, np.ndarray] = field(default_factory=dict)

    def trainable(self) -> dict[str, np.ndarray]:
        # the encoder is frozen; everything else trains
        return {k: v for k, v in self.params.items() if not k.startswith("enc_")}


def init_predictor(cfg: PredictorConfig) -> Predictor:
    rng = make_rng(cfg.seed, STREAM_MODEL_INIT, 2)

    def w(rows, cols):
        return rng.standard_normal((rows, cols)) / np.sqrt(cols)

    n_mod = 4 * cfg.hidden  # gamma0, beta0, gamma1, beta1
    params = {
        "enc_w": w(cfg.embed_dim, cfg.obs_dim),
        "enc_b": np.zeros(cfg.embed_dim),
        "tw0": w(cfg.hidden, cfg.embed_dim),
        "tb0": np.zeros(cfg.hidden),
        "tw1": w(cfg.hidden, cfg.hidden),
        "tb1": np.zeros(cfg.hidden),
        "tw2": w(cfg.embed_dim, cfg.hidden),
        "tb2": np.zeros(cfg.embed_dim),
        "cw0": w(cfg.cond_hidden, cfg.cond_dim),
        "cb0": np.zeros(cfg.cond_hidden),
        "cw1": w(n_mod, cfg.cond_hidden),
        "cb1": np.zeros(n_mod),
    }
    return Predictor(config=cfg, params=params)


def embed(predictor: Predictor, obs_features: np.ndarray) -> np.ndarray:
    """Frozen random-projection embedding of observation features."""
    x = np.atleast_2d(np.asarray(obs_features, dtype=float))
    e = np.tanh(x @ predictor.params["enc_w"].T + predictor.params["enc_b"])
    return e[0] if np.asarray(obs_features).ndim == 1 else e


def pad_actions(remaining: np.ndarray, cfg: PredictorConfig) -> np.ndarray:
    """Flatten remaining actions, zero-padded (or truncated) to n_eo_max slots.

    Truncation keeps the nearest actions, which dominate the imminent change.
    """
    a = np.asarray(remaining, dtype=float).reshape(-1, cfg.action_dim)
    a = a[: cfg.n_eo_max]
    flat = np.zeros(cfg.cond_dim)
    flat[: a.size] = a.ravel()
    return flat


def _forward(params: dict, E: np.ndarray, C: np.ndarray):
    hidden = params["tb0"].shape[0]
    ch = np.tanh(C @ params["cw0"].T + params["cb0"])
    mod = ch @ params["cw1"].T + params["cb1"]
    g0, b0 = mod[:, :hidden], mod[:, hidden : 2 * hidden]
    g1, b1 = mod[:, 2 * hidden : 3 * hidden], mod[:, 3 * hidden :]
    z0 = E @ params["tw0"].T + params["tb0"]
    h0 = np.tanh((1.0 + g0) * z0 + b0)
    z1 = h0 @ params["tw1"].T + params["tb1"]
    h1 = np.tanh((1.0 + g1) * z1 + b1)
    out = h1 @ params["tw2"].T + params["tb2"]
    return out, (ch, g0, g1, z0, h0, z1, h1)


def predict_change(predictor: Predictor, obs_features: np.ndarray,
                   remaining: np.ndarray) -> np.ndarray:
    """Predicted embedding delta over the span of the remaining actions."""
    E = np.atleast_2d(embed(predictor, obs_features))
    C = np.atleast_2d(pad_actions(remaining, predictor.config))
    out, _ = _forward(predictor.params, E, C)
    return out[0]


def saliency_score(predictor: Predictor, obs: Observation | np.ndarray,
                   remaining: np.ndarray) -> float:
    features = obs.features if isinstance(obs, Observation) else np.asarray(obs, dtype=float)
    return float(np.linalg.norm(predict_change(predictor, features, remaining)))


def action_norm_score(remaining: np.ndarray) -> float:
    """Norm of the remaining raw actions; the action-only baseline score."""
    return float(np.linalg.norm(np.asarray(remaining, dtype=float).ravel()))


def loss_and_grad(predictor: Predictor, E: np.ndarray, C: np.ndarray,
                  target: np.ndarray) -> tuple[float, dict[str, np.ndarray]]:
    """Mean per-sample squared error in embedding space, with analytic grads."""
    p = predictor.params
    B = E.shape[0]
    out, (ch, g0, g1, z0, h0, z1, h1) = _forward(p, E, C)
    diff = out - target
    loss = float(np.sum(diff * diff) / B)

    d_out = 2.0 * diff / B
    grads = {}
    grads["tw2"] = d_out.T @ h1
    grads["tb2"] = d_out.sum(axis=0)
    d_h1 = d_out @ p["tw2"]
    d_m1 = d_h1 * (1.0 - h1 * h1)
    d_g1 = d_m1 * z1
    d_b1 = d_m1
    d_z1 = d_m1 * (1.0 + g1)
    grads["tw1"] = d_z1.T @ h0
    grads["tb1"] = d_z1.sum(axis=0)
    d_h0 = d_z1 @ p["tw1"]
    d_m0 = d_h0 * (1.0 - h0 * h0)
    d_g0 = d_m0 * z0
    d_b0 = d_m0
    d_z0 = d_m0 * (1.0 + g0)
    grads["tw0"] = d_z0.T @ E
    grads["tb0"] = d_z0.sum(axis=0)
    d_mod = np.concatenate([d_g0, d_b0, d_g1, d_b1], axis=1)
    grads["cw1"] = d_mod.T @ ch
    grads["cb1"] = d_mod.sum(axis=0)
    d_ch = d_mod @ p["cw1"]
    d_cpre = d_ch * (1.0 - ch * ch)
    grads["cw0"] = d_cpre.T @ C
    grads["cb0"] = d_cpre.sum(axis=0)
    return loss, grads


def _sample_pairs(trajectories: list[Trajectory], cfg: PredictorConfig,
                  rng: np.random.Generator):
    """Frame pairs (f, f+gap) with the actions executed in between."""
    gmin = min(cfg.gap_choices)
    usable = [t for t in trajectories if len(t) > gmin]
    if not usable:
        raise ValueError("no trajectory long enough for the configured gaps")
    B = cfg.batch_size
    early = np.empty((B, cfg.obs_dim))
    late = np.empty((B, cfg.obs_dim))
    cond = np.empty((B, cfg.cond_dim))
    gaps = np.asarray(cfg.gap_choices)
    for b in range(B):
        traj = usable[int(rng.integers(len(usable)))]
        feasible = gaps[gaps < len(traj)]
        gap = int(feasible[int(rng.integers(len(feasible)))])
        f = int(rng.integers(len(traj) - gap))
        early[b] = traj.observations[f].features
        late[b] = traj.observations[f + gap].features
        cond[b] = pad_actions(traj.actions[f : f + gap], cfg)
    return early, late, cond


def train_predictor(trajectories: list[Trajectory], cfg: PredictorConfig,
                    progress=None) -> tuple[Predictor, list[tuple[int, float, float]]]:
    """Train the change predictor; cosine-decayed Adam from cfg.lr.

    Returns the predictor and a (iteration, loss, wall_ms) log. Per-iteration
    RNG streams keyed by the seed make runs reproducible.
    """
    predictor = init_predictor(cfg)
    adam = init_adam(predictor.trainable(), lr=cfg.lr)
    log: list[tuple[int, float, float]] = []
    t0 = time.perf_counter()
    for i in range(cfg.iterations):
        rng = make_rng(cfg.seed, STREAM_PREDICTOR, i)
        early, late, cond = _sample_pairs(trajectories, cfg, rng)
        E = embed(predictor, early)
        target = embed(predictor, late) - E
        loss, grads = loss_and_grad(predictor, E, cond, target)
        if not np.isfinite(loss):
            raise FloatingPointError(f"predictor loss diverged at iteration {i}")
        lr = cfg.lr * 0.5 * (1.0 + np.cos(np.pi * i / cfg.iterations))
        adam_step(predictor.trainable(), grads, adam, lr=lr)
        if i % 50 == 0 or i == cfg.iterations - 1:
            log.append((i, loss, (time.perf_counter() - t0) * 1e3))
            if progress is not None:
                progress(i, loss)
    return predictor, log


def decision_scores(predictor: Predictor | None, trajectories: list[Trajectory],
                    h: int, n_eo: int, mode: str = EO_ADAPTIVE) -> np.ndarray:
    """Scores at every horizon decision point of the given demonstrations.

    Decision points sit n_eo actions before each non-overlapping horizon
    boundary, mirroring where the executor consults the indicator.
    """
    if not 1 <= n_eo < h:
        raise ValueError("n_eo must satisfy 1 <= n_eo < h")
    scores = []
    for traj in trajectories:
        for start in range(0, len(traj) - h + 1, h):
            d = start + h - n_eo
            remaining = traj.actions[d : start + h]
            if mode == EO_ADAPTIVE:
                scores.append(saliency_score(predictor, traj.observations[d], remaining))
            elif mode == EO_ACTION_NORM:
                scores.append(action_norm_score(remaining))
            else:
                raise ValueError(f"no scores for indicator mode {mode!r}")
    if not scores:
        raise ValueError("demonstrations too short to produce decision points")
    return np.asarray(scores)


def calibrate_threshold(scores: np.ndarray, target_rate: float) -> float:
    """Threshold whose firing rate on the calibration scores hits the target.

    Returns the k-th order statistic with k = floor(rate * n): the realized
    rate fraction(scores <= eta) is then >= target and as close as ties allow.
    target_rate 0 gives -inf (never fire), 1 gives +inf (always fire).
    """
    if not 0.0 <= target_rate <= 1.0:
        raise ValueError("target_rate must lie in [0, 1]")
    s = np.sort(np.asarray(scores, dtype=float).ravel())
    if s.size == 0:
        raise ValueError("no calibration scores")
    k = int(np.floor(target_rate * s.size))
    if k <= 0:
        return float("-inf")
    if k >= s.size:
        return float("inf")
    return float(s[k - 1])


def save_predictor(path, predictor: Predictor, iteration: int | None = None) -> None:
    cfg = predictor.config
    arrays = [(name, predictor.params[name]) for name in sorted(predictor.params)]
    meta = {
        "kind": "saliency_predictor",
        "obs_dim": cfg.obs_dim,
        "action_dim": cfg.action_dim,
        "embed_dim": cfg.embed_dim,
        "hidden": cfg.hidden,
        "cond_hidden": cfg.cond_hidden,
        "n_eo_max": cfg.n_eo_max,
        "iterations": cfg.iterations,
        "batch_size": cfg.batch_size,
        "lr": cfg.lr,
        "gap_choices": list(cfg.gap_choices),
        "seed": cfg.seed,
    }
    if iteration is not None:
        meta["iteration"] = int(iteration)
    write_container(path, tag=TAG_SALIENCY_PREDICTOR, arrays=arrays, config=meta)


def load_predictor(path) -> Predictor:
    _tag, arrays, meta = read_container(path, expect_tag=TAG_SALIENCY_PREDICTOR)
    cfg = PredictorConfig(
        obs_dim=int(meta["obs_dim"]),
        action_dim=int(meta["action_dim"]),
        embed_dim=int(meta["embed_dim"]),
        hidden=int(meta["hidden"]),
        cond_hidden=int(meta["cond_hidden"]),
        n_eo_max=int(meta["n_eo_max"]),
        iterations=int(meta["iterations"]),
        batch_size=int(meta["batch_size"]),
        lr=float(meta["lr"]),
        gap_choices=tuple(int(g) for g in meta["gap_choices"]),
        seed=int(meta["seed"]),
    )
    return Predictor(config=cfg, params=dict(arrays))
