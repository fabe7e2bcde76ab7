"""Training loop for the velocity network on demonstration windows.

Each step samples h-action windows from the demos, seeds the window ledger
with the precomputed action-space state at the window start (state alignment),
perturbs a grid state with the flow marginal's noise, and regresses the
network onto the reference velocity at that point. Disabling state alignment
re-seeds every window ledger at zero, which reproduces the mismatch between
training-time and execution-time state distributions.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import normkit, velocitynet
from .core import Observation, Trajectory, make_rng, STREAM_EVAL, STREAM_MODEL_INIT, STREAM_TRAIN
from .flowmatch import FlowParams
from .normkit import NormStats
from .velocitynet import AdamState, Policy, VelocityModel


class TrainingDivergedError(RuntimeError):
    """Loss became non-finite; carries the iteration and last finite loss."""

    def __init__(self, iteration: int, loss: float, last_finite: float | None):
        self.iteration = iteration
        self.loss = loss
        self.last_finite = last_finite
        super().__init__(
            f"non-finite loss {loss!r} at iteration {iteration}"
            + ("" if last_finite is None else f" (last finite loss {last_finite:.6g})")
        )


@dataclass
class TrainConfig:
    h: int = 10
    k: float = 5.0
    sigma0: float = 0.4
    iterations: int = 20000
    batch_size: int = 64
    lr: float = 1e-3
    seed: int = 0
    use_modified_norm: bool = True
    use_state_alignment: bool = True
    hidden: tuple[int, ...] = (128, 128)
    lr_schedule: str = "constant"  # or "cosine"
    log_every: int = 100

    def __post_init__(self):
        if self.h < 1 or self.iterations < 0 or self.batch_size < 1:
            raise ValueError("h, iterations, batch_size must be positive")
        if self.lr_schedule not in ("constant", "cosine"):
            raise ValueError(f"unknown lr schedule {self.lr_schedule!r}")


def sample_subtrajectory(trajectories: list[Trajectory], h: int, rng: np.random.Generator,
                         *, use_state_alignment: bool = True):
    """Uniformly pick an episode and window start; returns (obs, alpha, actions).

    alpha is the dataset-precomputed action-space state at the window start,
    or a zero vector when state alignment is ablated. Episodes shorter than h
    are skipped by resampling.
    """
    usable = [t for t in trajectories if len(t) >= h]
    if not usable:
        raise ValueError(f"no episode has at least h={h} actions")
    traj = usable[int(rng.integers(len(usable)))]
    s = int(rng.integers(len(traj) - h + 1))
    alpha = traj.action_states[s].copy()
    if not use_state_alignment:
        alpha = np.zeros_like(alpha)
    return traj.observations[s], alpha, traj.actions[s:s + h].copy()


@dataclass
class _Prepared:
    obs: list[np.ndarray]       # per-episode (L, obs_dim)
    actions: list[np.ndarray]   # per-episode (L, D)
    states: list[np.ndarray]    # per-episode (L+1, D)
    n_windows: np.ndarray       # windows per episode


def _prepare(trajectories: list[Trajectory], h: int) -> _Prepared:
    obs, actions, states, counts = [], [], [], []
    for traj in trajectories:
        if len(traj) < h:
            continue
        obs.append(np.stack([o.features for o in traj.observations]))
        actions.append(traj.actions)
        states.append(traj.action_states)
        counts.append(len(traj) - h + 1)
    if not obs:
        raise ValueError(f"no episode has at least h={h} actions")
    return _Prepared(obs=obs, actions=actions, states=states, n_windows=np.asarray(counts))


def _sample_batch(prep: _Prepared, cfg: TrainConfig, rng: np.random.Generator):
    B, h = cfg.batch_size, cfg.h
    eps = rng.integers(len(prep.obs), size=B)
    OBS = np.empty((B, prep.obs[0].shape[1]))
    ALPHA = np.empty((B, prep.actions[0].shape[1]))
    XI = np.empty((B, h, prep.actions[0].shape[1]))
    for b, e in enumerate(eps):
        s = int(rng.integers(prep.n_windows[e]))
        OBS[b] = prep.obs[e][s]
        ALPHA[b] = prep.states[e][s]
        XI[b] = prep.actions[e][s:s + h]
    if not cfg.use_state_alignment:
        ALPHA[:] = 0.0
    return OBS, ALPHA, XI


def training_step(model: VelocityModel, adam: AdamState, stats: NormStats, cfg: TrainConfig,
                  OBS: np.ndarray, ALPHA: np.ndarray, XI: np.ndarray,
                  rng: np.random.Generator, *, iteration: int = 0, lr: float | None = None,
                  last_finite: float | None = None) -> float:
    """One gradient step on a sampled batch; returns the batch loss.

    Raises TrainingDivergedError instead of silently carrying non-finite
    losses forward.
    """
    B, h = OBS.shape[0], cfg.h
    if cfg.use_modified_norm:
        a0 = normkit.normalize(ALPHA, stats)
        steps = normkit.normalize(XI, stats)
    else:
        a0 = normkit.normalize_legacy(ALPHA, stats)
        steps = normkit.normalize_legacy(XI, stats)

    # window ledger, summed left to right; W[:, 0] is alpha exactly
    W = np.empty((B, h + 1, ALPHA.shape[1]))
    W[:, 0] = a0
    for n in range(h):
        W[:, n + 1] = W[:, n] + steps[:, n]

    t = rng.random(B)                      # U[0, 1), so T <= h-1 always
    Tn = np.floor(t * h).astype(np.int64)
    t_node = Tn / float(h)
    rows = np.arange(B)
    mean = W[rows, Tn]
    std = cfg.sigma0 * np.exp(-cfg.k * t_node)
    x = mean + std[:, None] * rng.standard_normal(mean.shape)

    xi_dot = (W[rows, Tn + 1] - mean) * float(h)
    target = xi_dot - cfg.k * (x - mean)

    loss, grads = velocitynet.loss_and_grad(model, x, t_node, OBS, target)
    if not math.isfinite(loss):
        raise TrainingDivergedError(iteration, loss, last_finite)
    velocitynet.adam_step(model.params, grads, adam, lr=lr)
    return loss


def _lr_at(cfg: TrainConfig, iteration: int) -> float:
    if cfg.lr_schedule == "cosine":
        frac = iteration / max(1, cfg.iterations)
        return cfg.lr * 0.5 * (1.0 + math.cos(math.pi * min(1.0, frac)))
    return cfg.lr


def train(trajectories: list[Trajectory], cfg: TrainConfig, *, alpha0_convention: str,
          resume: tuple[Policy, AdamState, int] | None = None, progress=None):
    """Train a policy; returns (Policy, AdamState, log rows).

    Log rows are (iteration, loss, wall_ms). Training is deterministic for a
    fixed seed: every iteration draws from its own counter-derived stream, so
    resuming from a checkpoint continues the identical sequence.
    """
    prep = _prepare(trajectories, cfg.h)
    fp = FlowParams(k=cfg.k, sigma0=cfg.sigma0, h=cfg.h)
    stats = normkit.fit_stats(trajectories)
    if resume is None:
        obs_dim = prep.obs[0].shape[1]
        action_dim = prep.actions[0].shape[1]
        model = velocitynet.init_velocity_model(
            action_dim, obs_dim, cfg.hidden, rng=make_rng(cfg.seed, STREAM_MODEL_INIT))
        adam = velocitynet.init_adam(model.params, cfg.lr)
        start = 0
        policy = Policy(model=model, stats=stats, flow=fp, alpha0_convention=alpha0_convention)
    else:
        policy, adam, start = resume
        model = policy.model

    log: list[tuple[int, float, float]] = []
    t0 = time.perf_counter()
    last_finite: float | None = None
    for i in range(start, cfg.iterations):
        rng = make_rng(cfg.seed, STREAM_TRAIN, i)
        OBS, ALPHA, XI = _sample_batch(prep, cfg, rng)
        loss = training_step(model, adam, stats, cfg, OBS, ALPHA, XI, rng,
                             iteration=i, lr=_lr_at(cfg, i), last_finite=last_finite)
        last_finite = loss
        if i % cfg.log_every == 0 or i == cfg.iterations - 1:
            wall_ms = (time.perf_counter() - t0) * 1000.0
            log.append((i, loss, wall_ms))
            if progress is not None:
                progress(i, loss, wall_ms)
    return policy, adam, log


def write_train_log(path, rows) -> None:
    with open(path, "w") as fh:
        fh.write("iteration,loss,wall_ms\n")
        for it, loss, ms in rows:
            fh.write(f"{it},{loss!r},{ms:.3f}\n")


def evaluate(policy: Policy, kind, episodes: int, seed: int, *, step_cap: int = 120,
             scheduler=None, stage=None, predictor=None) -> dict:
    """Closed-loop success rate over simulated episodes (zero latency default)."""
    from . import envsim, streamexec

    if scheduler is None:
        scheduler = streamexec.SchedulerConfig(mode=streamexec.MODE_STREAMING, h=policy.flow.h, seed=seed)
    if stage is None:
        stage = streamexec.ZERO_LATENCY
    wins = 0
    dists = []
    for ep in range(episodes):
        env = envsim.make_env(kind, seed, ep, step_cap=step_cap)
        result = streamexec.run_episode(policy, predictor, env, stage, scheduler)
        wins += int(result.success)
        dists.append(float(np.linalg.norm(result.final_state.position - result.final_state.goal)))
    return {
        "episodes": episodes,
        "success_rate": wins / episodes,
        "mean_endpoint_error": float(np.mean(dists)),
    }
