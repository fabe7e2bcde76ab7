"""Shared domain types, deterministic RNG streams, and the trajectory dataset format.

Action vectors and action-space states are plain float64 numpy arrays of a
fixed dimension (2 for the desk environments). The action-space state is the
running sum of commanded actions; it lives in the same coordinate frame as
actions, which is what makes shared normalization statistics meaningful.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

ACTION_DIM = 2
OBS_DIM = 7
DATASET_FORMAT = "streampolicy-trajectories"
DATASET_VERSION = 1


class DimensionMismatchError(ValueError):
    """A vector or matrix had the wrong trailing dimension."""


class DatasetError(ValueError):
    """Dataset file is malformed or violates a structural invariant."""


def as_vector(values, dim: int | None = None) -> np.ndarray:
    """Coerce to a finite 1-D float64 vector, checking dimension if given."""
    v = np.asarray(values, dtype=np.float64)
    if v.ndim != 1:
        raise DimensionMismatchError(f"expected 1-D vector, got shape {v.shape}")
    if dim is not None and v.shape[0] != dim:
        raise DimensionMismatchError(f"expected dimension {dim}, got {v.shape[0]}")
    if not np.all(np.isfinite(v)):
        raise ValueError("vector contains non-finite entries")
    return v


@dataclass(frozen=True)
class Observation:
    """One environment observation.

    features: raw feature vector (position, goal, latch flag, goal offset).
    frame_id: strictly increasing within an episode.
    capture_time: clock value at capture; step index in recorded datasets,
        simulation or wall milliseconds inside the executors.
    """

    features: np.ndarray
    frame_id: int
    capture_time: float


@dataclass
class Trajectory:
    """One episode: observations (length L), actions (L, D), states (L+1, D).

    action_states[0] is the episode's alpha_0 and action_states[n] is the
    exact left-to-right running sum of actions 0..n-1 on top of it.
    """

    observations: list[Observation]
    actions: np.ndarray
    action_states: np.ndarray

    def __len__(self) -> int:
        return self.actions.shape[0]

    def validate(self) -> None:
        L, D = self.actions.shape
        if len(self.observations) != L:
            raise DatasetError(f"{len(self.observations)} observations for {L} actions")
        if self.action_states.shape != (L + 1, D):
            raise DatasetError(f"action_states shape {self.action_states.shape}, want {(L + 1, D)}")
        expect = cumulative_states(self.actions, self.action_states[0])
        # exact prefix-sum identity, not approximate: the state ledger is
        # defined as this summation order
        if not np.array_equal(expect, self.action_states):
            raise DatasetError("action_states is not the exact prefix sum of actions")
        last = None
        for obs in self.observations:
            if last is not None and obs.frame_id <= last:
                raise DatasetError("frame_id not strictly increasing")
            last = obs.frame_id


def cumulative_states(actions: np.ndarray, alpha0: np.ndarray) -> np.ndarray:
    """Prefix sums of actions starting at alpha0, summed left to right.

    Returns an (L+1, D) array S with S[0] = alpha0 and
    S[n] = S[n-1] + actions[n-1] computed in exactly that order, so the
    identity holds bitwise in float64.
    """
    actions = np.asarray(actions, dtype=np.float64)
    if actions.ndim != 2:
        raise DimensionMismatchError(f"actions must be (L, D), got {actions.shape}")
    alpha0 = as_vector(alpha0, actions.shape[1])
    out = np.empty((actions.shape[0] + 1, actions.shape[1]), dtype=np.float64)
    out[0] = alpha0
    for n in range(actions.shape[0]):
        out[n + 1] = out[n] + actions[n]
    return out


def make_rng(seed: int, *stream: int) -> np.random.Generator:
    """Counter-based generator (Philox) for a named substream of a seed.

    Identical (seed, stream) always yields an identical sequence; distinct
    stream tuples are statistically independent. Substreams let training
    iterations, episodes, and environments draw reproducibly without
    sharing mutable generator state.
    """
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(s) for s in stream))
    return np.random.Generator(np.random.Philox(ss))


# stream ids used across the package; values are arbitrary but frozen
STREAM_DEMO = 1
STREAM_INIT = 2
STREAM_TRAIN = 3
STREAM_EVAL = 4
STREAM_PREDICTOR = 5
STREAM_INDICATOR = 6
STREAM_MODEL_INIT = 7


def _obs_to_json(obs: Observation) -> dict:
    return {
        "f": [float(x) for x in obs.features],
        "id": int(obs.frame_id),
        "t": float(obs.capture_time),
    }


def _obs_from_json(rec: dict, dim_obs: int) -> Observation:
    return Observation(
        features=as_vector(rec["f"], dim_obs),
        frame_id=int(rec["id"]),
        capture_time=float(rec["t"]),
    )


def save_dataset(path, trajectories: list[Trajectory], *, dim: int, env_meta: dict, seed: int) -> None:
    """Write trajectories as a line-delimited JSON file with a header record.

    Floats round-trip exactly (shortest-repr encoding), so saving and
    reloading reproduces arrays bitwise and rewriting an unchanged dataset
    produces a byte-identical file.
    """
    for traj in trajectories:
        traj.validate()
        if traj.actions.shape[1] != dim:
            raise DatasetError(f"trajectory dim {traj.actions.shape[1]} != header dim {dim}")
    header = {
        "format": DATASET_FORMAT,
        "version": DATASET_VERSION,
        "dim": int(dim),
        "episodes": len(trajectories),
        "env": env_meta,
        "seed": int(seed),
    }
    lines = [json.dumps(header, sort_keys=True, separators=(",", ":"))]
    for traj in trajectories:
        rec = {
            "obs": [_obs_to_json(o) for o in traj.observations],
            "act": [[float(x) for x in row] for row in traj.actions],
            "st": [[float(x) for x in row] for row in traj.action_states],
        }
        lines.append(json.dumps(rec, sort_keys=True, separators=(",", ":")))
    Path(path).write_text("\n".join(lines) + "\n")


def load_dataset(path) -> tuple[list[Trajectory], dict]:
    """Read a dataset file, validating format, version, and prefix sums."""
    text = Path(path).read_text()
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise DatasetError(f"{path}: empty dataset file")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise DatasetError(f"{path}: unreadable header: {exc}") from exc
    if header.get("format") != DATASET_FORMAT:
        raise DatasetError(f"{path}: not a trajectory dataset")
    if header.get("version") != DATASET_VERSION:
        raise DatasetError(f"{path}: unsupported version {header.get('version')!r}")
    dim = int(header["dim"])
    episodes = int(header["episodes"])
    if len(lines) - 1 != episodes:
        raise DatasetError(f"{path}: header claims {episodes} episodes, file has {len(lines) - 1}")
    obs_dim = int(header.get("env", {}).get("obs_dim", OBS_DIM))
    out = []
    for i, ln in enumerate(lines[1:]):
        try:
            rec = json.loads(ln)
        except json.JSONDecodeError as exc:
            raise DatasetError(f"{path}: bad episode record {i}: {exc}") from exc
        traj = Trajectory(
            observations=[_obs_from_json(o, obs_dim) for o in rec["obs"]],
            actions=np.asarray(rec["act"], dtype=np.float64).reshape(len(rec["act"]), dim),
            action_states=np.asarray(rec["st"], dtype=np.float64).reshape(len(rec["st"]), dim),
        )
        try:
            traj.validate()
        except DatasetError as exc:
            raise DatasetError(f"{path}: episode {i}: {exc}") from exc
        if not np.all(np.isfinite(traj.actions)) or not np.all(np.isfinite(traj.action_states)):
            raise DatasetError(f"{path}: episode {i}: non-finite values")
        out.append(traj)
    return out, header
