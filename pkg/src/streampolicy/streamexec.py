"""Asynchronous three-stage policy execution: observe, generate, execute.

Two scheduling modes share one policy:

* sync_chunk: observe, generate a full h-action chunk, execute the first
  n_replan actions, repeat. Nothing overlaps; halts last the full observation
  plus generation time.
* streaming: actions are generated one at a time and executed as they become
  ready, so generation of action i+1 overlaps execution of action i. The next
  horizon's observation can be launched early, while the final n_eo actions of
  the current horizon are still executing, when an early-observation indicator
  fires at the decision point.

The simulated clock computes exact event times from the stage-latency algebra
and advances the environment causally: an observation launched when n_eo
executions remain captures the state after exactly h - n_eo steps of that
horizon, which is precisely the staleness early observation trades away.
Event logs are deterministic for fixed seeds, with ties ordered
observe < predict < generate < execute, then by action index.

The wall-clock runner reproduces the same semantics with three real threads
and bounded queues; timestamps then come from the wall clock.
"""

from __future__ import annotations

import threading
import time
from dataclasses import dataclass, replace
from queue import Empty, Full, Queue

import numpy as np

from . import envsim, saliency
from .core import Trajectory, cumulative_states, make_rng, STREAM_INDICATOR
from .envsim import EnvHandle
from .velocitynet import Policy

STAGE_OBSERVE = "observe"
STAGE_PREDICT = "predict"
STAGE_GENERATE = "generate"
STAGE_EXECUTE = "execute"

_STAGE_PRIORITY = {STAGE_OBSERVE: 0, STAGE_PREDICT: 1, STAGE_GENERATE: 2, STAGE_EXECUTE: 3}

MODE_STREAMING = "streaming"
MODE_SYNC_CHUNK = "sync_chunk"


@dataclass(frozen=True)
class StageLatency:
    """Stage durations in milliseconds.

    t_obs: one observation (capture plus encoding).
    t_gen: generating one action.
    t_exec: executing one action; also the executor's tick period.
    t_pred: one saliency-predictor invocation (charged per decision point).
    """

    t_obs: float
    t_gen: float
    t_exec: float
    t_pred: float = 10.0

    def __post_init__(self):
        for name in ("t_obs", "t_gen", "t_exec", "t_pred"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")


ZERO_LATENCY = StageLatency(0.0, 0.0, 0.0, 0.0)
# desk-scale reference profile used throughout the benchmarks
REFERENCE_PROFILE = StageLatency(t_obs=58.0, t_gen=18.0, t_exec=27.0, t_pred=10.0)


@dataclass(frozen=True)
class SchedulerConfig:
    """Scheduling mode plus horizon, replanning, and early-observation knobs."""

    mode: str = MODE_STREAMING
    h: int = 10
    n_replan: int | None = None
    eo: saliency.Indicator | None = None
    n_eo: int = 2
    seed: int = 0

    def __post_init__(self):
        if self.mode not in (MODE_STREAMING, MODE_SYNC_CHUNK):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.h < 1:
            raise ValueError("h must be at least 1")
        if self.mode == MODE_SYNC_CHUNK:
            n = self.h if self.n_replan is None else self.n_replan
            if not 1 <= n <= self.h:
                raise ValueError("n_replan must be in [1, h]")
            if self.eo is not None:
                raise ValueError("early observation applies to streaming mode only")
        if self.eo is not None and not 1 <= self.n_eo < self.h:
            raise ValueError("n_eo must satisfy 1 <= n_eo < h")

    @property
    def replan(self) -> int:
        return self.h if self.n_replan is None else self.n_replan


@dataclass(frozen=True)
class TimelineEvent:
    stage: str
    action_index: int
    horizon_index: int
    start: float
    end: float


def event_sort_key(ev: TimelineEvent):
    return (ev.start, _STAGE_PRIORITY[ev.stage], ev.action_index, ev.end)


@dataclass
class EpisodeResult:
    success: bool
    events: list[TimelineEvent]
    actions_raw: np.ndarray
    actions_norm: np.ndarray
    final_alpha: np.ndarray
    final_state: envsim.EnvState
    n_horizons: int
    eo_fired: int
    steps: int
    trajectory: Trajectory | None = None
    eo_decisions: int = 0


def _decide_eo(scheduler: SchedulerConfig, predictor, obs, remaining_raw: np.ndarray,
               rng: np.random.Generator) -> tuple[bool, float | None]:
    """Evaluate the early-observation indicator; returns (fired, score or None)."""
    ind = scheduler.eo
    if ind.mode == saliency.EO_NAIVE:
        return True, None
    if ind.mode == saliency.EO_RANDOM:
        return bool(rng.random() < ind.p), None
    if ind.mode == saliency.EO_ACTION_NORM:
        score = saliency.action_norm_score(remaining_raw)
        return bool(score <= ind.eta), score
    if ind.mode == saliency.EO_ADAPTIVE:
        if predictor is None:
            raise ValueError("adaptive early observation requires a predictor")
        score = saliency.saliency_score(predictor, obs, remaining_raw)
        return bool(score <= ind.eta), score
    raise ValueError(f"unknown indicator mode {ind.mode!r}")


def _finish(success, events, raw, norm, alpha0_norm, state, horizons, eo_fired, steps, traj_parts,
            eo_decisions=0):
    events = sorted(events, key=event_sort_key)
    raw_arr = np.asarray(raw).reshape(len(raw), -1)
    norm_arr = np.asarray(norm).reshape(len(norm), -1)
    # the executed-action ledger: alpha0 plus actions summed in execution order
    alpha = alpha0_norm.copy()
    for a in norm_arr:
        alpha = alpha + a
    trajectory = None
    if traj_parts is not None:
        observations, alpha0_raw = traj_parts
        trajectory = Trajectory(
            observations=observations,
            actions=raw_arr,
            action_states=cumulative_states(raw_arr, alpha0_raw),
        )
    return EpisodeResult(
        success=success, events=events, actions_raw=raw_arr, actions_norm=norm_arr,
        final_alpha=alpha, final_state=state, n_horizons=horizons, eo_fired=eo_fired,
        steps=steps, trajectory=trajectory, eo_decisions=eo_decisions,
    )


def _simulated_streaming(policy: Policy, predictor, env: EnvHandle, stage: StageLatency,
                         scheduler: SchedulerConfig, record_trajectory: bool) -> EpisodeResult:
    h = scheduler.h
    kind = env.kind
    state = env.init_state
    ind_rng = make_rng(scheduler.seed, STREAM_INDICATOR, getattr(env, "episode_id", 0))

    alpha0_norm = policy.initial_alpha(state.position)
    alpha_exec = alpha0_norm.copy()
    events: list[TimelineEvent] = []
    executed_raw: list[np.ndarray] = []
    executed_norm: list[np.ndarray] = []
    record_obs = [] if record_trajectory else None
    alpha0_raw = envsim.alpha0_for(kind, state)

    obs_start = 0.0
    snapshot = state          # env state visible to the pending observation
    base = 0                  # global index of the horizon's first action
    horizon = 0
    gen_lane = 0.0            # generator availability time
    exec_starts: list[float] = []
    prev_exec_end: float | None = None
    steps = 0
    succeeded = False
    ended = False
    eo_fired_count = 0
    eo_decision_count = 0

    while not ended:
        obs = envsim.observe(snapshot, capture_time=obs_start)
        obs_end = obs_start + stage.t_obs
        events.append(TimelineEvent(STAGE_OBSERVE, base, horizon, obs_start, obs_end))

        # generate all h actions of the horizon on the serial generator lane;
        # the queue-capacity constraint keeps the lane from running more than
        # h actions ahead of execution
        gen_end = np.empty(h)
        acts_norm = np.empty((h, alpha_exec.shape[0]))
        acts_raw = np.empty_like(acts_norm)
        gen_alpha = alpha_exec.copy()
        lane = max(gen_lane, obs_end)
        for i in range(h):
            g = base + i
            start = lane
            if g >= h:
                start = max(start, exec_starts[g - h])
            end = start + stage.t_gen
            events.append(TimelineEvent(STAGE_GENERATE, g, horizon, start, end))
            a_norm, a_raw = policy.action(gen_alpha, i, obs.features)
            gen_alpha = gen_alpha + a_norm
            acts_norm[i] = a_norm
            acts_raw[i] = a_raw
            gen_end[i] = end
            lane = end
        gen_lane = lane

        decision_idx = h - scheduler.n_eo if scheduler.eo is not None else None
        fired = False
        next_obs_start: float | None = None
        next_snapshot = None

        for i in range(h):
            g = base + i
            start = gen_end[i] if prev_exec_end is None else max(gen_end[i], prev_exec_end)
            end = start + stage.t_exec

            if decision_idx is not None and i == decision_idx \
                    and (horizon + 1) * h < env.step_cap:
                # n_eo executions remain; score against the current frame and
                # the still-pending actions, launching the next observation
                # right here when the indicator fires. Skipped when the step
                # cap makes this horizon the last: there is no boundary for
                # an early observation to hide.
                remaining = acts_raw[i:]
                dec_obs = envsim.observe(state, capture_time=start)
                fired, _score = _decide_eo(scheduler, predictor, dec_obs, remaining, ind_rng)
                eo_decision_count += 1
                launch = start
                if scheduler.eo.mode == saliency.EO_ADAPTIVE:
                    p_start = max(start - stage.t_pred, gen_end[h - 1])
                    p_end = p_start + stage.t_pred
                    events.append(TimelineEvent(STAGE_PREDICT, base + h, horizon, p_start, p_end))
                    launch = max(launch, p_end)
                if fired:
                    eo_fired_count += 1
                    next_obs_start = launch
                    next_snapshot = state

            events.append(TimelineEvent(STAGE_EXECUTE, g, horizon, start, end))
            exec_starts.append(start)
            prev_exec_end = end
            if record_obs is not None:
                record_obs.append(envsim.observe(state, capture_time=float(state.step_count)))
            state = envsim.step(kind, state, acts_raw[i])
            executed_raw.append(acts_raw[i])
            executed_norm.append(acts_norm[i])
            alpha_exec = alpha_exec + acts_norm[i]
            steps += 1
            if envsim.success(state):
                succeeded = True
                ended = True
                break
            if steps >= env.step_cap:
                ended = True
                break

        horizon += 1
        base += h
        if not ended:
            if not fired:
                next_obs_start = prev_exec_end
                next_snapshot = state
            obs_start = next_obs_start
            snapshot = next_snapshot

    traj_parts = (record_obs, alpha0_raw) if record_trajectory else None
    return _finish(succeeded, events, executed_raw, executed_norm, alpha0_norm, state,
                   horizon, eo_fired_count, steps, traj_parts, eo_decision_count)


def _simulated_sync(policy: Policy, predictor, env: EnvHandle, stage: StageLatency,
                    scheduler: SchedulerConfig, record_trajectory: bool) -> EpisodeResult:
    h, n_rep = scheduler.h, scheduler.replan
    kind = env.kind
    state = env.init_state

    alpha0_norm = policy.initial_alpha(state.position)
    alpha_exec = alpha0_norm.copy()
    events: list[TimelineEvent] = []
    executed_raw: list[np.ndarray] = []
    executed_norm: list[np.ndarray] = []
    record_obs = [] if record_trajectory else None
    alpha0_raw = envsim.alpha0_for(kind, state)

    t = 0.0
    base = 0
    horizon = 0
    steps = 0
    succeeded = False
    ended = False

    while not ended:
        obs = envsim.observe(state, capture_time=t)
        obs_end = t + stage.t_obs
        events.append(TimelineEvent(STAGE_OBSERVE, base, horizon, t, obs_end))

        # full chunk generated before anything executes; the tail beyond
        # n_replan is planned but replaced by the next chunk (its generate
        # events share the indices the next chunk will execute)
        gen_alpha = alpha_exec.copy()
        acts_norm = np.empty((h, alpha_exec.shape[0]))
        acts_raw = np.empty_like(acts_norm)
        lane = obs_end
        for i in range(h):
            end = lane + stage.t_gen
            events.append(TimelineEvent(STAGE_GENERATE, base + i, horizon, lane, end))
            a_norm, a_raw = policy.action(gen_alpha, i, obs.features)
            gen_alpha = gen_alpha + a_norm
            acts_norm[i] = a_norm
            acts_raw[i] = a_raw
            lane = end

        exec_start = lane
        for i in range(n_rep):
            end = exec_start + stage.t_exec
            events.append(TimelineEvent(STAGE_EXECUTE, base + i, horizon, exec_start, end))
            if record_obs is not None:
                record_obs.append(envsim.observe(state, capture_time=float(state.step_count)))
            state = envsim.step(kind, state, acts_raw[i])
            executed_raw.append(acts_raw[i])
            executed_norm.append(acts_norm[i])
            alpha_exec = alpha_exec + acts_norm[i]
            exec_start = end
            steps += 1
            if envsim.success(state):
                succeeded = True
                ended = True
                break
            if steps >= env.step_cap:
                ended = True
                break

        t = exec_start
        horizon += 1
        base += n_rep

    traj_parts = (record_obs, alpha0_raw) if record_trajectory else None
    return _finish(succeeded, events, executed_raw, executed_norm, alpha0_norm, state,
                   horizon, 0, steps, traj_parts)


# ---------------------------------------------------------------------------
# wall-clock runner: three threads (observer, generator, executor) joined by
# bounded queues. The observation slot holds at most one latent; the action
# buffer holds at most h actions. The executor owns the environment and the
# early-observation decision; the generator owns the action-state ledger.
# ---------------------------------------------------------------------------

_POLL = 0.02


class _WallShared:
    def __init__(self, h: int):
        self.obs_requests: Queue = Queue()
        self.obs_slot: Queue = Queue(maxsize=1)
        self.action_queue: Queue = Queue(maxsize=h)
        self.stop = threading.Event()
        self.log_lock = threading.Lock()
        self.events: list[TimelineEvent] = []
        self.horizon_actions: dict[int, list[np.ndarray]] = {}
        self.error: BaseException | None = None

    def emit(self, ev: TimelineEvent) -> None:
        with self.log_lock:
            self.events.append(ev)


def _wall_observer(shared: _WallShared, stage: StageLatency, t0: float):
    try:
        while not shared.stop.is_set():
            try:
                req = shared.obs_requests.get(timeout=_POLL)
            except Empty:
                continue
            if req is None:
                return
            snapshot, horizon, first_action = req
            start = (time.monotonic() - t0) * 1e3
            time.sleep(stage.t_obs / 1e3)
            end = (time.monotonic() - t0) * 1e3
            obs = envsim.observe(snapshot, capture_time=start)
            shared.emit(TimelineEvent(STAGE_OBSERVE, first_action, horizon, start, end))
            while not shared.stop.is_set():
                try:
                    shared.obs_slot.put((obs, horizon), timeout=_POLL)
                    break
                except Full:
                    continue
    except BaseException as exc:  # surfaced by the main thread
        shared.error = exc
        shared.stop.set()


def _wall_generator(shared: _WallShared, policy: Policy, stage: StageLatency,
                    scheduler: SchedulerConfig, alpha0_norm: np.ndarray, t0: float):
    try:
        h = scheduler.h
        alpha = alpha0_norm.copy()
        base = 0
        while not shared.stop.is_set():
            try:
                obs, horizon = shared.obs_slot.get(timeout=_POLL)
            except Empty:
                continue
            shared.horizon_actions[horizon] = []
            for i in range(h):
                if shared.stop.is_set():
                    return
                start = (time.monotonic() - t0) * 1e3
                time.sleep(stage.t_gen / 1e3)
                a_norm, a_raw = policy.action(alpha, i, obs.features)
                alpha = alpha + a_norm
                end = (time.monotonic() - t0) * 1e3
                shared.emit(TimelineEvent(STAGE_GENERATE, base + i, horizon, start, end))
                shared.horizon_actions[horizon].append(a_raw)
                item = (base + i, i, horizon, a_norm, a_raw)
                while not shared.stop.is_set():
                    try:
                        shared.action_queue.put(item, timeout=_POLL)
                        break
                    except Full:
                        continue
            base += h
    except BaseException as exc:
        shared.error = exc
        shared.stop.set()


def _wall_executor(shared: _WallShared, policy: Policy, predictor, env: EnvHandle,
                   stage: StageLatency, scheduler: SchedulerConfig, t0: float,
                   record_trajectory: bool, out: dict):
    try:
        h = scheduler.h
        kind = env.kind
        state = env.init_state
        ind_rng = make_rng(scheduler.seed, STREAM_INDICATOR, getattr(env, "episode_id", 0))
        executed_raw, executed_norm, record_obs = [], [], ([] if record_trajectory else None)
        steps = 0
        succeeded = False
        horizons_seen = 0
        eo_count = 0
        eo_decision_count = 0
        prev_start: float | None = None
        fired_for_horizon = -1

        # observation for horizon 0
        shared.obs_requests.put((state, 0, 0))
        decision_idx = h - scheduler.n_eo if scheduler.eo is not None else None

        while not shared.stop.is_set():
            try:
                g, i, horizon, a_norm, a_raw = shared.action_queue.get(timeout=_POLL)
            except Empty:
                continue
            horizons_seen = max(horizons_seen, horizon + 1)

            if decision_idx is not None and i == decision_idx \
                    and (horizon + 1) * h < env.step_cap:
                known = shared.horizon_actions.get(horizon, [])
                remaining = np.asarray(known[i:]) if len(known) > i else a_raw.reshape(1, -1)
                dec_time = (time.monotonic() - t0) * 1e3
                dec_obs = envsim.observe(state, capture_time=dec_time)
                fired, _ = _decide_eo(scheduler, predictor, dec_obs, remaining, ind_rng)
                eo_decision_count += 1
                if scheduler.eo.mode == saliency.EO_ADAPTIVE:
                    p_end = (time.monotonic() - t0) * 1e3
                    shared.emit(TimelineEvent(STAGE_PREDICT, (horizon + 1) * h, horizon, dec_time, p_end))
                if fired:
                    eo_count += 1
                    fired_for_horizon = horizon
                    shared.obs_requests.put((state, horizon + 1, (horizon + 1) * h))

            # tick pacing: period t_exec, or immediately when supply lags
            now = (time.monotonic() - t0) * 1e3
            start = now if prev_start is None else max(now, prev_start + stage.t_exec)
            if start > now:
                time.sleep((start - now) / 1e3)
            start = (time.monotonic() - t0) * 1e3
            time.sleep(stage.t_exec / 1e3)
            end = (time.monotonic() - t0) * 1e3
            prev_start = start
            shared.emit(TimelineEvent(STAGE_EXECUTE, g, horizon, start, end))

            if record_obs is not None:
                record_obs.append(envsim.observe(state, capture_time=float(state.step_count)))
            state = envsim.step(kind, state, a_raw)
            executed_raw.append(a_raw)
            executed_norm.append(a_norm)
            steps += 1
            if envsim.success(state):
                succeeded = True
                break
            if steps >= env.step_cap:
                break
            if i == h - 1 and fired_for_horizon != horizon:
                shared.obs_requests.put((state, horizon + 1, (horizon + 1) * h))

        out["state"] = state
        out["raw"] = executed_raw
        out["norm"] = executed_norm
        out["steps"] = steps
        out["success"] = succeeded
        out["horizons"] = horizons_seen
        out["eo"] = eo_count
        out["eo_decisions"] = eo_decision_count
        out["record_obs"] = record_obs
    except BaseException as exc:
        shared.error = exc
    finally:
        shared.stop.set()


def _wall_streaming(policy: Policy, predictor, env: EnvHandle, stage: StageLatency,
                    scheduler: SchedulerConfig, record_trajectory: bool) -> EpisodeResult:
    shared = _WallShared(scheduler.h)
    t0 = time.monotonic()
    alpha0_norm = policy.initial_alpha(env.init_state.position)
    out: dict = {}
    threads = [
        threading.Thread(target=_wall_observer, args=(shared, stage, t0), daemon=True),
        threading.Thread(target=_wall_generator, args=(shared, policy, stage, scheduler, alpha0_norm, t0), daemon=True),
        threading.Thread(target=_wall_executor, args=(shared, policy, predictor, env, stage, scheduler, t0, record_trajectory, out), daemon=True),
    ]
    for th in threads:
        th.start()
    threads[2].join()
    shared.stop.set()
    shared.obs_requests.put(None)
    for th in threads[:2]:
        th.join(timeout=5.0)
    if shared.error is not None:
        raise shared.error

    traj_parts = None
    if record_trajectory:
        traj_parts = (out["record_obs"], envsim.alpha0_for(env.kind, env.init_state))
    return _finish(out["success"], shared.events, out["raw"], out["norm"], alpha0_norm,
                   out["state"], out["horizons"], out["eo"], out["steps"], traj_parts,
                   out.get("eo_decisions", 0))


def _wall_sync(policy: Policy, predictor, env: EnvHandle, stage: StageLatency,
               scheduler: SchedulerConfig, record_trajectory: bool) -> EpisodeResult:
    """Sequential wall-clock sync_chunk: nothing overlaps, so no threads needed."""
    h, n_rep = scheduler.h, scheduler.replan
    kind = env.kind
    state = env.init_state
    alpha0_norm = policy.initial_alpha(state.position)
    alpha = alpha0_norm.copy()
    events: list[TimelineEvent] = []
    executed_raw, executed_norm = [], []
    record_obs = [] if record_trajectory else None
    t0 = time.monotonic()
    now = lambda: (time.monotonic() - t0) * 1e3

    base = 0
    horizon = 0
    steps = 0
    succeeded = False
    ended = False
    while not ended:
        start = now()
        obs = envsim.observe(state, capture_time=start)
        time.sleep(stage.t_obs / 1e3)
        events.append(TimelineEvent(STAGE_OBSERVE, base, horizon, start, now()))
        gen_alpha = alpha.copy()
        acts = []
        for i in range(h):
            g_start = now()
            time.sleep(stage.t_gen / 1e3)
            a_norm, a_raw = policy.action(gen_alpha, i, obs.features)
            gen_alpha = gen_alpha + a_norm
            acts.append((a_norm, a_raw))
            events.append(TimelineEvent(STAGE_GENERATE, base + i, horizon, g_start, now()))
        for i in range(n_rep):
            a_norm, a_raw = acts[i]
            e_start = now()
            time.sleep(stage.t_exec / 1e3)
            events.append(TimelineEvent(STAGE_EXECUTE, base + i, horizon, e_start, now()))
            if record_obs is not None:
                record_obs.append(envsim.observe(state, capture_time=float(state.step_count)))
            state = envsim.step(kind, state, a_raw)
            executed_raw.append(a_raw)
            executed_norm.append(a_norm)
            alpha = alpha + a_norm
            steps += 1
            if envsim.success(state):
                succeeded = True
                ended = True
                break
            if steps >= env.step_cap:
                ended = True
                break
        horizon += 1
        base += n_rep

    traj_parts = (record_obs, envsim.alpha0_for(kind, env.init_state)) if record_trajectory else None
    return _finish(succeeded, events, executed_raw, executed_norm, alpha0_norm, state,
                   horizon, 0, steps, traj_parts)


def run_episode(policy: Policy, predictor, env: EnvHandle, stage: StageLatency,
                scheduler: SchedulerConfig, clock: str = "simulated",
                record_trajectory: bool = False) -> EpisodeResult:
    """Run one episode under the given scheduling mode and clock.

    clock "simulated" uses the deterministic discrete-event engine (identical
    seeds give bitwise-identical logs); clock "wall" runs the real threaded
    pipeline. The executed action sequence depends only on observation
    snapshots and the indicator stream, so the two clocks execute the same
    actions for the same configuration.
    """
    if clock == "simulated":
        if scheduler.mode == MODE_STREAMING:
            return _simulated_streaming(policy, predictor, env, stage, scheduler, record_trajectory)
        return _simulated_sync(policy, predictor, env, stage, scheduler, record_trajectory)
    if clock == "wall":
        if scheduler.mode == MODE_STREAMING:
            return _wall_streaming(policy, predictor, env, stage, scheduler, record_trajectory)
        return _wall_sync(policy, predictor, env, stage, scheduler, record_trajectory)
    raise ValueError(f"unknown clock {clock!r}")
