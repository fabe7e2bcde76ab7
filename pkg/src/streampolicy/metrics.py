"""Latency accounting over execution timelines.

Two quantities characterize a schedule:

* t_action: average wall time per executed action, measured from the first
  observation start to the last execution end.
* t_halt: average pause of the actuator at horizon boundaries, measured as
  the gap between the last execution of one horizon and the first of the
  next.

Overlap terms explain where streaming wins:

* o_ge: time generation runs concurrently with execution.
* o_oe: time observation runs concurrently with execution (early
  observation hides observation latency behind the remaining actions).

All times are milliseconds. The closed forms assume the generator keeps up
with the executor (t_gen <= t_exec), which holds for the reference profile.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass

import numpy as np

from .streamexec import (
    MODE_STREAMING,
    MODE_SYNC_CHUNK,
    STAGE_EXECUTE,
    STAGE_GENERATE,
    STAGE_OBSERVE,
    STAGE_PREDICT,
    StageLatency,
    TimelineEvent,
    event_sort_key,
)

TRACE_CSV_HEADER = ["stage", "action_index", "horizon_index", "start_ms", "end_ms"]

_CHROME_TID = {STAGE_OBSERVE: 1, STAGE_PREDICT: 2, STAGE_GENERATE: 3, STAGE_EXECUTE: 4}


@dataclass(frozen=True)
class MetricsReport:
    num_actions: int
    n_horizons: int
    episode_duration: float
    t_action: float
    t_action_steady: float
    t_halt: float
    boundary_gaps: tuple[float, ...]
    o_ge_total: float
    o_oe_total: float
    o_ge_per_horizon: float
    o_oe_per_horizon: float
    success: bool | None = None


def _overlap_total(a: list[TimelineEvent], b: list[TimelineEvent]) -> float:
    """Total pairwise intersection time between two sets of intervals."""
    ia = sorted((e.start, e.end) for e in a)
    ib = sorted((e.start, e.end) for e in b)
    total = 0.0
    j = 0
    for s, e in ia:
        while j < len(ib) and ib[j][1] <= s:
            j += 1
        k = j
        while k < len(ib) and ib[k][0] < e:
            # clamp: b intervals may nest, so one past j can still end before s
            total += max(0.0, min(e, ib[k][1]) - max(s, ib[k][0]))
            k += 1
    return total


def measure(events: list[TimelineEvent], success: bool | None = None) -> MetricsReport:
    """Summarize one episode's event log.

    Per-horizon overlap means use horizons >= 1 where available: the first
    horizon's observation has no execution to overlap, so including it would
    understate the steady state the closed forms describe.
    """
    if not events:
        raise ValueError("empty event log")
    events = sorted(events, key=event_sort_key)
    execs = [e for e in events if e.stage == STAGE_EXECUTE]
    if not execs:
        raise ValueError("no execute events in log")
    gens = [e for e in events if e.stage == STAGE_GENERATE]
    obs = [e for e in events if e.stage == STAGE_OBSERVE]

    start = min(e.start for e in events)
    end = max(e.end for e in execs)
    duration = end - start
    n_actions = len(execs)
    horizons = sorted({e.horizon_index for e in execs})
    n_horizons = len(horizons)

    gaps = []
    for prev, nxt in zip(execs, execs[1:]):
        if nxt.horizon_index != prev.horizon_index:
            gaps.append(max(0.0, nxt.start - prev.end))
    t_halt = float(np.mean(gaps)) if gaps else 0.0

    # steady-state per-action time: drop the warmup horizon
    first_h = horizons[0]
    tail = [e for e in execs if e.horizon_index != first_h]
    if tail:
        head_end = max(e.end for e in execs if e.horizon_index == first_h)
        t_action_steady = (end - head_end) / len(tail)
    else:
        t_action_steady = duration / n_actions

    o_ge_total = _overlap_total(gens, execs)
    o_oe_total = _overlap_total(obs, execs)
    later = [h for h in horizons if h != first_h]
    if later:
        ge_tail = _overlap_total([e for e in gens if e.horizon_index != first_h], execs)
        oe_tail = _overlap_total([e for e in obs if e.horizon_index != first_h], execs)
        o_ge_ph = ge_tail / len(later)
        o_oe_ph = oe_tail / len(later)
    else:
        o_ge_ph = o_ge_total
        o_oe_ph = o_oe_total

    return MetricsReport(
        num_actions=n_actions,
        n_horizons=n_horizons,
        episode_duration=duration,
        t_action=duration / n_actions,
        t_action_steady=t_action_steady,
        t_halt=t_halt,
        boundary_gaps=tuple(gaps),
        o_ge_total=o_ge_total,
        o_oe_total=o_oe_total,
        o_ge_per_horizon=o_ge_ph,
        o_oe_per_horizon=o_oe_ph,
        success=success,
    )


def closed_form(stage: StageLatency, h: int, mode: str, n_replan: int | None = None,
                n_eo_avg: float = 0.0) -> dict[str, float]:
    """Steady-state latency algebra for a full (non-truncated) horizon cycle.

    For sync_chunk every cycle serializes one observation, h generations and
    n_replan executions. For streaming the executor runs back to back except
    for the boundary halt, which early observation shortens by the average
    observation time hidden behind execution, n_eo_avg * t_exec.
    """
    if mode == MODE_SYNC_CHUNK:
        n = h if n_replan is None else n_replan
        halt = stage.t_obs + h * stage.t_gen
        return {
            "t_action": (halt + n * stage.t_exec) / n,
            "t_halt": halt,
            "o_ge": 0.0,
            "o_oe": 0.0,
        }
    if mode == MODE_STREAMING:
        o_ge = (h - 1) * min(stage.t_gen, stage.t_exec)
        o_oe = min(n_eo_avg * stage.t_exec, stage.t_obs + stage.t_gen)
        halt = max(0.0, stage.t_obs + stage.t_gen - o_oe)
        return {
            "t_action": (h * stage.t_exec + halt) / h,
            "t_halt": halt,
            "o_ge": o_ge,
            "o_oe": o_oe,
        }
    raise ValueError(f"unknown mode {mode!r}")


def write_trace_csv(path, events: list[TimelineEvent]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TRACE_CSV_HEADER)
        for e in sorted(events, key=event_sort_key):
            w.writerow([e.stage, e.action_index, e.horizon_index, repr(e.start), repr(e.end)])


def read_trace_csv(path) -> list[TimelineEvent]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != TRACE_CSV_HEADER:
        raise ValueError("not a trace csv (bad header)")
    return [
        TimelineEvent(stage=r[0], action_index=int(r[1]), horizon_index=int(r[2]),
                      start=float(r[3]), end=float(r[4]))
        for r in rows[1:]
    ]


def write_chrome_trace(path, events: list[TimelineEvent]) -> None:
    """Chrome about://tracing JSON: complete events, microsecond timestamps."""
    entries = []
    for e in sorted(events, key=event_sort_key):
        ts = round(e.start * 1e3)
        dur = round((e.end - e.start) * 1e3)
        entries.append({
            "name": f"{e.stage}[{e.action_index}]",
            "cat": e.stage,
            "ph": "X",
            "ts": ts,
            "dur": dur,
            "pid": 1,
            "tid": _CHROME_TID[e.stage],
            "args": {"action_index": e.action_index, "horizon_index": e.horizon_index},
        })
    doc = {
        "traceEvents": entries,
        "displayTimeUnit": "ms",
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1)


def _ratio(base: float, val: float) -> str:
    # zero-latency profiles make both sides 0; call equals equal rather
    # than printing an infinite speedup
    if val > 0:
        return f"{base / val:.2f}"
    return "1.00" if base == val else "inf"


def aggregate(results: dict[str, list[MetricsReport]], baseline: str) -> tuple[str, str]:
    """Cross-configuration summary. Returns (csv_text, aligned_table_text).

    Speedup columns divide the baseline's mean t_action / t_halt by each
    configuration's, so larger is better and the baseline row reads 1.00.
    """
    if baseline not in results:
        raise ValueError(f"baseline {baseline!r} missing from results")

    def mean(label, attr):
        return float(np.mean([getattr(r, attr) for r in results[label]]))

    base_action = mean(baseline, "t_action")
    base_halt = mean(baseline, "t_halt")
    cols = ["config", "episodes", "success_rate", "t_action_ms", "t_halt_ms",
            "o_ge_ms", "o_oe_ms", "speedup_action", "speedup_halt"]
    rows = []
    for label, reps in results.items():
        succ = [r.success for r in reps if r.success is not None]
        t_a = mean(label, "t_action")
        t_h = mean(label, "t_halt")
        rows.append([
            label,
            len(reps),
            f"{np.mean(succ):.3f}" if succ else "n/a",
            f"{t_a:.3f}",
            f"{t_h:.3f}",
            f"{mean(label, 'o_ge_per_horizon'):.3f}",
            f"{mean(label, 'o_oe_per_horizon'):.3f}",
            _ratio(base_action, t_a),
            _ratio(base_halt, t_h),
        ])

    buf = io.StringIO()
    w = csv.writer(buf)
    w.writerow(cols)
    for r in rows:
        w.writerow(r)
    csv_text = buf.getvalue()

    widths = [max(len(str(c)), *(len(str(r[i])) for r in rows)) for i, c in enumerate(cols)]
    lines = ["  ".join(str(c).ljust(widths[i]) for i, c in enumerate(cols))]
    lines.append("  ".join("-" * widths[i] for i in range(len(cols))))
    for r in rows:
        lines.append("  ".join(str(r[i]).ljust(widths[i]) for i in range(len(cols))))
    return csv_text, "\n".join(lines) + "\n"
