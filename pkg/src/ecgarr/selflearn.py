"""Unsupervised rhythm monitor driven by R-R intervals.

The monitor learns a patient's nominal beat spacing from four stable
consecutive intervals, then flags beats whose spacing deviates from the
learned value by more than a tolerance, and raises a timeout when no
beat arrives inside the tolerated window at all.  Judged-normal beats
fold into the learned value by simple averaging; anomalous ones never
touch it.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace

import numpy as np

from .dsp import PeakTrain

__all__ = [
    "AnomalyEvent",
    "NoStableRhythmError",
    "SelfLearnerState",
    "check_beat",
    "epsilon_for",
    "find_stable_window",
    "initialize",
    "load_anomaly_log",
    "monitor",
    "monitoring_state",
    "run_self_learner",
    "save_anomaly_log",
    "timeout_samples",
    "update",
]

EVENT_KINDS = ("interval_deviation", "missing_beat")


class NoStableRhythmError(Exception):
    """No run of four consecutive intervals settled within tolerance."""


@dataclass(frozen=True)
class AnomalyEvent:
    sample_index: int
    kind: str
    observed: float   # the offending interval, or the elapsed count for timeouts
    st_rr: float      # learned characteristic at decision time

    def __post_init__(self):
        if self.kind not in EVENT_KINDS:
            raise ValueError(f"unknown event kind {self.kind!r}")
        if self.sample_index < 0:
            raise ValueError("event sample_index must be nonnegative")
        if self.observed <= 0 or self.st_rr <= 0:
            raise ValueError("intervals must be positive")


@dataclass(frozen=True)
class SelfLearnerState:
    st_rr: float | None = None
    tolerance_fraction: float = 0.15
    phase: str = "learning"
    learn_buffer: tuple = ()
    last_peak_index: int | None = None

    def __post_init__(self):
        if not 0 < self.tolerance_fraction < 1:
            raise ValueError("tolerance_fraction must lie in (0, 1)")
        if self.phase not in ("learning", "monitoring"):
            raise ValueError(f"unknown phase {self.phase!r}")
        if len(self.learn_buffer) > 4:
            raise ValueError("learn_buffer holds at most 4 intervals")
        if self.phase == "monitoring":
            if self.st_rr is None or self.st_rr <= 0:
                raise ValueError("monitoring needs a positive learned interval")
            if self.last_peak_index is None:
                raise ValueError("monitoring needs an anchor peak index")


def monitoring_state(st_rr: float, anchor_index: int,
                     tolerance_fraction: float = 0.15) -> SelfLearnerState:
    return SelfLearnerState(
        st_rr=float(st_rr),
        tolerance_fraction=tolerance_fraction,
        phase="monitoring",
        last_peak_index=int(anchor_index),
    )


def epsilon_for(st_rr: float, tolerance_fraction: float = 0.15) -> float:
    """Absolute deviation tolerance for a learned interval."""
    return tolerance_fraction * st_rr


def timeout_samples(st_rr: float, tolerance_fraction: float = 0.15) -> int:
    """How long to wait for the next peak before declaring one missing."""
    return math.ceil(st_rr * (1.0 + tolerance_fraction))


def check_beat(st_rr: float, t_rr: float, epsilon: float) -> int:
    """1 when the interval deviates from the learned one by more than
    epsilon, else 0.  A deviation of exactly epsilon still passes."""
    return 1 if abs(st_rr - t_rr) > epsilon else 0


def update(st_rr: float, t_rr: float) -> float:
    """Fold a judged-normal interval into the learned value."""
    return (st_rr + t_rr) / 2.0


def find_stable_window(intervals, tolerance_fraction: float = 0.15):
    """First run of 4 consecutive intervals that agree with their mean.

    Agreement means every interval is within tolerance_fraction of the
    window mean (inclusive).  Returns (start offset, mean).  The window
    slides one interval at a time past unstable stretches.
    """
    vals = [float(t) for t in intervals]
    if any(t <= 0 for t in vals):
        raise ValueError("intervals must be positive")
    for start in range(len(vals) - 3):
        window = vals[start:start + 4]
        mean = sum(window) / 4.0
        if all(abs(t - mean) <= tolerance_fraction * mean for t in window):
            return start, mean
    raise NoStableRhythmError(
        f"no stable rhythm in {len(vals)} intervals at tolerance {tolerance_fraction}"
    )


def initialize(intervals, tolerance_fraction: float = 0.15) -> float:
    """Learned interval from the first stable 4-interval window."""
    return find_stable_window(intervals, tolerance_fraction)[1]


def _peak_indices(peaks):
    if isinstance(peaks, PeakTrain):
        return peaks.r_indices
    return np.asarray(list(peaks), dtype=np.int64)


def monitor(peaks, state: SelfLearnerState):
    """Judge each arriving peak against the learned interval.

    Returns (events, updated state).  A peak later than the timeout
    window yields one missing-beat event at the deadline sample; the
    late peak then becomes the new anchor and its bridging interval is
    not judged.  A peak inside the window is checked: deviants are
    flagged and do not update the learned value, normals do.
    """
    if state.phase != "monitoring":
        raise ValueError("monitor needs a state in the monitoring phase")
    st = state.st_rr
    tol = state.tolerance_fraction
    last = state.last_peak_index
    events = []
    for p in _peak_indices(peaks):
        p = int(p)
        if p <= last:
            raise ValueError(f"peak index {p} does not advance past {last}")
        wait = timeout_samples(st, tol)
        if p - last > wait:
            events.append(AnomalyEvent(last + wait, "missing_beat", float(wait), st))
            last = p
            continue
        t_rr = p - last
        if check_beat(st, t_rr, epsilon_for(st, tol)):
            events.append(AnomalyEvent(p, "interval_deviation", float(t_rr), st))
        else:
            st = update(st, t_rr)
        last = p
    return events, replace(state, st_rr=st, last_peak_index=last)


def run_self_learner(peaks, *, tolerance_fraction: float = 0.15):
    """Learn from the peak train's first stable stretch, then monitor
    the rest.  Returns (events, final state).  Beats before and inside
    the learning window are never judged."""
    indices = _peak_indices(peaks)
    if indices.size < 5:
        raise NoStableRhythmError(
            f"need at least 5 peaks to learn a rhythm, got {indices.size}"
        )
    intervals = np.diff(indices)
    start, st = find_stable_window(intervals, tolerance_fraction)
    anchor = int(indices[start + 4])
    state = SelfLearnerState(
        st_rr=st,
        tolerance_fraction=tolerance_fraction,
        phase="monitoring",
        learn_buffer=tuple(float(t) for t in intervals[start:start + 4]),
        last_peak_index=anchor,
    )
    return monitor(indices[start + 5:], state)


# ---------------------------------------------------------------------------
# anomaly log files

_LOG_HEADER = ["record", "sample_index", "kind", "t_rr", "st_rr"]


def save_anomaly_log(path, record_id: str, events) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(_LOG_HEADER)
        for ev in events:
            writer.writerow([record_id, ev.sample_index, ev.kind,
                             format(ev.observed, ".17g"), format(ev.st_rr, ".17g")])


def load_anomaly_log(path):
    """Rows back as (record_id, AnomalyEvent) pairs."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != _LOG_HEADER:
            raise ValueError(f"{path}: unexpected anomaly log header {header}")
        out = []
        for row in reader:
            if len(row) != 5:
                raise ValueError(f"{path}: malformed row {row}")
            record_id, idx, kind, observed, st = row
            out.append((record_id,
                        AnomalyEvent(int(idx), kind, float(observed), float(st))))
    return out
