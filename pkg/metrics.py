"""
Replay Metrics
Classification rates, learning curves and confidence tables from decision logs,
plus thread-safe wall-clock timing of replay stages
"""
from typing import Dict, Any, List, Optional, Sequence, Union
from datetime import datetime, timezone
import json
from dataclasses import dataclass, field
from threading import Lock

import numpy as np
import pandas as pd
from scipy import stats

from umm.errors import MissingLabels
from umm.session_io import atomic_write_text


@dataclass
class MetricsReport:
    """Metrics computed from one or more session decision logs"""
    per_session_accuracy: Dict[str, float]
    pooled_accuracy: float
    pooled_interval: tuple
    n_trials: int
    learning_curve: pd.DataFrame
    confidence_histogram: pd.DataFrame
    confidence_by_trial: pd.DataFrame
    degenerate_sessions: List[str] = field(default_factory=list)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "per_session_accuracy": self.per_session_accuracy,
            "pooled_accuracy": self.pooled_accuracy,
            "pooled_interval_95": list(self.pooled_interval),
            "n_trials": self.n_trials,
            "degenerate_sessions": self.degenerate_sessions,
            "learning_curve": self.learning_curve.to_dict(orient="records"),
            "confidence_histogram": self.confidence_histogram.to_dict(orient="records"),
            "confidence_by_trial": self.confidence_by_trial.to_dict(orient="records"),
        }


def _combine(logs: Union[pd.DataFrame, Sequence[pd.DataFrame]]) -> pd.DataFrame:
    if isinstance(logs, pd.DataFrame):
        return logs
    logs = [log for log in logs if len(log)]
    if not logs:
        return pd.DataFrame()
    return pd.concat(logs, ignore_index=True)


def compute_metrics(logs: Union[pd.DataFrame, Sequence[pd.DataFrame]], bins: int = 20) -> MetricsReport:
    """
    Per-session and pooled accuracy, learning curve (trial index -> fraction of
    sessions correct), confidence histogram split by correctness and mean
    confidence per trial index. Raises MissingLabels if any row lacks a true symbol.
    """
    frame = _combine(logs)
    if frame.empty:
        raise MissingLabels("no decisions to evaluate")
    if "true_symbol" not in frame or frame["true_symbol"].isna().any():
        raise MissingLabels("decision log rows without true symbols")

    correct = (frame["predicted_symbol"].astype(str) == frame["true_symbol"].astype(str))
    frame = frame.assign(correct=correct)

    by_session = frame.groupby("session_id", sort=True)["correct"].mean()
    per_session = {str(k): float(v) for k, v in by_session.items()}

    n = int(len(frame))
    k = int(frame["correct"].sum())
    interval = stats.binomtest(k, n).proportion_ci(confidence_level=0.95)

    curve = (
        frame.groupby("trial_index", sort=True)["correct"]
        .agg(["mean", "size"])
        .rename(columns={"mean": "fraction_correct", "size": "n_sessions"})
        .reset_index()
    )

    confidence = frame["confidence"].astype(float).to_numpy()
    edges = np.histogram_bin_edges(confidence, bins=bins)
    rows = []
    for outcome, mask in (("correct", frame["correct"].to_numpy()), ("incorrect", ~frame["correct"].to_numpy())):
        counts, _ = np.histogram(confidence[mask], bins=edges)
        for left, right, count in zip(edges[:-1], edges[1:], counts):
            rows.append({"outcome": outcome, "bin_left": float(left), "bin_right": float(right), "count": int(count)})
    histogram = pd.DataFrame(rows, columns=["outcome", "bin_left", "bin_right", "count"])

    by_trial = (
        frame.groupby("trial_index", sort=True)
        .agg(mean_confidence=("confidence", "mean"), mean_instant_confidence=("instant_confidence", "mean"))
        .reset_index()
    )

    degenerate = []
    if "degenerate_flag" in frame:
        flagged = frame.groupby("session_id", sort=True)["degenerate_flag"].any()
        degenerate = [str(s) for s, f in flagged.items() if f]

    return MetricsReport(
        per_session_accuracy=per_session,
        pooled_accuracy=k / n,
        pooled_interval=(float(interval.low), float(interval.high)),
        n_trials=n,
        learning_curve=curve,
        confidence_histogram=histogram,
        confidence_by_trial=by_trial,
        degenerate_sessions=degenerate,
    )


def chance_interval(n_trials: int, n_symbols: int, level: float = 0.99) -> tuple:
    """Central binomial interval of the accuracy of uniform random guessing"""
    low, high = stats.binom.interval(level, n_trials, 1.0 / n_symbols)
    return low / n_trials, high / n_trials


REPLAY_STAGES = ("estimate", "score", "update", "trial", "session")


@dataclass
class StageTiming:
    """Wall-clock totals of one replay stage"""
    stage: str
    calls: int = 0
    total_seconds: float = 0.0
    fastest: Optional[float] = None
    slowest: float = 0.0

    def add(self, seconds: float):
        self.calls += 1
        self.total_seconds += seconds
        self.fastest = seconds if self.fastest is None else min(self.fastest, seconds)
        self.slowest = max(self.slowest, seconds)

    def as_dict(self) -> Dict[str, Any]:
        return {
            "calls": self.calls,
            "total_seconds": self.total_seconds,
            "mean_seconds": self.total_seconds / self.calls if self.calls else 0.0,
            "fastest": self.fastest or 0.0,
            "slowest": self.slowest,
        }


class ReplayTimer:
    """
    Stage timings of offline replays: covariance estimation, hypothesis scoring
    and mean update per trial, plus whole trials and sessions.
    Shared by concurrent session replays, hence the lock.
    """

    def __init__(self):
        self.stages: Dict[str, StageTiming] = {}
        self.sessions: List[Dict[str, Any]] = []
        self.lock = Lock()

    def record(self, stage: str, seconds: float):
        with self.lock:
            self.stages.setdefault(stage, StageTiming(stage)).add(seconds)

    def record_session(self, session_id: str, trials: int, seconds: float, ok: bool = True):
        with self.lock:
            self.sessions.append({
                "session_id": session_id,
                "trials": trials,
                "seconds": seconds,
                "ok": ok,
                "finished_at": datetime.now(timezone.utc).isoformat(),
            })

    def stage(self, name: str) -> Dict[str, Any]:
        """Totals of one stage, empty if it never ran"""
        with self.lock:
            timing = self.stages.get(name)
            return timing.as_dict() if timing is not None else {}

    def summary(self) -> Dict[str, Any]:
        with self.lock:
            stages = {name: timing.as_dict() for name, timing in self.stages.items()}
            sessions = list(self.sessions)
        return {
            "sessions_replayed": len(sessions),
            "failed_sessions": [s["session_id"] for s in sessions if not s["ok"]],
            "trials_replayed": sum(s["trials"] for s in sessions),
            "replay_seconds": sum(s["seconds"] for s in sessions),
            "stages": stages,
        }

    def clear(self):
        with self.lock:
            self.stages.clear()
            self.sessions.clear()


def write_metrics(path: str, report: Optional[MetricsReport], timing: Optional[Dict[str, Any]] = None):
    payload: Dict[str, Any] = report.to_dict() if report is not None else {}
    if timing is not None:
        payload["timing"] = timing
    atomic_write_text(path, json.dumps(payload, indent=2, ensure_ascii=False, default=float))


_replay_timer: Optional[ReplayTimer] = None


def get_replay_timer() -> ReplayTimer:
    """Process-wide timer used when the CLI replays sessions"""
    global _replay_timer
    if _replay_timer is None:
        _replay_timer = ReplayTimer()
    return _replay_timer


def reset_replay_timer():
    global _replay_timer
    _replay_timer = None
