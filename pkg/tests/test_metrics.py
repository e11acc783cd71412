import json

import numpy as np
import pandas as pd
import pytest

from metrics import (
    ReplayTimer,
    chance_interval,
    compute_metrics,
    get_replay_timer,
    reset_replay_timer,
    write_metrics,
)
from umm.errors import MissingLabels


def _log(session_id, predicted, truth, confidence=None, degenerate=None):
    n = len(predicted)
    return pd.DataFrame({
        "session_id": session_id,
        "trial_index": range(n),
        "predicted_symbol": predicted,
        "true_symbol": truth,
        "confidence": confidence if confidence is not None else np.linspace(0.5, 3.0, n),
        "instant_confidence": np.ones(n),
        "degenerate_flag": degenerate if degenerate is not None else [False] * n,
    })


def test_all_correct_session():
    report = compute_metrics(_log("s", list("ABCA"), list("ABCA")))
    assert report.pooled_accuracy == 1.0
    assert report.per_session_accuracy == {"s": 1.0}
    assert report.n_trials == 4
    assert report.pooled_interval[1] == pytest.approx(1.0)
    assert report.pooled_interval[0] < 1.0


def test_learning_curve_averages_sessions_per_trial_index():
    report = compute_metrics([_log("a", list("XB"), list("AB")), _log("b", list("AB"), list("AB"))])
    assert report.learning_curve["trial_index"].tolist() == [0, 1]
    assert report.learning_curve["fraction_correct"].tolist() == [0.5, 1.0]
    assert report.learning_curve["n_sessions"].tolist() == [2, 2]
    assert report.per_session_accuracy == {"a": 0.5, "b": 1.0}
    assert report.pooled_accuracy == 0.75


def test_metrics_do_not_depend_on_session_order():
    a = _log("a", list("ABBA"), list("ABAB"))
    b = _log("b", list("CCAB"), list("CCAA"))
    first, second = compute_metrics([a, b]), compute_metrics([b, a])
    assert first.per_session_accuracy == second.per_session_accuracy
    assert first.pooled_accuracy == second.pooled_accuracy
    pd.testing.assert_frame_equal(first.learning_curve, second.learning_curve)
    pd.testing.assert_frame_equal(first.confidence_by_trial, second.confidence_by_trial)


def test_confidence_histogram_splits_outcomes():
    log = _log("s", list("AABBC"), list("ABBBA"), confidence=[5.0, 0.1, 4.0, 3.0, 0.2])
    report = compute_metrics(log, bins=4)
    hist = report.confidence_histogram
    counts = hist.groupby("outcome")["count"].sum().to_dict()
    assert counts == {"correct": 3, "incorrect": 2}
    assert len(hist) == 8
    assert hist["bin_left"].min() == pytest.approx(0.1)
    assert hist["bin_right"].max() == pytest.approx(5.0)


def test_degenerate_sessions_are_listed():
    report = compute_metrics([
        _log("ok", list("AB"), list("AB")),
        _log("bad", list("AB"), list("BA"), degenerate=[False, True]),
    ])
    assert report.degenerate_sessions == ["bad"]


def test_missing_labels():
    with pytest.raises(MissingLabels):
        compute_metrics([])
    with pytest.raises(MissingLabels):
        compute_metrics(_log("s", list("AB"), ["A", None]))


def test_random_guessing_stays_inside_chance_interval():
    rng = np.random.default_rng(7)
    symbols = np.array(list("ABCDEF"))
    n = 600
    report = compute_metrics(_log("s", list(symbols[rng.integers(6, size=n)]), list(symbols[rng.integers(6, size=n)])))
    low, high = chance_interval(n, 6)
    assert low <= report.pooled_accuracy <= high
    assert low < 1 / 6 < high


def test_report_serializes(tmp_path):
    report = compute_metrics(_log("s", list("AB"), list("AB")))
    timer = ReplayTimer()
    timer.record("score", 0.01)
    path = tmp_path / "m.json"
    write_metrics(str(path), report, timer.summary())
    payload = json.loads(path.read_text(encoding="utf-8"))
    assert payload["pooled_accuracy"] == 1.0
    assert payload["learning_curve"][0]["fraction_correct"] == 1.0
    assert payload["timing"]["stages"]["score"]["calls"] == 1


def test_timer_tracks_stages_and_sessions():
    timer = ReplayTimer()
    for seconds in (0.2, 0.1, 0.3):
        timer.record("estimate", seconds)
    timer.record_session("s1", trials=3, seconds=0.6)
    timer.record_session("s2", trials=1, seconds=0.1, ok=False)

    estimate = timer.stage("estimate")
    assert estimate["calls"] == 3
    assert estimate["mean_seconds"] == pytest.approx(0.2)
    assert (estimate["fastest"], estimate["slowest"]) == (0.1, 0.3)
    assert timer.stage("update") == {}

    summary = timer.summary()
    assert summary["sessions_replayed"] == 2
    assert summary["failed_sessions"] == ["s2"]
    assert summary["trials_replayed"] == 4
    assert summary["replay_seconds"] == pytest.approx(0.7)

    timer.clear()
    assert timer.summary()["sessions_replayed"] == 0


def test_global_timer_is_shared_until_reset():
    reset_replay_timer()
    first = get_replay_timer()
    assert get_replay_timer() is first
    reset_replay_timer()
    assert get_replay_timer() is not first
