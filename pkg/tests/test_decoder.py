import itertools
from dataclasses import replace

import numpy as np
import pytest
from scipy import stats
from sklearn.covariance import ledoit_wolf_shrinkage

from umm import (
    CovarianceModel,
    Decoder,
    DecoderConfig,
    DecoderState,
    EpochPool,
    MeanStrategy,
    classify_trial,
    compute_confidence,
    extract_lda_weights,
    flatten_epochs,
    generate_session,
    hypothesis_means,
    lda_threshold,
    mahalanobis_sq,
    score_hypotheses,
    shrinkage_covariance,
)
from umm.errors import InconsistentDimensions, InvalidConfig, NoAccumulatedMeans, ShapeMismatch, TooFewSymbols
from umm.synth import SynthConfig, templates


def test_mahalanobis_examples():
    identity = CovarianceModel.from_matrix(np.eye(2))
    assert mahalanobis_sq(np.array([3.0, 4.0]), identity) == pytest.approx(25.0, rel=1e-12)
    diag = CovarianceModel.from_matrix(np.diag([1.0, 4.0]))
    assert mahalanobis_sq(np.array([2.0, 2.0]), diag) == pytest.approx(5.0, rel=1e-12)
    assert mahalanobis_sq(np.zeros(2), diag) == 0.0
    with pytest.raises(ShapeMismatch):
        mahalanobis_sq(np.ones(3), diag)


def test_confidence_examples():
    c, winner, runner_up = compute_confidence([6.0, 10.0, 4.0, 2.0])
    assert (winner, runner_up) == (1, 0)
    assert c == pytest.approx(2.449489742783178, rel=1e-9)

    c, winner, runner_up = compute_confidence([3.0, 5.0, 5.0, 1.0])
    assert (winner, runner_up) == (1, 2)
    assert c == 0.0

    c, _, _ = compute_confidence([1.0, 3.0, 1.0, 1.0], sigma_floor=1e-12)
    assert c == pytest.approx(2.0 / 1e-12)
    assert np.isfinite(c)

    with pytest.raises(TooFewSymbols):
        compute_confidence([1.0])


def test_decoder_config_validation():
    with pytest.raises(InvalidConfig):
        DecoderConfig(degeneracy_ratio=1.0)
    with pytest.raises(InvalidConfig):
        DecoderConfig(degeneracy_warmup=0)
    with pytest.raises(InvalidConfig):
        DecoderConfig(mean_strategy="median")
    config = DecoderConfig(mean_strategy="optimistic", covariance_kind="shrinkage", covariance_scope="trial")
    assert config.describe() == {"mean_strategy": "optimistic", "covariance_kind": "shrinkage",
                                 "covariance_scope": "trial"}


def _naive_covariance(X, C, T, kind):
    """Dense recomputation: LW shrinkage, explicit block loops, diagonal loading"""
    D = X.shape[1]
    S = np.cov(X.T, bias=True)
    gamma = ledoit_wolf_shrinkage(X)
    sigma = (1 - gamma) * S + gamma * np.trace(S) / D * np.eye(D)
    eps = 1e-10 * np.trace(sigma) / D
    assert np.linalg.eigvalsh(sigma).min() > eps
    if kind == "shrinkage":
        return sigma
    block = lambda M, i, j: M[i * C:(i + 1) * C, j * C:(j + 1) * C]
    W = []
    for lag in range(T):
        acc = np.zeros((C, C))
        for j in range(T - lag):
            acc += (block(sigma, j + lag, j) + block(sigma, j, j + lag).T) / 2
        W.append(acc / (T - lag))
    toeplitz = np.zeros((D, D))
    for i in range(T):
        for j in range(T):
            toeplitz[i * C:(i + 1) * C, j * C:(j + 1) * C] = W[i - j] if i >= j else W[j - i].T
    smallest = np.linalg.eigvalsh(toeplitz).min()
    if smallest < eps:
        toeplitz = toeplitz + (2 * eps - smallest) * np.eye(D)
    return toeplitz


def _naive_replay(trials, strategy, kind, scope):
    """Explicit partitions, explicit inverse, explicit sums over the decision history"""
    C, T = trials[0].channels, trials[0].samples
    history_features, chosen_means, weights = [], [], []
    results = []
    for trial in trials:
        history_features = [trial.features] if scope == "trial" else history_features + [trial.features]
        inverse = np.linalg.inv(_naive_covariance(np.concatenate(history_features), C, T, kind))
        means = []
        for s in range(trial.symbols.count):
            plus = [k for k, e in enumerate(trial.events) if s in e.highlighted]
            minus = [k for k, e in enumerate(trial.events) if s not in e.highlighted]
            means.append((trial.features[plus].mean(axis=0), trial.features[minus].mean(axis=0)))

        def distances(pairs):
            return np.array([(p - m) @ inverse @ (p - m) for p, m in pairs])

        def popstd_confidence(d):
            order = np.argsort(-d, kind="stable")
            others = np.delete(d, order[0])
            return (d[order[0]] - d[order[1]]) / max(np.sqrt(np.mean((others - others.mean()) ** 2)), 1e-12)

        instant = distances(means)
        c_inst = popstd_confidence(instant)
        n = len(chosen_means)
        if strategy == "instant" or n == 0:
            d = instant
        elif strategy == "optimistic":
            prev_p = sum(p for p, _ in chosen_means)
            prev_m = sum(m for _, m in chosen_means)
            d = distances([((prev_p + p) / (n + 1), (prev_m + m) / (n + 1)) for p, m in means])
        else:
            w = sum(weights)
            prev_p = sum(c * p for c, (p, _) in zip(weights, chosen_means))
            prev_m = sum(c * m for c, (_, m) in zip(weights, chosen_means))
            d = distances([((prev_p + c_inst * p) / (w + c_inst), (prev_m + c_inst * m) / (w + c_inst))
                           for p, m in means])
        chosen = int(np.argmax(d))
        chosen_means.append(means[chosen])
        weights.append(min(c_inst, 1.0))
        results.append((chosen, d))
    return results


@pytest.mark.parametrize("strategy,kind,scope", list(itertools.product(
    ["instant", "optimistic", "confidence"], ["shrinkage", "toeplitz"], ["trial", "all"])))
def test_distances_match_brute_force(grid_config, strategy, kind, scope):
    config = DecoderConfig(mean_strategy=strategy, covariance_kind=kind, covariance_scope=scope)
    for seed in range(5):
        trials = generate_session(replace(grid_config, seed=seed))
        decoder = Decoder(config)
        for trial, (chosen, expected) in zip(trials, _naive_replay(trials, strategy, kind, scope)):
            decision = decoder.process(trial)
            assert len(decision.distances) == trial.symbols.count
            np.testing.assert_allclose(decision.distances, expected, rtol=1e-8, atol=1e-10 * expected.max())
            assert decision.chosen == chosen


def test_scale_invariance_of_decision_and_confidence():
    config = SynthConfig(n_symbols=6, code="sequential", repetitions=3, channels=4, samples=5,
                         snr=0.7, n_trials=100, seed=21)
    for trial in generate_session(config):
        cov = shrinkage_covariance(EpochPool(trial.channels, trial.samples, [trial.features]))
        base = compute_confidence(score_hypotheses(trial, cov, DecoderState(), MeanStrategy.INSTANT))
        for alpha in (1e-3, 1.0, 1e3):
            d = score_hypotheses(trial, cov.scaled(alpha), DecoderState(), MeanStrategy.INSTANT)
            c, winner, runner_up = compute_confidence(d)
            assert (winner, runner_up) == base[1:]
            assert c == pytest.approx(base[0], rel=1e-9)


def test_optimistic_without_history_equals_instant(grid_config):
    trial = generate_session(grid_config)[0]
    cov = shrinkage_covariance(EpochPool(trial.channels, trial.samples, [trial.features]))
    state = DecoderState()
    instant = score_hypotheses(trial, cov, state, MeanStrategy.INSTANT)
    np.testing.assert_array_equal(score_hypotheses(trial, cov, state, MeanStrategy.OPTIMISTIC), instant)
    np.testing.assert_array_equal(score_hypotheses(trial, cov, state, MeanStrategy.CONFIDENCE, 0.7), instant)


def test_unit_weights_make_confidence_blend_optimistic(grid_config):
    trials = generate_session(grid_config)
    rng = np.random.default_rng(0)
    D = trials[0].dimension
    plus, minus = rng.standard_normal(D), rng.standard_normal(D)
    state = DecoderState(trial_count=3, target_mean=plus, nontarget_mean=minus,
                         weighted_target_mean=plus, weighted_nontarget_mean=minus, weight_sum=3.0)
    trial = trials[4]
    cov = shrinkage_covariance(EpochPool(trial.channels, trial.samples, [trial.features]))
    optimistic = score_hypotheses(trial, cov, state, MeanStrategy.OPTIMISTIC)
    confidence = score_hypotheses(trial, cov, state, MeanStrategy.CONFIDENCE, instant_confidence=1.0)
    np.testing.assert_allclose(confidence, optimistic, rtol=1e-12)


def test_optimistic_accumulators_follow_decision_history(grid_config):
    trials = generate_session(grid_config)
    decoder = Decoder(DecoderConfig(mean_strategy="optimistic"))
    for trial in trials:
        decoder.process(trial)
    state = decoder.get_state()
    assert state.trial_count == len(trials)
    chosen = [hypothesis_means(t) for t in trials]
    expected_plus = np.mean([p[d.chosen] for (p, _), d in zip(chosen, decoder.history)], axis=0)
    expected_minus = np.mean([m[d.chosen] for (_, m), d in zip(chosen, decoder.history)], axis=0)
    np.testing.assert_allclose(state.target_mean, expected_plus, rtol=1e-10, atol=1e-12)
    np.testing.assert_allclose(state.nontarget_mean, expected_minus, rtol=1e-10, atol=1e-12)


def test_confidence_accumulators_store_clipped_weights(grid_config):
    trials = generate_session(grid_config)
    decoder = Decoder(DecoderConfig(mean_strategy="confidence"))
    for trial in trials:
        decoder.process(trial)
    state = decoder.get_state()
    weights = np.array([min(d.instant_confidence, 1.0) for d in decoder.history])
    assert np.all(weights >= 0) and np.all(weights <= 1)
    assert state.weight_sum == pytest.approx(weights.sum(), rel=1e-12)
    plus = np.array([hypothesis_means(t)[0][d.chosen] for t, d in zip(trials, decoder.history)])
    np.testing.assert_allclose(state.weighted_target_mean, weights @ plus / weights.sum(), rtol=1e-10, atol=1e-12)


def test_cumulative_confidences_are_monotone_and_state_is_not_mutated(grid_config):
    trials = generate_session(grid_config)
    config = DecoderConfig()
    decision, state = classify_trial(trials[0], config)
    before = (state.trial_count, len(state.pool))
    _, after = classify_trial(trials[1], config, state)
    assert (state.trial_count, len(state.pool)) == before
    assert after.trial_count == 2

    decoder = Decoder(config)
    history = [decoder.process(t) for t in trials]
    cumulative = [d.cumulative_confidence for d in history]
    cumulative_instant = [d.cumulative_instant_confidence for d in history]
    assert all(b >= a for a, b in zip(cumulative, cumulative[1:]))
    assert all(b >= a for a, b in zip(cumulative_instant, cumulative_instant[1:]))
    for d in history:
        assert min(d.distances) >= 0
        assert d.distances[d.chosen] >= d.distances[d.runner_up] >= max(
            x for i, x in enumerate(d.distances) if i not in (d.chosen, d.runner_up))


def test_decoding_is_deterministic_and_label_blind(grid_config):
    trials = generate_session(grid_config)
    first, second, blind = Decoder(), Decoder(), Decoder()
    for trial in trials:
        a, b, c = first.process(trial), second.process(trial), blind.process(trial.without_labels())
        assert a == b == c


def test_inconsistent_dimensions(grid_config):
    trials = generate_session(grid_config)
    other = generate_session(replace(grid_config, samples=grid_config.samples + 1))
    decoder = Decoder()
    decoder.process(trials[0])
    with pytest.raises(InconsistentDimensions):
        decoder.process(other[0])


@pytest.mark.parametrize("strategy", ["instant", "optimistic", "confidence"])
def test_noise_free_session_is_decoded(strategy):
    config = SynthConfig(n_symbols=6, code="sequential", repetitions=5, channels=3, samples=8,
                         noise_std=0.0, n_trials=10, seed=4)
    decoder = Decoder(DecoderConfig(mean_strategy=strategy))
    for trial in generate_session(config):
        decision = decoder.process(trial)
        assert decision.chosen == trial.true_symbol
        if strategy == "instant":
            assert not decision.degenerate_flag


def _swapped_state(config):
    """State that already believes the mean difference points away from the target template"""
    target, nontarget = templates(config)
    delta = flatten_epochs((config.snr * (target - nontarget))[None])[0]
    zero = np.zeros_like(delta)
    return DecoderState(trial_count=1, target_mean=zero, nontarget_mean=delta,
                        weighted_target_mean=zero, weighted_nontarget_mean=delta, weight_sum=1.0)


def test_swapped_means_lock_in_below_chance_and_get_flagged(sequential_config):
    config = replace(sequential_config, n_trials=30)
    decoder_config = DecoderConfig(mean_strategy="optimistic")
    state = _swapped_state(config)
    decisions, truths = [], []
    for trial in generate_session(config):
        decision, state = classify_trial(trial, decoder_config, state)
        decisions.append(decision)
        truths.append(trial.true_symbol)
    correct = sum(d.chosen == t for d, t in zip(decisions, truths))
    assert stats.binomtest(correct, len(decisions), 1 / 6, alternative="less").pvalue < 0.01

    flagged = [d.trial_index for d in decisions if d.degenerate_flag]
    assert flagged and flagged[0] <= decoder_config.degeneracy_warmup + 10
    assert sum(d.instant_choice == t for d, t in zip(decisions, truths)) >= 27


def test_reset_discards_means_but_keeps_pool(sequential_config):
    config = replace(sequential_config, n_trials=12)
    decoder_config = DecoderConfig(mean_strategy="optimistic", reset_on_degenerate=True, degeneracy_warmup=3)
    state = _swapped_state(config)
    resets, decisions = [], []
    for trial in generate_session(config):
        decision, state = classify_trial(trial, decoder_config, state)
        decisions.append(decision)
        if decision.reset_applied:
            resets.append(decision.trial_index)
            assert decision.degenerate_flag
            assert state.trial_count == 0
            assert state.target_mean is None
            assert state.monitor_trials == 0
            assert state.monitor_confidence == 0.0 and state.monitor_instant_confidence == 0.0
            assert state.cumulative_confidence == decision.cumulative_confidence
            assert len(state.pool) == (decision.trial_index + 1) * trial.n_epochs
    assert resets
    assert state.trials_processed == 12

    cumulative = [d.cumulative_confidence for d in decisions]
    cumulative_instant = [d.cumulative_instant_confidence for d in decisions]
    assert all(b >= a for a, b in zip(cumulative, cumulative[1:]))
    assert all(b >= a for a, b in zip(cumulative_instant, cumulative_instant[1:]))


@pytest.mark.parametrize("seed", range(5))
def test_cumulative_confidence_never_drops_across_resets(sequential_config, seed):
    config = replace(sequential_config, snr=0.6, n_trials=25, seed=seed)
    decoder_config = DecoderConfig(mean_strategy="optimistic", reset_on_degenerate=True, degeneracy_warmup=5)
    state = _swapped_state(config)
    previous = previous_instant = 0.0
    for trial in generate_session(config):
        decision, state = classify_trial(trial, decoder_config, state)
        assert decision.cumulative_confidence >= previous
        assert decision.cumulative_instant_confidence >= previous_instant
        previous, previous_instant = decision.cumulative_confidence, decision.cumulative_instant_confidence


@pytest.mark.slow
@pytest.mark.parametrize("strategy", [MeanStrategy.OPTIMISTIC, MeanStrategy.CONFIDENCE])
def test_healthy_session_is_never_flagged(sequential_config, strategy):
    decoder = Decoder(DecoderConfig(mean_strategy=strategy))
    for trial in generate_session(replace(sequential_config, n_trials=100)):
        assert not decoder.process(trial).degenerate_flag


def test_lda_weight_examples():
    state = DecoderState(trial_count=1, target_mean=np.array([2.0, 2.0]), nontarget_mean=np.zeros(2))
    np.testing.assert_allclose(extract_lda_weights(state, CovarianceModel.from_matrix(np.eye(2))), [2.0, 2.0])
    w = extract_lda_weights(state, CovarianceModel.from_matrix(np.diag([1.0, 4.0])))
    np.testing.assert_allclose(w, [2.0, 0.5])
    assert lda_threshold(state, w) == pytest.approx(2.5)
    with pytest.raises(NoAccumulatedMeans):
        extract_lda_weights(DecoderState(), CovarianceModel.from_matrix(np.eye(2)))
    with pytest.raises(NoAccumulatedMeans):
        Decoder().lda_weights()


def test_lda_weights_separate_epochs_at_high_snr(sequential_config):
    config = replace(sequential_config, snr=2.0, n_trials=15)
    decoder = Decoder()
    for trial in generate_session(config):
        decoder.process(trial)
    w, threshold = decoder.lda_weights()

    held_out = generate_session(replace(config, seed=config.seed + 100, n_trials=5))
    hits = total = 0
    for trial in held_out:
        is_target = trial.membership[:, trial.true_symbol]
        hits += int(np.sum((trial.features @ w > threshold) == is_target))
        total += trial.n_epochs
    assert hits / total > 0.9


def test_stage_times_are_reported_in_order(grid_config):
    trial = generate_session(grid_config)[0]
    seen = []
    decoder = Decoder(on_stage=lambda stage, seconds: seen.append((stage, seconds)))
    decoder.process(trial)
    decoder.process(trial)
    assert [stage for stage, _ in seen] == ["estimate", "score", "update"] * 2
    assert all(seconds >= 0.0 for _, seconds in seen)
