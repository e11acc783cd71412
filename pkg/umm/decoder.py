"""
Unsupervised mean-difference maximization (UMM) decoder
Per-trial hypothesis scoring, confidence, across-trial mean learning and degeneracy monitoring
"""
import logging
import time
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Callable, Dict, Optional, Tuple

import numpy as np

from .core import TrialRecord, hypothesis_means
from .covariance import (
    Centering,
    CovarianceKind,
    CovarianceModel,
    CovarianceScope,
    EpochPool,
    estimate_covariance,
    spd_solve,
    update_scope,
)
from .errors import (
    InconsistentDimensions,
    InvalidConfig,
    NoAccumulatedMeans,
    ShapeMismatch,
    TooFewSymbols,
)

logger = logging.getLogger(__name__)


class MeanStrategy(str, Enum):
    INSTANT = "instant"
    OPTIMISTIC = "optimistic"
    CONFIDENCE = "confidence"


@dataclass(frozen=True)
class DecoderConfig:
    """Session-wide decoder settings"""
    mean_strategy: MeanStrategy = MeanStrategy.CONFIDENCE
    covariance_kind: CovarianceKind = CovarianceKind.BLOCK_TOEPLITZ
    covariance_scope: CovarianceScope = CovarianceScope.POOLED_ALL
    taper_bandwidth: Optional[int] = None
    centering: Centering = Centering.GRAND
    shrinkage: Optional[float] = None
    degeneracy_warmup: int = 10
    degeneracy_ratio: float = 1.1
    reset_on_degenerate: bool = False
    sigma_floor: float = 1e-12

    def __post_init__(self):
        try:
            object.__setattr__(self, "mean_strategy", MeanStrategy(self.mean_strategy))
            object.__setattr__(self, "covariance_kind", CovarianceKind(self.covariance_kind))
            object.__setattr__(self, "covariance_scope", CovarianceScope(self.covariance_scope))
            object.__setattr__(self, "centering", Centering(self.centering))
        except ValueError as e:
            raise InvalidConfig(str(e)) from e
        if self.degeneracy_ratio <= 1.0:
            raise InvalidConfig(f"degeneracy_ratio must be > 1, got {self.degeneracy_ratio}")
        if self.degeneracy_warmup < 1:
            raise InvalidConfig(f"degeneracy_warmup must be >= 1, got {self.degeneracy_warmup}")
        if self.taper_bandwidth is not None and self.taper_bandwidth < 1:
            raise InvalidConfig(f"taper_bandwidth must be >= 1, got {self.taper_bandwidth}")
        if self.shrinkage is not None and not 0.0 <= self.shrinkage <= 1.0:
            raise InvalidConfig(f"shrinkage must lie in [0, 1], got {self.shrinkage}")
        if self.sigma_floor <= 0:
            raise InvalidConfig(f"sigma_floor must be positive, got {self.sigma_floor}")

    def describe(self) -> Dict[str, str]:
        return {
            "mean_strategy": self.mean_strategy.value,
            "covariance_kind": self.covariance_kind.value,
            "covariance_scope": self.covariance_scope.value,
        }


@dataclass(frozen=True)
class Decision:
    """Outcome of one trial"""
    trial_index: int
    chosen: int
    runner_up: int
    distances: Tuple[float, ...]
    confidence: float
    instant_confidence: float
    instant_choice: int
    cumulative_confidence: float
    cumulative_instant_confidence: float
    degenerate_flag: bool = False
    reset_applied: bool = False

    def distance_map(self, symbols) -> Dict[str, float]:
        return {symbols[i]: d for i, d in enumerate(self.distances)}


@dataclass(frozen=True, eq=False)
class DecoderState:
    """
    Accumulated knowledge of one session. trial_count is N_t and the monitor_*
    fields restart on a reset; trials_processed and the cumulative confidences
    cover the whole session.
    """
    pool: Optional[EpochPool] = None
    trial_count: int = 0
    trials_processed: int = 0
    target_mean: Optional[np.ndarray] = None
    nontarget_mean: Optional[np.ndarray] = None
    weighted_target_mean: Optional[np.ndarray] = None
    weighted_nontarget_mean: Optional[np.ndarray] = None
    weight_sum: float = 0.0
    confidences: Tuple[Tuple[float, float], ...] = ()
    cumulative_confidence: float = 0.0
    cumulative_instant_confidence: float = 0.0
    monitor_trials: int = 0
    monitor_confidence: float = 0.0
    monitor_instant_confidence: float = 0.0
    history: Tuple[Decision, ...] = field(default_factory=tuple)

    @property
    def dimension(self) -> Optional[int]:
        return None if self.pool is None else self.pool.dimension


def mahalanobis_sq(delta_mu: np.ndarray, cov: CovarianceModel) -> float:
    """delta' Sigma^-1 delta, clipped at 0"""
    delta_mu = np.asarray(delta_mu, dtype=float)
    if delta_mu.ndim != 1 or delta_mu.shape[0] != cov.dimension:
        raise ShapeMismatch(f"mean difference of shape {delta_mu.shape} against {cov.dimension}-dimensional covariance")
    return max(float(delta_mu @ spd_solve(cov, delta_mu)), 0.0)


def _row_distances(deltas: np.ndarray, cov: CovarianceModel) -> np.ndarray:
    solved = spd_solve(cov, deltas)
    return np.maximum(np.einsum("ij,ij->i", deltas, solved), 0.0)


def compute_confidence(distances, sigma_floor: float = 1e-12) -> Tuple[float, int, int]:
    """
    Standardized winner-vs-runner-up gap: (d* - d_r) / std(non-winner distances).
    Returns (c, winner, runner_up); ties go to the lowest symbol index.
    """
    d = np.asarray(distances, dtype=float)
    if d.ndim != 1 or d.shape[0] < 2:
        raise TooFewSymbols(f"confidence needs at least 2 hypotheses, got {d.shape}")
    winner = int(np.argmax(d))
    others = np.delete(d, winner)
    other_index = np.delete(np.arange(d.shape[0]), winner)
    runner_up = int(other_index[np.argmax(others)])
    sigma = float(np.std(others))
    c = (d[winner] - d[runner_up]) / max(sigma, sigma_floor)
    return max(float(c), 0.0), winner, runner_up


def _blended_means(
    state: DecoderState,
    target_means: np.ndarray,
    nontarget_means: np.ndarray,
    strategy: MeanStrategy,
    instant_confidence: Optional[float],
) -> Tuple[np.ndarray, np.ndarray]:
    if strategy is MeanStrategy.OPTIMISTIC and state.trial_count > 0:
        n = state.trial_count
        return (
            (state.target_mean * n + target_means) / (n + 1),
            (state.nontarget_mean * n + nontarget_means) / (n + 1),
        )
    if strategy is MeanStrategy.CONFIDENCE and state.trial_count > 0:
        w, c = state.weight_sum, float(instant_confidence)
        if w + c <= 0.0:
            return target_means, nontarget_means
        return (
            (state.weighted_target_mean * w + c * target_means) / (w + c),
            (state.weighted_nontarget_mean * w + c * nontarget_means) / (w + c),
        )
    return target_means, nontarget_means


def score_hypotheses(
    trial: TrialRecord,
    cov: CovarianceModel,
    state: DecoderState,
    strategy: MeanStrategy,
    instant_confidence: Optional[float] = None,
    sigma_floor: float = 1e-12,
) -> np.ndarray:
    """
    d(s) for every symbol, indexed by symbol index.
    The confidence strategy needs the current trial's instant confidence; it is
    computed here when not given.
    """
    strategy = MeanStrategy(strategy)
    target_means, nontarget_means = hypothesis_means(trial)
    if strategy is MeanStrategy.CONFIDENCE and instant_confidence is None and state.trial_count > 0:
        instant = _row_distances(target_means - nontarget_means, cov)
        instant_confidence = compute_confidence(instant, sigma_floor)[0]
    plus, minus = _blended_means(state, target_means, nontarget_means, strategy, instant_confidence)
    return _row_distances(plus - minus, cov)


def _update_means(
    state: DecoderState, target_mean: np.ndarray, nontarget_mean: np.ndarray, instant_confidence: float
) -> Dict[str, object]:
    n = state.trial_count
    if n == 0:
        updates = {
            "target_mean": target_mean.copy(),
            "nontarget_mean": nontarget_mean.copy(),
            "weighted_target_mean": np.zeros_like(target_mean),
            "weighted_nontarget_mean": np.zeros_like(nontarget_mean),
            "weight_sum": 0.0,
        }
        prior_target, prior_nontarget, w = updates["weighted_target_mean"], updates["weighted_nontarget_mean"], 0.0
    else:
        updates = {
            "target_mean": (state.target_mean * n + target_mean) / (n + 1),
            "nontarget_mean": (state.nontarget_mean * n + nontarget_mean) / (n + 1),
        }
        prior_target, prior_nontarget, w = state.weighted_target_mean, state.weighted_nontarget_mean, state.weight_sum

    c_hat = min(instant_confidence, 1.0)
    if w + c_hat > 0.0:
        updates["weighted_target_mean"] = (prior_target * w + c_hat * target_mean) / (w + c_hat)
        updates["weighted_nontarget_mean"] = (prior_nontarget * w + c_hat * nontarget_mean) / (w + c_hat)
    else:
        updates["weighted_target_mean"] = prior_target
        updates["weighted_nontarget_mean"] = prior_nontarget
    updates["weight_sum"] = w + c_hat
    updates["trial_count"] = n + 1
    return updates


StageCallback = Callable[[str, float], None]


def classify_trial(
    trial: TrialRecord,
    config: DecoderConfig,
    state: Optional[DecoderState] = None,
    on_stage: Optional[StageCallback] = None,
) -> Tuple[Decision, DecoderState]:
    """
    One sequential UMM step. Returns the decision and the new state; the input
    state is left untouched. Never reads trial.true_symbol.
    on_stage, if given, receives the wall-clock seconds of the "estimate",
    "score" and "update" stages.
    """
    clock = time.perf_counter()

    def stage_done(name: str):
        nonlocal clock
        now = time.perf_counter()
        if on_stage is not None:
            on_stage(name, now - clock)
        clock = now

    state = state or DecoderState()
    strategy = config.mean_strategy

    if state.pool is None:
        pool = EpochPool(trial.channels, trial.samples)
    else:
        if (trial.channels, trial.samples) != (state.pool.channels, state.pool.samples):
            raise InconsistentDimensions(
                f"trial has {trial.channels} channels x {trial.samples} samples, "
                f"session has {state.pool.channels} x {state.pool.samples}"
            )
        pool = state.pool.copy()

    pool = update_scope(config, pool, trial.features)
    cov = estimate_covariance(config, pool)
    stage_done("estimate")

    target_means, nontarget_means = hypothesis_means(trial)
    instant = _row_distances(target_means - nontarget_means, cov)
    c_inst, instant_choice, _ = compute_confidence(instant, config.sigma_floor)

    if strategy is MeanStrategy.INSTANT or state.trial_count == 0:
        distances = instant
    else:
        distances = score_hypotheses(trial, cov, state, strategy, c_inst, config.sigma_floor)
    c, chosen, runner_up = compute_confidence(distances, config.sigma_floor)
    stage_done("score")

    updates = _update_means(state, target_means[chosen], nontarget_means[chosen], c_inst)

    cumulative = state.cumulative_confidence + c
    cumulative_instant = state.cumulative_instant_confidence + c_inst
    # the monitor sums restart after a reset; the cumulative ones never do
    monitor_trials = state.monitor_trials + 1
    monitored = state.monitor_confidence + c
    monitored_instant = state.monitor_instant_confidence + c_inst
    degenerate = (
        strategy is not MeanStrategy.INSTANT
        and monitor_trials >= config.degeneracy_warmup
        and monitored < config.degeneracy_ratio * monitored_instant
    )
    reset = False
    if degenerate:
        logger.warning(
            f"Degenerate mode suspected at trial {state.trials_processed}: confidence since reset "
            f"{monitored:.3f} < {config.degeneracy_ratio} x instant {monitored_instant:.3f}"
        )
        if config.reset_on_degenerate:
            reset = True
            logger.warning("Discarding accumulated class means and starting over")

    decision = Decision(
        trial_index=state.trials_processed,
        chosen=chosen,
        runner_up=runner_up,
        distances=tuple(float(d) for d in distances),
        confidence=c,
        instant_confidence=c_inst,
        instant_choice=instant_choice,
        cumulative_confidence=cumulative,
        cumulative_instant_confidence=cumulative_instant,
        degenerate_flag=degenerate,
        reset_applied=reset,
    )

    new_state = replace(
        state,
        pool=pool,
        trials_processed=state.trials_processed + 1,
        confidences=state.confidences + ((c, c_inst),),
        cumulative_confidence=cumulative,
        cumulative_instant_confidence=cumulative_instant,
        monitor_trials=monitor_trials,
        monitor_confidence=monitored,
        monitor_instant_confidence=monitored_instant,
        history=state.history + (decision,),
        **updates,
    )
    if reset:
        new_state = replace(
            new_state,
            trial_count=0,
            target_mean=None,
            nontarget_mean=None,
            weighted_target_mean=None,
            weighted_nontarget_mean=None,
            weight_sum=0.0,
            monitor_trials=0,
            monitor_confidence=0.0,
            monitor_instant_confidence=0.0,
        )
    stage_done("update")
    return decision, new_state


def _accumulated_difference(state: DecoderState, strategy: Optional[MeanStrategy]) -> np.ndarray:
    if state.trial_count < 1 or state.target_mean is None:
        raise NoAccumulatedMeans("no class means accumulated yet")
    if strategy is not None and MeanStrategy(strategy) is MeanStrategy.CONFIDENCE and state.weight_sum > 0.0:
        return state.weighted_target_mean - state.weighted_nontarget_mean
    return state.target_mean - state.nontarget_mean


def extract_lda_weights(
    state: DecoderState, cov: CovarianceModel, strategy: Optional[MeanStrategy] = None
) -> np.ndarray:
    """LDA projection w = Sigma^-1 (mu+ - mu-) from the accumulated means"""
    return spd_solve(cov, _accumulated_difference(state, strategy))


def lda_threshold(state: DecoderState, w: np.ndarray, strategy: Optional[MeanStrategy] = None) -> float:
    """w . (mu+ + mu-) / 2; epochs with w . x above it are called targets"""
    _accumulated_difference(state, strategy)
    if strategy is not None and MeanStrategy(strategy) is MeanStrategy.CONFIDENCE and state.weight_sum > 0.0:
        midpoint = (state.weighted_target_mean + state.weighted_nontarget_mean) / 2.0
    else:
        midpoint = (state.target_mean + state.nontarget_mean) / 2.0
    return float(w @ midpoint)


class Decoder:
    """Stateful session decoder around classify_trial"""

    def __init__(self, config: Optional[DecoderConfig] = None, on_stage: Optional[StageCallback] = None):
        self.config = config or DecoderConfig()
        self.on_stage = on_stage
        self.state = DecoderState()

    def process(self, trial: TrialRecord) -> Decision:
        decision, self.state = classify_trial(trial, self.config, self.state, self.on_stage)
        return decision

    def current_covariance(self) -> CovarianceModel:
        """Covariance re-estimated from the current pool"""
        if self.state.pool is None:
            raise NoAccumulatedMeans("no trial processed yet")
        return estimate_covariance(self.config, self.state.pool)

    def lda_weights(self) -> Tuple[np.ndarray, float]:
        cov = self.current_covariance()
        w = extract_lda_weights(self.state, cov, self.config.mean_strategy)
        return w, lda_threshold(self.state, w, self.config.mean_strategy)

    def get_state(self) -> DecoderState:
        return self.state

    @property
    def history(self) -> Tuple[Decision, ...]:
        return self.state.history
