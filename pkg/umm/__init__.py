# Domain types and partitions
from .core import (
    SymbolSet, EpochFeatures, StimulusEvent, TrialRecord, HypothesisPartition,
    make_trial, partition_epochs, hypothesis_mean_difference, hypothesis_means,
    count_unconstrained_assignments, flatten_epochs, unflatten_features,
)

# Covariance estimation
from .covariance import (
    CovarianceKind, CovarianceScope, Centering, EpochPool, CovarianceModel,
    sample_covariance, shrinkage_covariance, block_toeplitz_covariance,
    spd_repair, spd_solve, update_scope, estimate_covariance,
)

# Decoder
from .decoder import (
    MeanStrategy, DecoderConfig, DecoderState, Decision, Decoder,
    mahalanobis_sq, compute_confidence, score_hypotheses, classify_trial,
    extract_lda_weights, lda_threshold,
)

# Synthetic data, persistence and console output
from .synth import SynthConfig, StimulationCode, generate_stimulation_code, generate_session, generate_toy_2d, load_preset
from .session_io import (
    SessionManifest, TrialManifest, LdaWeights, write_session, read_session, load_trials,
    session_to_trials, trials_to_session, decision_log_frame, write_decision_log, read_decision_log,
    write_lda_weights, read_lda_weights,
)
from .logger import Logger
from .errors import (
    UMMError, SymbolUnknown, DegeneratePartition, ArgumentOutOfRange, EmptyPool, InsufficientData,
    ShapeMismatch, NotPositiveDefinite, TooFewSymbols, NoAccumulatedMeans, InconsistentDimensions,
    InvalidConfig, FormatVersionUnsupported, CorruptPayload, MissingLabels,
)
from . import errors

__all__ = [
    # Core
    "SymbolSet", "EpochFeatures", "StimulusEvent", "TrialRecord", "HypothesisPartition",
    "make_trial", "partition_epochs", "hypothesis_mean_difference", "hypothesis_means",
    "count_unconstrained_assignments", "flatten_epochs", "unflatten_features",
    # Covariance
    "CovarianceKind", "CovarianceScope", "Centering", "EpochPool", "CovarianceModel",
    "sample_covariance", "shrinkage_covariance", "block_toeplitz_covariance",
    "spd_repair", "spd_solve", "update_scope", "estimate_covariance",
    # Decoder
    "MeanStrategy", "DecoderConfig", "DecoderState", "Decision", "Decoder",
    "mahalanobis_sq", "compute_confidence", "score_hypotheses", "classify_trial",
    "extract_lda_weights", "lda_threshold",
    # Synth / IO
    "SynthConfig", "StimulationCode", "generate_stimulation_code", "generate_session",
    "generate_toy_2d", "load_preset",
    "SessionManifest", "TrialManifest", "LdaWeights", "write_session", "read_session", "load_trials",
    "session_to_trials", "trials_to_session", "decision_log_frame", "write_decision_log",
    "read_decision_log", "write_lda_weights", "read_lda_weights",
    "Logger", "errors",
    # Errors
    "UMMError", "SymbolUnknown", "DegeneratePartition", "ArgumentOutOfRange", "EmptyPool",
    "InsufficientData", "ShapeMismatch", "NotPositiveDefinite", "TooFewSymbols", "NoAccumulatedMeans",
    "InconsistentDimensions", "InvalidConfig", "FormatVersionUnsupported", "CorruptPayload", "MissingLabels",
]
