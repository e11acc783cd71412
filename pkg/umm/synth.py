"""
Synthetic ERP sessions with known ground truth
Stimulation codes, ERP-like templates, AR(1) + spatially mixed noise, and the 2-D toy speller
"""
import json
import logging
import os
from dataclasses import dataclass, field, fields, replace
from enum import Enum
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
from scipy import linalg

from .core import StimulusEvent, SymbolSet, TrialRecord
from .covariance import EpochPool, shrinkage_covariance
from .decoder import compute_confidence, mahalanobis_sq
from .errors import InvalidConfig

logger = logging.getLogger(__name__)

PRESETS_PATH = os.path.join(os.path.dirname(__file__), "..", "config", "presets.json")

TOY_LETTERS = ("A", "B", "C", "D")
TOY_TARGET = "B"
TOY_NOISE_COVARIANCE = np.array([[1.0, 0.6], [0.6, 0.8]])

# resampling attempts for pseudo-random codes that left an event empty
_MAX_CODE_ATTEMPTS = 1000


class StimulationCode(str, Enum):
    PSEUDO_RANDOM = "pseudo_random"
    ROW_COLUMN = "row_column"
    SEQUENTIAL = "sequential"


class SpatialMixing(str, Enum):
    RANDOM = "random"
    IDENTITY = "identity"


@dataclass(frozen=True, eq=False)
class SynthConfig:
    """
    Generator parameters. Each epoch is
    snr * template(target or non-target, optionally latency-shifted) + noise_std * noise,
    with noise AR(1) in time (coefficient ar_coefficient, unit stationary variance)
    and mixed across channels by a fixed seeded SPD square root.
    """
    n_symbols: int = 36
    code: StimulationCode = StimulationCode.PSEUDO_RANDOM
    epochs_per_trial: int = 68
    targets_per_symbol: int = 16
    rows: int = 6
    cols: int = 6
    repetitions: int = 10
    channels: int = 8
    samples: int = 20
    target_template: Optional[np.ndarray] = None
    nontarget_template: Optional[np.ndarray] = None
    template_channel_fraction: float = 0.5
    peak_position: float = 0.6
    spatial_mixing: SpatialMixing = SpatialMixing.RANDOM
    ar_coefficient: float = 0.5
    noise_std: float = 1.0
    snr: float = 1.0
    latency_jitter_std: float = 0.0
    n_trials: int = 35
    seed: int = 0
    symbol_names: Tuple[str, ...] = field(default=())

    def __post_init__(self):
        try:
            object.__setattr__(self, "code", StimulationCode(self.code))
            object.__setattr__(self, "spatial_mixing", SpatialMixing(self.spatial_mixing))
        except ValueError as e:
            raise InvalidConfig(str(e)) from e
        self._validate()

    def _validate(self):
        if self.n_symbols < 2:
            raise InvalidConfig(f"need at least 2 symbols, got {self.n_symbols}")
        if self.code is StimulationCode.PSEUDO_RANDOM:
            n_plus, n_e = self.targets_per_symbol, self.epochs_per_trial
            if not 1 < n_plus < n_e - n_plus:
                raise InvalidConfig(f"pseudo-random code needs 1 < N_e+ < N_e - N_e+, got N_e={n_e}, N_e+={n_plus}")
        elif self.code is StimulationCode.ROW_COLUMN:
            if self.rows * self.cols != self.n_symbols:
                raise InvalidConfig(f"row-column grid {self.rows}x{self.cols} does not hold {self.n_symbols} symbols")
            if self.rows < 2 or self.cols < 2:
                raise InvalidConfig("row-column grid needs at least 2 rows and 2 columns")
        if self.code is not StimulationCode.PSEUDO_RANDOM and self.repetitions < 1:
            raise InvalidConfig(f"repetitions must be >= 1, got {self.repetitions}")
        if self.channels < 1 or self.samples < 1:
            raise InvalidConfig(f"need channels, samples >= 1, got {self.channels}, {self.samples}")
        if not 0.0 <= self.ar_coefficient < 1.0:
            raise InvalidConfig(f"AR coefficient must lie in [0, 1), got {self.ar_coefficient}")
        if self.snr < 0 or self.noise_std < 0 or self.latency_jitter_std < 0:
            raise InvalidConfig("snr, noise_std and latency_jitter_std must be non-negative")
        if self.n_trials < 1:
            raise InvalidConfig(f"n_trials must be >= 1, got {self.n_trials}")
        if not 0.0 < self.template_channel_fraction <= 1.0:
            raise InvalidConfig(f"template_channel_fraction must lie in (0, 1], got {self.template_channel_fraction}")
        if self.symbol_names and len(self.symbol_names) != self.n_symbols:
            raise InvalidConfig(f"{len(self.symbol_names)} symbol names for {self.n_symbols} symbols")
        for name in ("target_template", "nontarget_template"):
            template = getattr(self, name)
            if template is not None and np.shape(template) != (self.channels, self.samples):
                raise InvalidConfig(f"{name} has shape {np.shape(template)}, expected {(self.channels, self.samples)}")

    @property
    def n_epochs(self) -> int:
        """Epochs per trial N_e implied by the code"""
        if self.code is StimulationCode.ROW_COLUMN:
            return self.repetitions * (self.rows + self.cols)
        if self.code is StimulationCode.SEQUENTIAL:
            return self.repetitions * self.n_symbols
        return self.epochs_per_trial

    @property
    def n_targets(self) -> int:
        """Per-symbol target count N_e+ implied by the code"""
        if self.code is StimulationCode.ROW_COLUMN:
            return 2 * self.repetitions
        if self.code is StimulationCode.SEQUENTIAL:
            return self.repetitions
        return self.targets_per_symbol

    @property
    def symbols(self) -> SymbolSet:
        if self.symbol_names:
            return SymbolSet(tuple(self.symbol_names))
        return SymbolSet.default(self.n_symbols)

    def streams(self) -> Tuple[np.random.Generator, np.random.Generator, np.random.Generator]:
        """Independent generators for templates, spatial mixing and the session itself"""
        template_seq, mixing_seq, session_seq = np.random.SeedSequence(self.seed).spawn(3)
        return (
            np.random.default_rng(template_seq),
            np.random.default_rng(mixing_seq),
            np.random.default_rng(session_seq),
        )


def load_preset(name: str, path: Optional[str] = None, **overrides: Any) -> SynthConfig:
    """Named configuration from config/presets.json, with keyword overrides"""
    path = path or PRESETS_PATH
    with open(path, "r", encoding="utf-8") as f:
        presets = json.load(f).get("presets", {})
    if name not in presets:
        raise InvalidConfig(f"unknown preset {name!r}; available: {sorted(presets)}")
    params = dict(presets[name])
    known = {f.name for f in fields(SynthConfig)}
    params.update({k: v for k, v in overrides.items() if v is not None})
    unknown = set(params) - known
    if unknown:
        raise InvalidConfig(f"unknown synth parameters: {sorted(unknown)}")
    return SynthConfig(**params)


def preset_names(path: Optional[str] = None) -> List[str]:
    with open(path or PRESETS_PATH, "r", encoding="utf-8") as f:
        return sorted(json.load(f).get("presets", {}))


def raised_cosine_bump(samples: int, peak_position: float = 0.6) -> np.ndarray:
    """Smooth positive bump of unit height, half-width samples/4, peaking at peak_position of the window"""
    t = np.arange(samples, dtype=float)
    peak = peak_position * (samples - 1)
    half_width = max(samples / 4.0, 1.0)
    u = np.clip((t - peak) / half_width, -1.0, 1.0)
    return 0.5 * (1.0 + np.cos(np.pi * u))


def templates(config: SynthConfig) -> Tuple[np.ndarray, np.ndarray]:
    """(target, non-target) C x T templates; defaults are a bump on a seeded channel subset and zero"""
    template_rng, _, _ = config.streams()
    if config.target_template is not None:
        target = np.array(config.target_template, dtype=float)
    else:
        n_active = max(1, int(round(config.template_channel_fraction * config.channels)))
        active = template_rng.choice(config.channels, size=n_active, replace=False)
        target = np.zeros((config.channels, config.samples))
        target[np.sort(active)] = raised_cosine_bump(config.samples, config.peak_position)
    if config.nontarget_template is not None:
        nontarget = np.array(config.nontarget_template, dtype=float)
    else:
        nontarget = np.zeros((config.channels, config.samples))
    return target, nontarget


def spatial_covariance(config: SynthConfig) -> np.ndarray:
    """C x C spatial noise covariance K with unit mean diagonal"""
    if config.spatial_mixing is SpatialMixing.IDENTITY:
        return np.eye(config.channels)
    _, mixing_rng, _ = config.streams()
    A = mixing_rng.standard_normal((config.channels, config.channels))
    K = A @ A.T / config.channels + 0.5 * np.eye(config.channels)
    return K / np.mean(np.diag(K))


def spatial_mixing_matrix(config: SynthConfig) -> np.ndarray:
    """Symmetric square root L of K"""
    values, vectors = linalg.eigh(spatial_covariance(config))
    return (vectors * np.sqrt(np.maximum(values, 0.0))) @ vectors.T


def noise_covariance(config: SynthConfig) -> np.ndarray:
    """Exact D x D time-major covariance of the generator noise: noise_std^2 * toeplitz(rho^lag) kron K"""
    temporal = linalg.toeplitz(config.ar_coefficient ** np.arange(config.samples))
    return config.noise_std ** 2 * np.kron(temporal, spatial_covariance(config))


def _trial_code(config: SynthConfig, rng: np.random.Generator) -> Tuple[StimulusEvent, ...]:
    S = config.n_symbols
    if config.code is StimulationCode.ROW_COLUMN:
        grid = np.arange(S).reshape(config.rows, config.cols)
        lines = [frozenset(row.tolist()) for row in grid] + [frozenset(col.tolist()) for col in grid.T]
        groups = []
        for _ in range(config.repetitions):
            groups.extend(lines[i] for i in rng.permutation(len(lines)))
    elif config.code is StimulationCode.SEQUENTIAL:
        groups = []
        for _ in range(config.repetitions):
            groups.extend(frozenset([int(s)]) for s in rng.permutation(S))
    else:
        n_e, n_plus = config.epochs_per_trial, config.targets_per_symbol
        for _ in range(_MAX_CODE_ATTEMPTS):
            mask = np.zeros((n_e, S), dtype=bool)
            for s in range(S):
                mask[rng.choice(n_e, size=n_plus, replace=False), s] = True
            if mask.any(axis=1).all():
                break
        else:
            raise InvalidConfig(
                f"could not draw a pseudo-random code without empty events ({S} symbols, N_e={n_e}, N_e+={n_plus})"
            )
        groups = [frozenset(np.flatnonzero(row).tolist()) for row in mask]
    return tuple(StimulusEvent(k, group) for k, group in enumerate(groups))


def generate_stimulation_code(config: SynthConfig, rng: Optional[np.random.Generator] = None
                              ) -> List[Tuple[StimulusEvent, ...]]:
    """One event sequence per trial; every symbol is a target exactly N_e+ times per trial"""
    if rng is None:
        _, _, rng = config.streams()
    return [_trial_code(config, rng) for _ in range(config.n_trials)]


def _shift(template: np.ndarray, lag: int) -> np.ndarray:
    """Delay (lag > 0) or advance a C x T template in time, zero-filled at the edges"""
    if lag == 0:
        return template
    shifted = np.zeros_like(template)
    if abs(lag) >= template.shape[1]:
        return shifted
    if lag > 0:
        shifted[:, lag:] = template[:, :-lag]
    else:
        shifted[:, :lag] = template[:, -lag:]
    return shifted


def _noise(config: SynthConfig, n: int, rng: np.random.Generator, mixing: np.ndarray) -> np.ndarray:
    rho = config.ar_coefficient
    innovations = rng.standard_normal((n, config.samples, config.channels))
    z = np.empty_like(innovations)
    z[:, 0] = innovations[:, 0]
    scale = np.sqrt(1.0 - rho ** 2)
    for t in range(1, config.samples):
        z[:, t] = rho * z[:, t - 1] + scale * innovations[:, t]
    mixed = z @ mixing.T
    return config.noise_std * mixed.transpose(0, 2, 1)


def generate_session(config: SynthConfig) -> List[TrialRecord]:
    """Trials with true symbols drawn uniformly; bit-identical for identical configs"""
    _, _, rng = config.streams()
    target, nontarget = templates(config)
    mixing = spatial_mixing_matrix(config)
    symbols = config.symbols

    trials = []
    for _ in range(config.n_trials):
        true_symbol = int(rng.integers(config.n_symbols))
        events = _trial_code(config, rng)
        n_e = len(events)
        epochs = np.empty((n_e, config.channels, config.samples))
        for k, event in enumerate(events):
            base = target if true_symbol in event.highlighted else nontarget
            if config.latency_jitter_std > 0:
                base = _shift(base, int(np.rint(rng.normal(0.0, config.latency_jitter_std))))
            epochs[k] = config.snr * base
        if config.noise_std > 0:
            epochs += _noise(config, n_e, rng, mixing)
        trials.append(TrialRecord(symbols=symbols, epochs=epochs, events=events, true_symbol=true_symbol))
    logger.debug(f"Generated {len(trials)} trials ({config.code.value}, N_e={config.n_epochs}, seed={config.seed})")
    return trials


def with_seed(config: SynthConfig, seed: int) -> SynthConfig:
    return replace(config, seed=seed)


@dataclass(frozen=True, eq=False)
class ToyHypothesis:
    letter: str
    target_mean: np.ndarray
    nontarget_mean: np.ndarray

    @property
    def delta(self) -> np.ndarray:
        return self.target_mean - self.nontarget_mean


@dataclass(frozen=True, eq=False)
class ToyData:
    """2-D four-letter speller toy trial with per-hypothesis means"""
    points: np.ndarray
    letters: Tuple[str, ...]
    hypotheses: Dict[str, ToyHypothesis]
    trial: TrialRecord
    decoded: str

    def rows(self) -> List[Dict[str, Any]]:
        """CSV rows: panel, letter, x, y, kind"""
        rows = [
            {"panel": "input", "letter": letter, "x": float(x), "y": float(y), "kind": "point"}
            for (x, y), letter in zip(self.points, self.letters)
        ]
        for letter, hypothesis in self.hypotheses.items():
            panel = f"hypothesis_{letter}"
            for kind, mean in (("hyp_target_mean", hypothesis.target_mean),
                               ("hyp_nontarget_mean", hypothesis.nontarget_mean)):
                rows.append({"panel": panel, "letter": letter, "x": float(mean[0]), "y": float(mean[1]), "kind": kind})
        return rows


def generate_toy_2d(seed: int = 0, draws_per_letter: int = 25, separation: float = 2.0,
                    noise_std: float = 1.0) -> ToyData:
    """
    Four letters, one highlighted per event, shared 2-D Gaussian noise;
    epochs of the attended letter 'B' are shifted by `separation` along (1, 1)/sqrt(2).
    """
    if draws_per_letter < 2:
        raise InvalidConfig(f"draws_per_letter must be >= 2, got {draws_per_letter}")
    rng = np.random.default_rng(seed)
    n = draws_per_letter * len(TOY_LETTERS)
    order = rng.permutation(np.repeat(np.arange(len(TOY_LETTERS)), draws_per_letter))
    shift = separation * np.array([1.0, 1.0]) / np.sqrt(2.0)
    noise = rng.multivariate_normal(np.zeros(2), TOY_NOISE_COVARIANCE, size=n) * noise_std
    points = noise + np.where((order == TOY_LETTERS.index(TOY_TARGET))[:, None], shift, 0.0)

    letters = tuple(TOY_LETTERS[i] for i in order)
    symbols = SymbolSet(TOY_LETTERS)
    events = tuple(StimulusEvent(k, frozenset([int(i)])) for k, i in enumerate(order))
    trial = TrialRecord(symbols=symbols, epochs=points[:, :, None], events=events,
                        true_symbol=TOY_LETTERS.index(TOY_TARGET))

    hypotheses = {}
    for i, letter in enumerate(TOY_LETTERS):
        mask = order == i
        hypotheses[letter] = ToyHypothesis(letter, points[mask].mean(axis=0), points[~mask].mean(axis=0))

    cov = shrinkage_covariance(EpochPool(2, 1, [trial.features]))
    distances = [mahalanobis_sq(hypotheses[letter].delta, cov) for letter in TOY_LETTERS]
    _, winner, _ = compute_confidence(distances)
    return ToyData(points=points, letters=letters, hypotheses=hypotheses, trial=trial, decoded=TOY_LETTERS[winner])
