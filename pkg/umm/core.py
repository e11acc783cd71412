"""
Core domain types: symbols, epochs, stimulus events, trials and hypothesis partitions
All types are immutable; all functions are pure
"""
import logging
import math
import string
from dataclasses import dataclass, replace
from functools import cached_property
from typing import FrozenSet, Iterable, Iterator, Optional, Tuple, Union

import numpy as np

from .errors import (
    ArgumentOutOfRange,
    DegeneratePartition,
    InvalidConfig,
    ShapeMismatch,
    SymbolUnknown,
    TooFewSymbols,
)

logger = logging.getLogger(__name__)

SymbolRef = Union[int, str]

_DEFAULT_NAMES = string.ascii_uppercase + string.digits


def flatten_epochs(epochs: np.ndarray) -> np.ndarray:
    """(n, C, T) epochs -> (n, T*C) features, time-major (index t*C + c)"""
    epochs = np.asarray(epochs)
    if epochs.ndim != 3:
        raise ShapeMismatch(f"expected (n, channels, samples) epochs, got shape {epochs.shape}")
    n, c, t = epochs.shape
    return np.ascontiguousarray(epochs.transpose(0, 2, 1)).reshape(n, t * c)


def unflatten_features(features: np.ndarray, channels: int, samples: int) -> np.ndarray:
    """Inverse of flatten_epochs"""
    features = np.atleast_2d(np.asarray(features))
    if features.shape[1] != channels * samples:
        raise ShapeMismatch(
            f"feature dimension {features.shape[1]} != {samples} samples x {channels} channels"
        )
    return features.reshape(-1, samples, channels).transpose(0, 2, 1)


@dataclass(frozen=True)
class SymbolSet:
    """Ordered set of selectable symbols"""
    symbols: Tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "symbols", tuple(str(s) for s in self.symbols))
        if len(self.symbols) < 2:
            raise TooFewSymbols(f"need at least 2 symbols, got {len(self.symbols)}")
        if len(set(self.symbols)) != len(self.symbols):
            raise InvalidConfig(f"symbols must be unique: {self.symbols}")

    @classmethod
    def default(cls, count: int) -> "SymbolSet":
        """A-Z, then 0-9, then S36, S37, ..."""
        names = [
            _DEFAULT_NAMES[i] if i < len(_DEFAULT_NAMES) else f"S{i}"
            for i in range(count)
        ]
        return cls(tuple(names))

    @property
    def count(self) -> int:
        return len(self.symbols)

    def index(self, symbol: SymbolRef) -> int:
        """Resolve a symbol name or index to its index"""
        if isinstance(symbol, (int, np.integer)) and not isinstance(symbol, bool):
            if 0 <= int(symbol) < self.count:
                return int(symbol)
            raise SymbolUnknown(f"symbol index {symbol} outside 0..{self.count - 1}")
        try:
            return self.symbols.index(str(symbol))
        except ValueError:
            raise SymbolUnknown(f"unknown symbol {symbol!r}") from None

    def __len__(self) -> int:
        return self.count

    def __iter__(self) -> Iterator[str]:
        return iter(self.symbols)

    def __getitem__(self, i: int) -> str:
        return self.symbols[i]


@dataclass(frozen=True, eq=False)
class EpochFeatures:
    """One epoch: channels x samples feature matrix"""
    data: np.ndarray

    def __post_init__(self):
        data = np.array(self.data, dtype=float)
        if data.ndim != 2 or min(data.shape) < 1:
            raise ShapeMismatch(f"epoch must be a non-empty channels x samples matrix, got {data.shape}")
        if not np.all(np.isfinite(data)):
            raise ShapeMismatch("epoch contains non-finite values")
        data.flags.writeable = False
        object.__setattr__(self, "data", data)

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def samples(self) -> int:
        return self.data.shape[1]

    @property
    def flattened(self) -> np.ndarray:
        return self.data.T.reshape(-1)


@dataclass(frozen=True)
class StimulusEvent:
    """One highlighting event and the symbol indices it highlighted"""
    epoch_index: int
    highlighted: FrozenSet[int]

    def __post_init__(self):
        object.__setattr__(self, "highlighted", frozenset(int(s) for s in self.highlighted))
        if not self.highlighted:
            raise InvalidConfig(f"event {self.epoch_index} highlights no symbol")


@dataclass(frozen=True)
class HypothesisPartition:
    symbol: int
    target_indices: Tuple[int, ...]
    nontarget_indices: Tuple[int, ...]


@dataclass(frozen=True, eq=False)
class TrialRecord:
    """
    Epochs of one selection trial with the stimulus events aligned to them.
    true_symbol is for evaluation only; decoding never reads it.
    """
    symbols: SymbolSet
    epochs: np.ndarray
    events: Tuple[StimulusEvent, ...]
    true_symbol: Optional[int] = None

    def __post_init__(self):
        epochs = np.array(self.epochs, dtype=float)
        if epochs.ndim != 3 or min(epochs.shape) < 1:
            raise ShapeMismatch(f"trial epochs must be (n_epochs, channels, samples), got {epochs.shape}")
        if not np.all(np.isfinite(epochs)):
            raise ShapeMismatch("trial epochs contain non-finite values")
        epochs.flags.writeable = False
        object.__setattr__(self, "epochs", epochs)

        events = tuple(self.events)
        if len(events) != epochs.shape[0]:
            raise ShapeMismatch(f"{len(events)} events for {epochs.shape[0]} epochs")
        for k, event in enumerate(events):
            if event.epoch_index != k:
                raise ShapeMismatch(f"event at position {k} refers to epoch {event.epoch_index}")
            for s in event.highlighted:
                self.symbols.index(s)
        object.__setattr__(self, "events", events)

        if self.true_symbol is not None:
            object.__setattr__(self, "true_symbol", self.symbols.index(self.true_symbol))

        if not self.balanced:
            logger.warning(f"Unbalanced stimulation code: per-symbol target counts {self.target_counts.tolist()}")

    @property
    def n_epochs(self) -> int:
        return self.epochs.shape[0]

    @property
    def channels(self) -> int:
        return self.epochs.shape[1]

    @property
    def samples(self) -> int:
        return self.epochs.shape[2]

    @property
    def dimension(self) -> int:
        return self.channels * self.samples

    @cached_property
    def features(self) -> np.ndarray:
        """(N_e, D) time-major feature matrix"""
        features = flatten_epochs(self.epochs)
        features.flags.writeable = False
        return features

    @cached_property
    def membership(self) -> np.ndarray:
        """(N_e, |S|) boolean: was symbol s highlighted in event k"""
        mask = np.zeros((self.n_epochs, self.symbols.count), dtype=bool)
        for k, event in enumerate(self.events):
            mask[k, list(event.highlighted)] = True
        mask.flags.writeable = False
        return mask

    @property
    def target_counts(self) -> np.ndarray:
        return self.membership.sum(axis=0)

    @property
    def balanced(self) -> bool:
        counts = self.target_counts
        return bool(np.all(counts == counts[0]))

    @property
    def evaluation_grade(self) -> bool:
        """Balanced code with 1 < N_e+ < N_e-"""
        if not self.balanced:
            return False
        n_plus = int(self.target_counts[0])
        return 1 < n_plus < self.n_epochs - n_plus

    def epoch(self, k: int) -> EpochFeatures:
        return EpochFeatures(self.epochs[k])

    def without_labels(self) -> "TrialRecord":
        return replace(self, true_symbol=None)


def make_trial(
    symbols: SymbolSet,
    epochs: np.ndarray,
    highlighted: Iterable[Iterable[SymbolRef]],
    true_symbol: Optional[SymbolRef] = None,
) -> TrialRecord:
    """Build a TrialRecord from per-epoch highlighted symbol names or indices"""
    events = tuple(
        StimulusEvent(k, frozenset(symbols.index(s) for s in group))
        for k, group in enumerate(highlighted)
    )
    true_index = symbols.index(true_symbol) if true_symbol is not None else None
    return TrialRecord(symbols=symbols, epochs=epochs, events=events, true_symbol=true_index)


def partition_epochs(trial: TrialRecord, s: SymbolRef) -> HypothesisPartition:
    """Split the trial's epochs under the hypothesis that s is the attended symbol"""
    index = trial.symbols.index(s)
    column = trial.membership[:, index]
    targets = tuple(int(k) for k in np.flatnonzero(column))
    nontargets = tuple(int(k) for k in np.flatnonzero(~column))
    if not targets or not nontargets:
        raise DegeneratePartition(
            f"symbol {trial.symbols[index]!r} is highlighted in {len(targets)} of {trial.n_epochs} events"
        )
    return HypothesisPartition(symbol=index, target_indices=targets, nontarget_indices=nontargets)


def hypothesis_mean_difference(trial: TrialRecord, partition: HypothesisPartition) -> np.ndarray:
    """Target-side mean minus non-target-side mean of the flattened epochs"""
    if not partition.target_indices or not partition.nontarget_indices:
        raise DegeneratePartition(f"empty side in partition for symbol {partition.symbol}")
    features = trial.features
    plus = features[list(partition.target_indices)].mean(axis=0)
    minus = features[list(partition.nontarget_indices)].mean(axis=0)
    return plus - minus


def hypothesis_means(trial: TrialRecord) -> Tuple[np.ndarray, np.ndarray]:
    """
    Class means under every hypothesis at once.
    Returns (target_means, nontarget_means), each of shape (|S|, D).
    """
    mask = trial.membership
    n_plus = mask.sum(axis=0)
    n_minus = trial.n_epochs - n_plus
    bad = np.flatnonzero((n_plus == 0) | (n_minus == 0))
    if bad.size:
        names = [trial.symbols[i] for i in bad]
        raise DegeneratePartition(f"symbols {names} are highlighted in all or none of the events")
    weights = mask.astype(float)
    features = trial.features
    target_means = (weights.T @ features) / n_plus[:, None]
    nontarget_means = ((1.0 - weights).T @ features) / n_minus[:, None]
    return target_means, nontarget_means


def count_unconstrained_assignments(n_epochs: int, n_targets: int) -> int:
    """Number of target assignments without the one-common-symbol constraint: C(N_e, N_e+)"""
    if not 0 < n_targets < n_epochs:
        raise ArgumentOutOfRange(f"need 0 < N_e+ < N_e, got N_e={n_epochs}, N_e+={n_targets}")
    return math.comb(int(n_epochs), int(n_targets))
