"""
Session directory format, decision-log CSV and LDA weight files

A session directory holds
  manifest.json  - UTF-8 JSON, SessionManifest below, format_version 1
  epochs.f32le   - epoch_count * C * T little-endian float32, epoch-major,
                   each epoch C x T row-major (sample index fastest)
The reader converts to the decoder's time-major feature layout (t*C + c).
Adapters for other recordings only need to produce these two files.
"""
import json
import logging
import os
import tempfile
from dataclasses import dataclass
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel, Field, ValidationError, model_validator

from .core import StimulusEvent, SymbolSet, TrialRecord, flatten_epochs
from .decoder import Decision, DecoderConfig
from .errors import CorruptPayload, FormatVersionUnsupported, InvalidConfig, ShapeMismatch

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
MANIFEST_FILE = "manifest.json"
PAYLOAD_FILE = "epochs.f32le"
PAYLOAD_DTYPE = np.dtype("<f4")
LDA_DTYPE = np.dtype("<f8")

DECISION_LOG_COLUMNS = [
    "session_id",
    "trial_index",
    "predicted_symbol",
    "true_symbol",
    "correct",
    "d_star",
    "d_runner_up",
    "confidence",
    "instant_confidence",
    "cumulative_confidence",
    "cumulative_instant_confidence",
    "degenerate_flag",
    "mean_strategy",
    "covariance_kind",
    "covariance_scope",
    "instant_choice",
    "reset_applied",
]

PathLike = Union[str, "os.PathLike[str]"]


def atomic_write_bytes(path: PathLike, data: bytes):
    """Write to a temp file in the target directory, then rename into place"""
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.remove(tmp)
        raise


def atomic_write_text(path: PathLike, text: str):
    atomic_write_bytes(path, text.encode("utf-8"))


class TrialManifest(BaseModel):
    """One trial: either a half-open epoch range [start, stop) or explicit epoch indices"""
    epoch_range: Optional[Tuple[int, int]] = None
    epoch_indices: Optional[List[int]] = None
    events: List[List[int]]
    true_symbol: Optional[int] = None

    @model_validator(mode="after")
    def _one_index_form(self):
        if (self.epoch_range is None) == (self.epoch_indices is None):
            raise ValueError("give exactly one of epoch_range or epoch_indices")
        return self

    def indices(self) -> List[int]:
        if self.epoch_range is not None:
            start, stop = self.epoch_range
            return list(range(start, stop))
        return list(self.epoch_indices or [])


class SessionManifest(BaseModel):
    format_version: int = FORMAT_VERSION
    session_id: str = "session"
    channel_names: List[str]
    sampling_rate: float = Field(0.0, description="Hz, informational")
    samples_per_epoch: int = Field(..., ge=1)
    symbols: List[str] = Field(..., min_length=2)
    trials: List[TrialManifest] = Field(default_factory=list)
    epoch_count: int = Field(..., ge=0)
    provenance: str = ""

    @property
    def channels(self) -> int:
        return len(self.channel_names)

    @property
    def symbol_set(self) -> SymbolSet:
        return SymbolSet(tuple(self.symbols))

    def check_references(self):
        """Every epoch index inside the payload and every event symbol inside the symbol set"""
        for t, trial in enumerate(self.trials):
            if len(trial.events) != len(trial.indices()):
                raise ShapeMismatch(f"trial {t} has {len(trial.events)} event lists for {len(trial.indices())} epochs")
            for k in trial.indices():
                if not 0 <= k < self.epoch_count:
                    raise ShapeMismatch(f"trial {t} references epoch {k}, session has {self.epoch_count}")
            for event in trial.events:
                if not event:
                    raise ShapeMismatch(f"trial {t} has an event highlighting no symbol")
                for s in event:
                    if not 0 <= s < len(self.symbols):
                        raise ShapeMismatch(f"trial {t} highlights symbol {s}, session has {len(self.symbols)}")
            if trial.true_symbol is not None and not 0 <= trial.true_symbol < len(self.symbols):
                raise ShapeMismatch(f"trial {t} has true symbol {trial.true_symbol} outside the symbol set")


def write_session(directory: PathLike, manifest: SessionManifest, epochs: np.ndarray) -> str:
    """Write manifest.json and epochs.f32le; epochs has shape (epoch_count, C, T)"""
    epochs = np.asarray(epochs)
    expected = (manifest.epoch_count, manifest.channels, manifest.samples_per_epoch)
    if epochs.shape != expected:
        raise ShapeMismatch(f"epochs of shape {epochs.shape}, manifest describes {expected}")
    if manifest.format_version != FORMAT_VERSION:
        raise FormatVersionUnsupported(f"cannot write format version {manifest.format_version}")
    manifest.check_references()

    directory = os.fspath(directory)
    os.makedirs(directory, exist_ok=True)
    payload = np.ascontiguousarray(epochs, dtype=PAYLOAD_DTYPE).tobytes()
    atomic_write_bytes(os.path.join(directory, PAYLOAD_FILE), payload)
    atomic_write_text(os.path.join(directory, MANIFEST_FILE), manifest.model_dump_json(indent=2))
    logger.info(f"Wrote session {manifest.session_id!r} ({manifest.epoch_count} epochs) to {directory}")
    return directory


def read_manifest(directory: PathLike) -> SessionManifest:
    path = os.path.join(os.fspath(directory), MANIFEST_FILE)
    try:
        with open(path, "r", encoding="utf-8") as f:
            raw = json.load(f)
    except (json.JSONDecodeError, UnicodeDecodeError) as e:
        raise InvalidConfig(f"{path}: manifest is not valid UTF-8 JSON: {e}") from e
    version = raw.get("format_version") if isinstance(raw, dict) else None
    if version != FORMAT_VERSION:
        raise FormatVersionUnsupported(f"{path}: format version {version!r}, supported: {FORMAT_VERSION}")
    try:
        manifest = SessionManifest.model_validate(raw)
    except ValidationError as e:
        raise InvalidConfig(f"{path}: malformed manifest: {e}") from e
    manifest.check_references()
    return manifest


def read_session(directory: PathLike) -> Tuple[SessionManifest, np.ndarray]:
    """Returns the manifest and the float32 epochs array of shape (epoch_count, C, T)"""
    manifest = read_manifest(directory)
    path = os.path.join(os.fspath(directory), PAYLOAD_FILE)
    shape = (manifest.epoch_count, manifest.channels, manifest.samples_per_epoch)
    expected = int(np.prod(shape)) * PAYLOAD_DTYPE.itemsize
    size = os.path.getsize(path)
    if size != expected:
        raise CorruptPayload(f"{path}: {size} bytes, manifest requires {expected}")
    epochs = np.fromfile(path, dtype=PAYLOAD_DTYPE).reshape(shape)
    return manifest, epochs


def session_to_trials(manifest: SessionManifest, epochs: np.ndarray) -> List[TrialRecord]:
    manifest.check_references()
    symbols = manifest.symbol_set
    trials = []
    for trial in manifest.trials:
        indices = trial.indices()
        events = tuple(StimulusEvent(k, frozenset(group)) for k, group in enumerate(trial.events))
        trials.append(TrialRecord(
            symbols=symbols,
            epochs=epochs[indices],
            events=events,
            true_symbol=trial.true_symbol,
        ))
    return trials


def load_trials(directory: PathLike) -> Tuple[SessionManifest, List[TrialRecord]]:
    manifest, epochs = read_session(directory)
    return manifest, session_to_trials(manifest, epochs)


def trials_to_session(
    trials: Sequence[TrialRecord],
    session_id: str = "session",
    sampling_rate: float = 0.0,
    channel_names: Optional[Sequence[str]] = None,
    provenance: str = "",
) -> Tuple[SessionManifest, np.ndarray]:
    """Concatenate trials into one epoch payload with contiguous epoch ranges"""
    if not trials:
        raise ShapeMismatch("no trials to store")
    first = trials[0]
    for trial in trials:
        if (trial.channels, trial.samples) != (first.channels, first.samples):
            raise ShapeMismatch("all trials of a session must share channels and samples")
        if trial.symbols != first.symbols:
            raise ShapeMismatch("all trials of a session must share the symbol set")

    entries = []
    start = 0
    for trial in trials:
        stop = start + trial.n_epochs
        entries.append(TrialManifest(
            epoch_range=(start, stop),
            events=[sorted(event.highlighted) for event in trial.events],
            true_symbol=trial.true_symbol,
        ))
        start = stop
    manifest = SessionManifest(
        session_id=session_id,
        channel_names=list(channel_names or [f"ch{c}" for c in range(first.channels)]),
        sampling_rate=sampling_rate,
        samples_per_epoch=first.samples,
        symbols=list(first.symbols),
        trials=entries,
        epoch_count=start,
        provenance=provenance,
    )
    epochs = np.concatenate([trial.epochs for trial in trials])
    return manifest, epochs


def decision_log_frame(
    session_id: str,
    decisions: Iterable[Decision],
    symbols: SymbolSet,
    config: DecoderConfig,
    true_symbols: Optional[Sequence[Optional[int]]] = None,
) -> pd.DataFrame:
    """Decision log rows in trial order with the fixed DECISION_LOG_COLUMNS header"""
    decisions = list(decisions)
    true_symbols = list(true_symbols) if true_symbols is not None else [None] * len(decisions)
    if len(true_symbols) != len(decisions):
        raise ShapeMismatch(f"{len(true_symbols)} true symbols for {len(decisions)} decisions")

    rows = []
    for decision, truth in zip(decisions, true_symbols):
        rows.append({
            "session_id": session_id,
            "trial_index": decision.trial_index,
            "predicted_symbol": symbols[decision.chosen],
            "true_symbol": symbols[truth] if truth is not None else None,
            "correct": (decision.chosen == truth) if truth is not None else None,
            "d_star": decision.distances[decision.chosen],
            "d_runner_up": decision.distances[decision.runner_up],
            "confidence": decision.confidence,
            "instant_confidence": decision.instant_confidence,
            "cumulative_confidence": decision.cumulative_confidence,
            "cumulative_instant_confidence": decision.cumulative_instant_confidence,
            "degenerate_flag": decision.degenerate_flag,
            "mean_strategy": config.mean_strategy.value,
            "covariance_kind": config.covariance_kind.value,
            "covariance_scope": config.covariance_scope.value,
            "instant_choice": symbols[decision.instant_choice],
            "reset_applied": decision.reset_applied,
        })
    frame = pd.DataFrame(rows, columns=DECISION_LOG_COLUMNS)
    frame["correct"] = frame["correct"].astype("boolean")
    return frame


def write_decision_log(path: PathLike, frames: Union[pd.DataFrame, Sequence[pd.DataFrame]]):
    if isinstance(frames, pd.DataFrame):
        frame = frames
    else:
        frame = pd.concat(list(frames), ignore_index=True) if frames else pd.DataFrame(columns=DECISION_LOG_COLUMNS)
    atomic_write_text(path, frame[DECISION_LOG_COLUMNS].to_csv(index=False, float_format="%.17g"))


def read_decision_log(path: PathLike) -> pd.DataFrame:
    text_columns = ["session_id", "predicted_symbol", "true_symbol", "mean_strategy",
                    "covariance_kind", "covariance_scope", "instant_choice"]
    frame = pd.read_csv(
        path,
        dtype={**{c: str for c in text_columns}, "correct": "boolean"},
        keep_default_na=False,
        na_values={"true_symbol": [""], "correct": [""]},
    )
    missing = [c for c in DECISION_LOG_COLUMNS if c not in frame.columns]
    if missing:
        raise ShapeMismatch(f"{path}: decision log lacks columns {missing}")
    return frame


@dataclass(frozen=True, eq=False)
class LdaWeights:
    """Epoch-level linear discriminant: target if w . x > threshold (x time-major)"""
    w: np.ndarray
    threshold: float
    channels: int
    samples: int
    mean_strategy: str = ""
    covariance_kind: str = ""
    covariance_scope: str = ""
    trials: int = 0

    def header(self) -> Dict[str, Any]:
        return {
            "format_version": FORMAT_VERSION,
            "dtype": LDA_DTYPE.str,
            "length": int(self.w.shape[0]),
            "channels": self.channels,
            "samples": self.samples,
            "layout": "time-major",
            "threshold": self.threshold,
            "mean_strategy": self.mean_strategy,
            "covariance_kind": self.covariance_kind,
            "covariance_scope": self.covariance_scope,
            "trials": self.trials,
        }

    def project(self, epochs: np.ndarray) -> np.ndarray:
        """Scores w . x for (n, C, T) epochs"""
        return flatten_epochs(epochs) @ self.w


def write_lda_weights(path: PathLike, weights: LdaWeights):
    """One JSON header line, then the weights as little-endian float64"""
    if weights.w.shape != (weights.channels * weights.samples,):
        raise ShapeMismatch(f"weights of shape {weights.w.shape} for {weights.channels}x{weights.samples} epochs")
    header = json.dumps(weights.header()).encode("utf-8") + b"\n"
    atomic_write_bytes(path, header + np.ascontiguousarray(weights.w, dtype=LDA_DTYPE).tobytes())


def read_lda_weights(path: PathLike) -> LdaWeights:
    with open(path, "rb") as f:
        header_line = f.readline()
        body = f.read()
    try:
        header = json.loads(header_line.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CorruptPayload(f"{path}: unreadable header: {e}") from e
    if header.get("format_version") != FORMAT_VERSION:
        raise FormatVersionUnsupported(f"{path}: format version {header.get('format_version')!r}")
    length = int(header["length"])
    if len(body) != length * LDA_DTYPE.itemsize:
        raise CorruptPayload(f"{path}: {len(body)} payload bytes, header requires {length * LDA_DTYPE.itemsize}")
    return LdaWeights(
        w=np.frombuffer(body, dtype=LDA_DTYPE).copy(),
        threshold=float(header["threshold"]),
        channels=int(header["channels"]),
        samples=int(header["samples"]),
        mean_strategy=header.get("mean_strategy", ""),
        covariance_kind=header.get("covariance_kind", ""),
        covariance_scope=header.get("covariance_scope", ""),
        trials=int(header.get("trials", 0)),
    )
