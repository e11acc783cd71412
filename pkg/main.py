# main.py: unified CLI for synthetic sessions, offline replay, toy data, LDA export and session info
import os
import sys
import errno
import json
import logging
import argparse
from typing import List, Literal, Optional, Sequence, Tuple

import pandas as pd
from pydantic import BaseModel, Field, ValidationError, model_validator

from umm import (
    Centering,
    CovarianceKind,
    CovarianceScope,
    DecoderConfig,
    MeanStrategy,
    InvalidConfig,
    MissingLabels,
    TrialRecord,
    UMMError,
    count_unconstrained_assignments,
    generate_session,
    generate_toy_2d,
    load_preset,
    load_trials,
    trials_to_session,
    write_decision_log,
    write_lda_weights,
    write_session,
)
from umm.session_io import MANIFEST_FILE, LdaWeights, atomic_write_text
from umm.synth import preset_names, with_seed
from metrics import compute_metrics, get_replay_timer, reset_replay_timer, write_metrics
from orchestrator import ReplayOrchestrator, SessionResult

logger = logging.getLogger("umm.cli")


class RunSpec(BaseModel):
    """Validated command-line flags; built before any computation"""
    command: Literal["replay", "synth", "toy", "lda-export", "info"]
    data: Optional[str] = None
    out: Optional[str] = None
    seed: int = 0
    verbose: bool = False

    # decoder axes
    cov: CovarianceKind = CovarianceKind.BLOCK_TOEPLITZ
    cov_scope: CovarianceScope = CovarianceScope.POOLED_ALL
    mean: MeanStrategy = MeanStrategy.CONFIDENCE
    taper_band: Optional[int] = Field(None, ge=1)
    centering: Centering = Centering.GRAND
    degeneracy_warmup: int = Field(10, ge=1)
    degeneracy_ratio: float = Field(1.1, gt=0)
    reset_on_degenerate: bool = False
    workers: int = Field(1, ge=1)
    print_decisions: bool = False

    # synth
    preset: str = "visual-random"
    snr: Optional[float] = Field(None, ge=0)
    n_trials: Optional[int] = Field(None, ge=1)
    n_sessions: int = Field(1, ge=1)
    channels: Optional[int] = Field(None, ge=1)
    samples: Optional[int] = Field(None, ge=1)
    ar: Optional[float] = Field(None, ge=0, lt=1)

    # toy
    draws: int = Field(25, ge=2)
    separation: float = Field(2.0, ge=0)

    @model_validator(mode="after")
    def _required_paths(self):
        if self.command in ("replay", "lda-export") and not self.data:
            raise ValueError(f"{self.command} needs --data")
        if self.command in ("synth", "toy", "lda-export") and not self.out:
            raise ValueError(f"{self.command} needs --out")
        return self

    def decoder_config(self) -> DecoderConfig:
        return DecoderConfig(
            mean_strategy=self.mean,
            covariance_kind=self.cov,
            covariance_scope=self.cov_scope,
            taper_bandwidth=self.taper_band,
            centering=self.centering,
            degeneracy_warmup=self.degeneracy_warmup,
            degeneracy_ratio=self.degeneracy_ratio,
            reset_on_degenerate=self.reset_on_degenerate,
        )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="umm", description="Unsupervised mean-difference maximization ERP decoder")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser):
        p.add_argument("--seed", type=int, default=0, help="random seed")
        p.add_argument("--verbose", action="store_true", help="debug logging")

    def decoder_flags(p: argparse.ArgumentParser):
        p.add_argument("--data", required=True, help="session directory, or a directory of session directories")
        p.add_argument("--cov", choices=[k.value for k in CovarianceKind], default=CovarianceKind.BLOCK_TOEPLITZ.value)
        p.add_argument("--cov-scope", dest="cov_scope", choices=[s.value for s in CovarianceScope],
                       default=CovarianceScope.POOLED_ALL.value)
        p.add_argument("--mean", choices=[m.value for m in MeanStrategy], default=MeanStrategy.CONFIDENCE.value)
        p.add_argument("--taper-band", dest="taper_band", type=int, default=None, help="linear lag taper bandwidth")
        p.add_argument("--centering", choices=[c.value for c in Centering], default=Centering.GRAND.value)
        p.add_argument("--degeneracy-warmup", dest="degeneracy_warmup", type=int, default=10)
        p.add_argument("--degeneracy-ratio", dest="degeneracy_ratio", type=float, default=1.1)
        p.add_argument("--reset-on-degenerate", dest="reset_on_degenerate", action="store_true")
        p.add_argument("--workers", type=int, default=1, help="sessions replayed in parallel")
        common(p)

    replay = sub.add_parser("replay", help="replay sessions through the decoder, write decision log + metrics")
    decoder_flags(replay)
    replay.add_argument("--out", default="decisions.csv", help="decision log CSV path")
    replay.add_argument("--print-decisions", dest="print_decisions", action="store_true")

    export = sub.add_parser("lda-export", help="replay, then write the accumulated LDA weights")
    decoder_flags(export)
    export.add_argument("--out", required=True, help="weight file path")

    synth = sub.add_parser("synth", help="write synthetic session(s)")
    synth.add_argument("--preset", choices=preset_names(), default="visual-random")
    synth.add_argument("--snr", type=float, default=None)
    synth.add_argument("--n-trials", dest="n_trials", type=int, default=None)
    synth.add_argument("--n-sessions", dest="n_sessions", type=int, default=1)
    synth.add_argument("--channels", type=int, default=None)
    synth.add_argument("--samples", type=int, default=None)
    synth.add_argument("--ar", type=float, default=None, help="AR(1) noise coefficient")
    synth.add_argument("--out", required=True, help="session directory")
    common(synth)

    toy = sub.add_parser("toy", help="write the 2-D four-letter toy data as CSV")
    toy.add_argument("--draws", type=int, default=25, help="draws per letter")
    toy.add_argument("--separation", type=float, default=2.0)
    toy.add_argument("--out", required=True, help="CSV path")
    common(toy)

    info = sub.add_parser("info", help="session statistics and assignment counts")
    info.add_argument("--data", default=None)
    common(info)
    return parser


def discover_sessions(path: str) -> List[str]:
    """A session directory itself, or its immediate sub-directories holding a manifest"""
    if not os.path.isdir(path):
        raise FileNotFoundError(errno.ENOENT, "session directory not found", path)
    if os.path.exists(os.path.join(path, MANIFEST_FILE)):
        return [path]
    found = sorted(
        os.path.join(path, name) for name in os.listdir(path)
        if os.path.exists(os.path.join(path, name, MANIFEST_FILE))
    )
    if not found:
        raise FileNotFoundError(errno.ENOENT, f"no {MANIFEST_FILE} in or below", path)
    return found


def load_sessions(path: str) -> List[Tuple[str, List[TrialRecord]]]:
    sessions = []
    for directory in discover_sessions(path):
        manifest, trials = load_trials(directory)
        sessions.append((manifest.session_id, trials))
    return sessions


def _metrics_path(out: str) -> str:
    return os.path.splitext(out)[0] + ".metrics.json"


def _replay(spec: RunSpec) -> List[SessionResult]:
    sessions = load_sessions(spec.data)
    reset_replay_timer()
    config = spec.decoder_config()
    logger.info(f"Replaying {len(sessions)} session(s) with {config.describe()}")
    orchestrator = ReplayOrchestrator(config, workers=spec.workers, print_decisions=spec.print_decisions)
    return orchestrator.replay(sessions)


def _first_error(results: Sequence[SessionResult]) -> Optional[BaseException]:
    return next((r.error for r in results if r.error is not None), None)


def cmd_replay(spec: RunSpec) -> int:
    results = _replay(spec)
    write_decision_log(spec.out, [r.frame() for r in results])
    print(f"[replay] decision log: {spec.out}")

    report = None
    if all(r.labeled for r in results if r.decisions):
        try:
            report = compute_metrics([r.frame() for r in results])
        except MissingLabels as e:
            logger.warning(f"No metrics: {e}")
    else:
        logger.warning("Sessions without true symbols; writing timing only")
    write_metrics(_metrics_path(spec.out), report, get_replay_timer().summary())
    if report is not None:
        for session_id, accuracy in report.per_session_accuracy.items():
            print(f"[replay] {session_id}: accuracy {accuracy:.4f}")
        print(f"[replay] pooled accuracy {report.pooled_accuracy:.4f} over {report.n_trials} trials")

    error = _first_error(results)
    if error is not None:
        raise error
    return 0


def cmd_lda_export(spec: RunSpec) -> int:
    results = _replay(spec)
    error = _first_error(results)
    if error is not None:
        raise error
    stem, ext = os.path.splitext(spec.out)
    for result in results:
        w, threshold = result.decoder.lda_weights()
        state = result.decoder.get_state()
        weights = LdaWeights(
            w=w,
            threshold=threshold,
            channels=state.pool.channels,
            samples=state.pool.samples,
            mean_strategy=result.config.mean_strategy.value,
            covariance_kind=result.config.covariance_kind.value,
            covariance_scope=result.config.covariance_scope.value,
            trials=state.trial_count,
        )
        path = spec.out if len(results) == 1 else f"{stem}_{result.session_id}{ext or '.lda'}"
        write_lda_weights(path, weights)
        print(f"[lda-export] {result.session_id}: {w.shape[0]} weights, threshold {threshold:.6g} -> {path}")
    return 0


def cmd_synth(spec: RunSpec) -> int:
    config = load_preset(
        spec.preset,
        snr=spec.snr,
        n_trials=spec.n_trials,
        channels=spec.channels,
        samples=spec.samples,
        ar_coefficient=spec.ar,
        seed=spec.seed,
    )
    for i in range(spec.n_sessions):
        session_config = with_seed(config, spec.seed + i)
        session_id = f"{spec.preset}-s{spec.seed + i}"
        directory = spec.out if spec.n_sessions == 1 else os.path.join(spec.out, session_id)
        provenance = json.dumps({
            "generator": "umm.synth",
            "preset": spec.preset,
            "seed": session_config.seed,
            "snr": session_config.snr,
            "ar_coefficient": session_config.ar_coefficient,
            "code": session_config.code.value,
        })
        manifest, epochs = trials_to_session(generate_session(session_config), session_id=session_id,
                                             provenance=provenance)
        write_session(directory, manifest, epochs)
        print(f"[synth] {session_id}: {len(manifest.trials)} trials, {manifest.epoch_count} epochs -> {directory}")
    return 0


def cmd_toy(spec: RunSpec) -> int:
    toy = generate_toy_2d(seed=spec.seed, draws_per_letter=spec.draws, separation=spec.separation)
    frame = pd.DataFrame(toy.rows(), columns=["panel", "letter", "x", "y", "kind"])
    atomic_write_text(spec.out, frame.to_csv(index=False, float_format="%.17g"))
    print(f"[toy] {len(toy.points)} points, decoded letter {toy.decoded} -> {spec.out}")
    return 0


def cmd_info(spec: RunSpec) -> int:
    rows = []
    if spec.data:
        for session_id, trials in load_sessions(spec.data):
            if not trials:
                continue
            first = trials[0]
            n_plus = int(first.target_counts.max())
            rows.append({
                "session": session_id,
                "trials": len(trials),
                "channels": first.channels,
                "samples": first.samples,
                "symbols": first.symbols.count,
                "epochs_per_trial": first.n_epochs,
                "targets_per_symbol": n_plus,
                "balanced": all(t.balanced for t in trials),
                "labeled": all(t.true_symbol is not None for t in trials),
                "assignments": count_unconstrained_assignments(first.n_epochs, n_plus),
            })
    else:
        for name in preset_names():
            config = load_preset(name)
            rows.append({
                "preset": name,
                "symbols": config.n_symbols,
                "epochs_per_trial": config.n_epochs,
                "targets_per_symbol": config.n_targets,
                "assignments": count_unconstrained_assignments(config.n_epochs, config.n_targets),
            })
    table = pd.DataFrame(rows)
    print(table.to_string(index=False))
    print("[info] 'assignments' counts target sets without the one-common-symbol constraint;"
          " the decoder only ever scores 'symbols' hypotheses")
    return 0


HANDLERS = {
    "replay": cmd_replay,
    "synth": cmd_synth,
    "toy": cmd_toy,
    "lda-export": cmd_lda_export,
    "info": cmd_info,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)

    try:
        spec = RunSpec(**vars(args))
        spec.decoder_config()
    except (ValidationError, InvalidConfig) as e:
        print(f"[error] invalid arguments: {e}", file=sys.stderr)
        return 2

    logging.basicConfig(
        level=logging.DEBUG if spec.verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        return HANDLERS[spec.command](spec)
    except (UMMError, OSError) as e:
        print(f"[error] {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
