"""
Replay Orchestration
Runs the UMM decoder over recorded sessions: strictly sequential inside a
session, optionally parallel across sessions
"""
from typing import Any, Dict, List, Optional, Sequence, Tuple
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import pandas as pd

from umm import Decision, Decoder, DecoderConfig, Logger, SymbolSet, TrialRecord, UMMError
from umm.session_io import decision_log_frame
from metrics import ReplayTimer, get_replay_timer

logger = logging.getLogger(__name__)


@dataclass
class SessionResult:
    """Decisions of one replayed session; error is set if the replay stopped early"""
    session_id: str
    symbols: SymbolSet
    config: DecoderConfig
    decoder: Decoder
    decisions: List[Decision] = field(default_factory=list)
    true_symbols: List[Optional[int]] = field(default_factory=list)
    error: Optional[BaseException] = None
    elapsed: float = 0.0

    @property
    def ok(self) -> bool:
        return self.error is None

    @property
    def labeled(self) -> bool:
        return bool(self.true_symbols) and all(t is not None for t in self.true_symbols)

    def frame(self) -> pd.DataFrame:
        return decision_log_frame(self.session_id, self.decisions, self.symbols, self.config, self.true_symbols)


class ReplayOrchestrator:
    """
    Offline replay of sessions through fresh decoders
    Each session gets its own Decoder; sessions never share state
    """

    def __init__(
        self,
        config: Optional[DecoderConfig] = None,
        workers: int = 1,
        print_decisions: bool = False,
        timer: Optional[ReplayTimer] = None,
    ):
        self.config = config or DecoderConfig()
        self.workers = max(1, int(workers))
        self.print_decisions = print_decisions
        self.timer = timer or get_replay_timer()

    def replay_session(self, session_id: str, trials: Sequence[TrialRecord]) -> SessionResult:
        """Classify trials in order; the decoder only ever sees unlabeled copies"""
        if not trials:
            raise UMMError(f"session {session_id!r} has no trials")
        decoder = Decoder(self.config, on_stage=self.timer.record)
        printer = Logger(session_id) if self.print_decisions else None
        result = SessionResult(session_id=session_id, symbols=trials[0].symbols, config=self.config, decoder=decoder)
        start_time = time.perf_counter()
        try:
            for trial in trials:
                call_start = time.perf_counter()
                decision = decoder.process(trial.without_labels())
                self.timer.record("trial", time.perf_counter() - call_start)
                result.decisions.append(decision)
                result.true_symbols.append(trial.true_symbol)
                if printer is not None:
                    printer.log_decision(decision, trial.symbols, trial.true_symbol)
        except UMMError as e:
            logger.error(f"Replay of session {session_id!r} stopped at trial {len(result.decisions)}: {e}")
            result.error = e
        result.elapsed = time.perf_counter() - start_time
        self.timer.record("session", result.elapsed)
        self.timer.record_session(session_id, len(result.decisions), result.elapsed, result.ok)
        logger.info(
            f"Session {session_id!r}: {len(result.decisions)} trials in {result.elapsed:.2f}s"
        )
        return result

    def replay(self, sessions: Sequence[Tuple[str, Sequence[TrialRecord]]]) -> List[SessionResult]:
        """Results come back in input order regardless of worker count"""
        if self.workers == 1 or len(sessions) < 2:
            return [self.replay_session(session_id, trials) for session_id, trials in sessions]
        with ThreadPoolExecutor(max_workers=self.workers) as pool:
            futures = [pool.submit(self.replay_session, session_id, trials) for session_id, trials in sessions]
            return [future.result() for future in futures]

    def get_statistics(self) -> Dict[str, Any]:
        return self.timer.summary()
