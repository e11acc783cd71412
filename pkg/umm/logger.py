from typing import Optional

from .core import SymbolSet
from .decoder import Decision


class Logger:
    """Console printer for replay decisions"""

    def __init__(self, session_id: str = "session", stream=None):
        self.session_id = session_id
        self.stream = stream

    def log_decision(self, decision: Decision, symbols: SymbolSet, true_symbol: Optional[int] = None):
        chosen = symbols[decision.chosen]
        if true_symbol is None:
            mark = "  "
        else:
            mark = "✅" if decision.chosen == true_symbol else "❌"
        line = (
            f"{mark} [{self.session_id}] trial {decision.trial_index:>3}: {chosen}"
            f" (runner-up {symbols[decision.runner_up]})"
            f" c={decision.confidence:.3f} c_inst={decision.instant_confidence:.3f}"
        )
        if true_symbol is not None and decision.chosen != true_symbol:
            line += f" true={symbols[true_symbol]}"
        if decision.degenerate_flag:
            line += " ⚠️ degenerate"
        if decision.reset_applied:
            line += " 🔄 reset"
        print(line, file=self.stream)
