"""Error classes for the repair loop and failure-cause labels for reports."""

from __future__ import annotations

from typing import Iterable, Optional, Sequence

from ..iogrammar.analysis import MandatedForm, missing_forms
from ..iogrammar.model import IOGrammar
from .session import C2S, SutCapabilities, Trace

GSYN, TMISM, GMISS = "GSyn", "TMism", "GMiss"
ERROR_CLASSES = (GSYN, TMISM, GMISS)
FAILURE_CAUSES = ("NeedsTls", "ImplMissing", "DataState", "GrammarBug")


def classify_error(trace: Trace, g: IOGrammar, mandated_forms: Iterable[MandatedForm] = (),
                   missing: Optional[Sequence[MandatedForm]] = None) -> Optional[str]:
    """GSyn > TMism > GMiss > None.

    * GSyn: some reply failed to parse.
    * TMism: a constraint was violated, a reply never came or the session
      missed its terminal state.
    * GMiss: the trace is clean but a mandated form cannot be generated
      (an MTP the grammar cannot plan at all also lands here).

    ``missing`` may carry a precomputed ``missing_forms(g, mandated_forms)``.
    """
    verdicts = [e.verdict for e in trace.exchanges]
    if "parse_failure" in verdicts:
        return GSYN
    if trace.generatable and (
        "constraint_violation" in verdicts
        or "timeout" in verdicts
        or "disconnect" in verdicts
        or not trace.terminal_state_reached
    ):
        return TMISM
    if missing is None:
        missing = missing_forms(g, mandated_forms)
    if not trace.generatable or missing:
        return GMISS
    return None


def rejected_command(trace: Trace) -> Optional[str]:
    i = trace.first_failure()
    if i is None:
        return None
    for e in reversed(trace.exchanges[: i + 1]):
        if e.direction == C2S and e.data:
            word = e.data.split(b" ", 1)[0].strip()
            return word.decode("latin-1").upper()
    return None


def label_failure_cause(trace: Trace, caps: SutCapabilities = SutCapabilities()) -> Optional[str]:
    """Why the SUT rejected the session, judged from the rejected exchange."""
    i = trace.first_failure()
    if i is None:
        return None if trace.terminal_state_reached else "GrammarBug"
    cmd = rejected_command(trace)
    if cmd is not None and cmd in {c.upper() for c in caps.tls_required}:
        return "NeedsTls"
    reply = ""
    for e in trace.exchanges[i:]:
        if e.direction != C2S:
            reply = e.data.decode("latin-1").lower()
            break
    if any(m in reply for m in caps.unrecognized_markers):
        return "ImplMissing"
    if any(m in reply for m in caps.data_state_markers):
        return "DataState"
    return "GrammarBug"
