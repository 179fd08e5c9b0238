"""Session execution, failure classification and metrics."""

from .classify import ERROR_CLASSES, GMISS, GSYN, TMISM, classify_error, label_failure_cause
from .metrics import MetricsReport, compute_metrics, element_scores
from .mockpop3 import MockConfig, MockPop3Server, mock_pop3_server
from .session import Exchange, SutCapabilities, SutConfig, Trace, run_session

__all__ = [
    "ERROR_CLASSES", "GMISS", "GSYN", "TMISM", "classify_error", "label_failure_cause",
    "MetricsReport", "compute_metrics", "element_scores",
    "MockConfig", "MockPop3Server", "mock_pop3_server",
    "Exchange", "SutCapabilities", "SutConfig", "Trace", "run_session",
]
