"""Acceptance ratios and element-level precision/recall."""

from __future__ import annotations

from collections import Counter
from dataclasses import asdict, dataclass, field
from typing import Iterable, Optional, Sequence

from ..errors import EmptyInput
from ..iogrammar.analysis import GrammarElements, commands_of
from .session import C2S, Trace


@dataclass(frozen=True)
class Ratio:
    accepted: int
    total: int

    @property
    def ratio(self) -> float:
        return self.accepted / self.total if self.total else 0.0

    def percent(self) -> str:
        return f"{100 * self.ratio:.1f}%"

    def to_json(self) -> dict:
        return {"accepted": self.accepted, "total": self.total, "ratio": self.ratio}


@dataclass(frozen=True)
class RouteRatio:
    overall: Ratio
    canonical: Ratio

    @property
    def quotient(self) -> Optional[float]:
        return self.canonical.ratio / self.overall.ratio if self.overall.ratio else None

    def to_json(self) -> dict:
        return {"overall": self.overall.to_json(), "canonical": self.canonical.to_json(), "quotient": self.quotient}


@dataclass(frozen=True)
class ElementScore:
    common: int
    ours: int
    gt: int

    @property
    def precision(self) -> float:
        return self.common / self.ours if self.ours else 0.0

    @property
    def recall(self) -> float:
        return self.common / self.gt if self.gt else 0.0

    def to_json(self) -> dict:
        return {**asdict(self), "precision": self.precision, "recall": self.recall}


@dataclass(frozen=True)
class MetricsReport:
    message_acceptance: Ratio
    trace_acceptance: Ratio
    rtcma: RouteRatio
    rtcta: RouteRatio
    elements: dict[str, ElementScore] = field(default_factory=dict)
    failure_cause_histogram: dict[str, int] = field(default_factory=dict)

    def check(self) -> None:
        for r in (self.message_acceptance, self.trace_acceptance):
            assert 0.0 <= r.ratio <= 1.0
        for rr in (self.rtcma, self.rtcta):
            assert rr.canonical.total <= rr.overall.total and rr.canonical.accepted <= rr.overall.accepted

    def to_json(self) -> dict:
        return {
            "message_acceptance": self.message_acceptance.to_json(),
            "trace_acceptance": self.trace_acceptance.to_json(),
            "rtcma": self.rtcma.to_json(),
            "rtcta": self.rtcta.to_json(),
            "elements": {k: v.to_json() for k, v in sorted(self.elements.items())},
            "failure_cause_histogram": dict(sorted(self.failure_cause_histogram.items())),
        }


def element_scores(ours: GrammarElements, gt: GrammarElements) -> dict[str, ElementScore]:
    out = {}
    for kind in GrammarElements.KINDS:
        a, b = getattr(ours, kind), getattr(gt, kind)
        out[kind] = ElementScore(len(a & b), len(a), len(b))
    return out


def _message_counts(traces: Iterable[Trace]) -> Ratio:
    issued = [e for t in traces for e in t.exchanges if e.direction == C2S and e.sent]
    return Ratio(sum(e.verdict == "accepted" for e in issued), len(issued))


def compute_metrics(
    traces: Sequence[Trace],
    ours: Optional[GrammarElements] = None,
    golden: Optional[GrammarElements] = None,
    canonical_routes: Sequence = (),
) -> MetricsReport:
    """MA, TA, their canonical-route restrictions and per-kind element scores.

    A trace lies on a canonical route when its MTP's command sequence equals
    one of ``canonical_routes`` (each an MTP or a command sequence).
    """
    if not traces:
        raise EmptyInput("no traces to score")
    routes = {tuple(commands_of(r)) for r in canonical_routes}
    canon = [t for t in traces if tuple(c.upper() for c in t.commands) in routes]
    ma = _message_counts(traces)
    ta = Ratio(sum(t.accepted for t in traces), len(traces))
    report = MetricsReport(
        ma,
        ta,
        RouteRatio(ma, _message_counts(canon)),
        RouteRatio(ta, Ratio(sum(t.accepted for t in canon), len(canon))),
        element_scores(ours, golden) if ours is not None and golden is not None else {},
        dict(Counter(t.failure_cause for t in traces if t.failure_cause)),
    )
    report.check()
    return report
