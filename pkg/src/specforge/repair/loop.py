"""Diagnose, localize, patch, re-test: the repair loop."""

from __future__ import annotations

import csv
import difflib
import json
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Literal as Lit, Optional, Sequence

from pydantic import BaseModel, ConfigDict, Field, ValidationError

from ..errors import GrammarError, LocalizationFailure, ParseFailure, PatchRejected, SchemaViolation, UnresolvableFieldRef
from ..graph import Mtp
from ..harness.classify import GMISS, GSYN, TMISM, classify_error
from ..harness.session import C2S, SutConfig, Trace, run_session
from ..ingest import Provenance, SectionRecord
from ..iogrammar.analysis import MandatedForm, missing_forms
from ..iogrammar.constraints import fields_of, resolve_field
from ..iogrammar.matcher import parse_message
from ..iogrammar.model import IOGrammar
from ..iogrammar.text import parse_grammar, rule_text, serialize_grammar
from ..llm import GENERATE_TEMPERATURE, LlmProvider, build_request, call_with_retry
from ..retrieve import build_index, rank, tokenize
from ..synth import Patch, PatchEntry, apply_patch, touched_rules
from .editscript import EditScript, abstract_tokens, inline_alternatives, lexeme_vocabulary, min_edit_script, reply_tokens

log = logging.getLogger(__name__)

DEFAULT_BUDGET = 7
PRIORITY = (GSYN, TMISM, GMISS)
KIND_FOR_CLASS = {
    GSYN: ("rewrite_production",),
    TMISM: ("add_constraint", "modify_constraint"),
    GMISS: ("add_alternative",),
}
CONVERGED, BUDGET_EXHAUSTED = "converged", "budget_exhausted"
FIX_MAX_TOKENS = 2000


# --- localization -----------------------------------------------------------------

@dataclass(frozen=True)
class Localization:
    error_class: str
    target_rule: str
    exchange_index: Optional[int]
    grammar_line: Optional[int]
    current_snippet: str
    expected_snippet: str
    source_tokens: tuple[str, ...] = ()
    target_tokens: tuple[str, ...] = ()
    observed: str = ""
    evidence: str = ""
    form: Optional[MandatedForm] = None


_OWNER_RE = re.compile(r"(?:^|; )<([A-Za-z_][A-Za-z0-9_]*)>: ")


def dispatcher_rule(g: IOGrammar) -> Optional[str]:
    """The untagged rule choosing between the most client-message exchanges."""
    def has_client(name):
        return g.has_rule(name) and any(r.party == "Client" for a in g.rule(name).alternatives for r in a.refs())

    best, score = None, 0
    for r in g.rules:
        n = len({ref.name for a in r.alternatives for ref in a.refs() if ref.party is None and has_client(ref.name)})
        if n > score and len(r.alternatives) > 1:
            best, score = r.name, n
    return best


def _closest(source_alts: list[list[str]], target: list[str]) -> list[str]:
    if not source_alts:
        return []
    return min(source_alts, key=lambda s: (min_edit_script(s, target).cost, len(s)))


def _violation_values(g: IOGrammar, trace: Trace, i: int, owner: str) -> list[str]:
    """Concrete values of the violated constraint's fields, read from the failing exchange."""
    if not g.has_rule(owner):
        return []
    fields = []
    for c in g.rule(owner).constraints:
        fields.extend(f for f in fields_of(c.expr) if f not in fields)
    trees = []
    prior = [x for x in reversed(trace.exchanges[:i]) if x.direction == C2S][:1]
    for e in [trace.exchanges[i], *prior]:
        if e.nonterminal and g.defines(e.nonterminal):
            try:
                trees.append(parse_message(g, e.nonterminal, e.data))
            except ParseFailure:
                pass
    out = []
    for f in fields:
        for t in trees:
            try:
                node = resolve_field(t, f, t)
            except UnresolvableFieldRef:
                continue
            out.append(f"<{f.name}> = {node.text()!r}")
            break
    return out


def localize(trace: Trace, g: IOGrammar, err: str, mandated_forms: Sequence[MandatedForm] = (),
             records: Sequence[SectionRecord] = ()) -> Localization:
    if err is None:
        raise LocalizationFailure("nothing to localize: the trace has no error")
    if err == GMISS:
        return _localize_miss(trace, g, mandated_forms, records)
    # a client exchange only mirrors its reply's verdict; blame the reply
    bad = [k for k, e in enumerate(trace.exchanges) if e.verdict != "accepted"]
    replies = [k for k in bad if trace.exchanges[k].direction != C2S]
    i = replies[0] if replies else (bad[0] if bad else len(trace.exchanges) - 1)
    if i < 0:
        raise LocalizationFailure("trace has no exchanges")
    ex = trace.exchanges[i]
    target = ex.nonterminal
    values: list[str] = []
    if err == TMISM and ex.verdict == "constraint_violation":
        owners = _OWNER_RE.findall(ex.detail)
        if owners:
            target = owners[0]
        values = _violation_values(g, trace, i, target)
    if not target or not g.has_rule(target):
        raise LocalizationFailure(f"exchange {i} has no expected nonterminal in the grammar")
    rule = g.rule(target)
    observed = ex.data.decode("latin-1")
    vocab = lexeme_vocabulary(g, ex.nonterminal or target)
    tgt = reply_tokens(g, ex.nonterminal, ex.data, vocab) if ex.nonterminal and g.defines(ex.nonterminal) else abstract_tokens(g, ex.data, vocab)
    src_alts = inline_alternatives(g, ex.nonterminal if ex.nonterminal and g.has_rule(ex.nonterminal) else target)
    src = _closest(src_alts, tgt)
    expected = " ".join(tgt)
    if values:
        expected += "\nviolating values: " + ", ".join(values) + "\nviolated: " + ex.detail
    return Localization(
        err, target, i, rule.loc.line if rule.loc else None, rule_text(rule), expected,
        tuple(src), tuple(tgt), observed, _evidence(records, [target, ex.nonterminal or "", observed]),
    )


def _localize_miss(trace: Trace, g: IOGrammar, forms: Sequence[MandatedForm], records) -> Localization:
    missing = missing_forms(g, forms)
    target = dispatcher_rule(g)
    if target is None:
        raise LocalizationFailure("no rule dispatches between exchanges")
    rule = g.rule(target)
    if missing:
        form = missing[0]
        tgt = abstract_tokens(g, form.example)
        expected = f"{form.command} form {form.example.decode('latin-1')!r} on route {' '.join(form.route)}"
        evidence = (form.evidence + "\n\n" if form.evidence else "") + _evidence(records, [form.command])
        observed = form.example.decode("latin-1")
    else:  # an MTP the grammar cannot plan
        form = None
        cmds = trace.commands
        tgt = list(cmds)
        expected = "exchange sequence " + " ".join(cmds)
        evidence = _evidence(records, list(cmds))
        observed = ""
    src = _closest([[str(r) for r in a.refs()] for a in rule.alternatives], tgt)
    return Localization(
        GMISS, target, None, rule.loc.line if rule.loc else None, rule_text(rule), expected,
        tuple(src), tuple(tgt), observed, evidence, form,
    )


def _evidence(records: Sequence[SectionRecord], terms: Sequence[str], k: int = 2) -> str:
    if not records:
        return ""
    index = build_index(list(records))
    words = [t for term in terms for t in tokenize(term.replace("_", " "))]
    by_ref = {r.ref: r for r in records}
    out = []
    for ref, _ in rank(index, words, k) if words else []:
        r = by_ref[ref]
        out.append(f"[{r.rfc_id} section {r.section_id}] {r.title}\n{r.text}")
    return "\n\n".join(out)


# --- fix reports --------------------------------------------------------------------

class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class _Prov(_Strict):
    rfc_id: str
    section_id: str
    paragraph_indices: list[int] = Field(min_length=1)


class _Entry(_Strict):
    target_rule: str
    kind: Lit["rewrite_production", "add_alternative", "add_constraint", "modify_constraint"]
    new_text: str
    provenance: Optional[_Prov]
    rationale: str


class _Loc(_Strict):
    grammar_line: Optional[int]
    exchange_index: Optional[int]


class _PatchModel(_Strict):
    entries: list[_Entry] = Field(min_length=1)


class _Report(_Strict):
    error_class: Lit["GSyn", "TMism", "GMiss"]
    target_rule: str
    location: _Loc
    current_snippet: str
    expected_snippet: str
    reason: str
    patch: _PatchModel


@dataclass(frozen=True)
class FixReport:
    error_class: str
    target_rule: str
    location: dict
    current_snippet: str
    expected_snippet: str
    reason: str
    patch: Patch

    def __post_init__(self):
        if not self.patch.entries:
            raise ValueError("a fix report needs at least one patch entry")

    def to_json(self) -> dict:
        return {
            "error_class": self.error_class,
            "target_rule": self.target_rule,
            "location": dict(self.location),
            "current_snippet": self.current_snippet,
            "expected_snippet": self.expected_snippet,
            "reason": self.reason,
            "patch": self.patch.to_json(),
        }

    @classmethod
    def from_json(cls, d: dict) -> "FixReport":
        return cls(d["error_class"], d["target_rule"], d["location"], d["current_snippet"], d["expected_snippet"],
                   d["reason"], Patch.from_json(d["patch"]))


def fix_schema(loc: Localization, g: IOGrammar):
    """Validator for fix reports: shape, class/kind agreement and minimal change."""

    def check(text: str) -> FixReport:
        body = text.strip()
        if body.startswith("```"):
            body = body.strip("`").removeprefix("json").strip()
        try:
            rep = _Report.model_validate(json.loads(body))
        except (json.JSONDecodeError, ValidationError) as exc:
            raise SchemaViolation(f"fix report rejected: {str(exc).splitlines()[0]}", raw=text) from None
        if rep.error_class != loc.error_class:
            raise SchemaViolation(f"fix report is for {rep.error_class}, expected {loc.error_class}", raw=text)
        for e in rep.patch.entries:
            if e.kind not in KIND_FOR_CLASS[loc.error_class]:
                raise SchemaViolation(f"{e.kind} does not repair a {loc.error_class} failure", raw=text)
            if e.target_rule != loc.target_rule:
                raise SchemaViolation(f"minimal change policy: patch touches <{e.target_rule}>, localized <{loc.target_rule}>", raw=text)
            if e.kind in ("rewrite_production", "add_alternative"):
                try:
                    frag = parse_grammar(e.new_text, strict=False)
                except GrammarError as exc:
                    raise SchemaViolation(f"patch text does not parse: {exc}", raw=text) from None
                for r in frag.rules:
                    if r.name != e.target_rule and g.has_rule(r.name):
                        raise SchemaViolation(f"minimal change policy: patch also rewrites <{r.name}>", raw=text)
        entries = tuple(
            PatchEntry(e.target_rule, e.kind, e.new_text,
                       Provenance(e.provenance.rfc_id, e.provenance.section_id, tuple(e.provenance.paragraph_indices)) if e.provenance else None,
                       e.rationale)
            for e in rep.patch.entries
        )
        return FixReport(rep.error_class, rep.target_rule, rep.location.model_dump(), rep.current_snippet,
                         rep.expected_snippet, rep.reason, Patch(entries))

    return check


def fix_request(loc: Localization, script: EditScript, g: IOGrammar, model_id: str):
    payload = {
        "error_class": loc.error_class,
        "target_rule": loc.target_rule,
        "location": {"grammar_line": loc.grammar_line, "exchange_index": loc.exchange_index},
        "current_snippet": loc.current_snippet,
        "expected_snippet": loc.expected_snippet,
        "observed": loc.observed,
        "edit_script": [str(op) for op in script.ops],
        "evidence": loc.evidence,
        "grammar": serialize_grammar(g),
    }
    if loc.form is not None:
        payload["mandated_form"] = loc.form.to_json()
    text = json.dumps(payload, indent=1, sort_keys=True, ensure_ascii=False)
    return build_request("fix", text, model_id=model_id, temperature=GENERATE_TEMPERATURE, max_tokens=FIX_MAX_TOKENS)


def generate_fix(provider: LlmProvider, loc: Localization, script: EditScript, g: IOGrammar,
                 model_id: str = "gpt-4") -> FixReport:
    return call_with_retry(provider, fix_request(loc, script, g, model_id), fix_schema(loc, g))


# --- round logs -----------------------------------------------------------------------

OUTCOMES = ("fixed", GSYN, TMISM, GMISS)


@dataclass(frozen=True)
class RoundLog:
    round: int
    at_risk: int
    fixed: int = 0
    gsyn: int = 0
    tmism: int = 0
    gmiss: int = 0

    def shares(self) -> dict[str, float]:
        if not self.at_risk:
            return {k: 0.0 for k in ("fixed", "gsyn", "tmism", "gmiss")}
        return {k: getattr(self, k) / self.at_risk for k in ("fixed", "gsyn", "tmism", "gmiss")}

    def check(self) -> None:
        assert self.fixed + self.gsyn + self.tmism + self.gmiss == self.at_risk


_COL = {"fixed": "fixed", GSYN: "gsyn", TMISM: "tmism", GMISS: "gmiss"}


def aggregate_rounds(outcomes: Sequence[Sequence[str]]) -> list[RoundLog]:
    """Per-round counts over several grammars; ``outcomes[k]`` lists grammar
    k's outcome after each of its rounds."""
    rounds = max((len(o) for o in outcomes), default=0)
    logs = []
    for r in range(rounds):
        counts = {"fixed": 0, "gsyn": 0, "tmism": 0, "gmiss": 0}
        at_risk = 0
        for o in outcomes:
            if len(o) > r:
                at_risk += 1
                counts[_COL[o[r]]] += 1
        log_ = RoundLog(r + 1, at_risk, **counts)
        log_.check()
        logs.append(log_)
    return logs


def write_rounds_csv(path, logs: Sequence[RoundLog]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["round", "at_risk", "fixed", "gsyn", "tmism", "gmiss"])
        for lg in logs:
            w.writerow([lg.round, lg.at_risk, lg.fixed, lg.gsyn, lg.tmism, lg.gmiss])
    return path


# --- the loop -------------------------------------------------------------------------

@dataclass
class Evaluation:
    traces: list[Trace]
    classes: list[Optional[str]]

    @property
    def error(self) -> Optional[tuple[str, Trace]]:
        for cls in PRIORITY:
            for t, c in zip(self.traces, self.classes):
                if c == cls:
                    return cls, t
        return None


def evaluate(g: IOGrammar, mtps: Sequence[Mtp], sut: SutConfig, seeds: Sequence[int],
             forms: Sequence[MandatedForm] = (), skip: frozenset = frozenset()) -> Evaluation:
    traces, classes = [], []
    missing = missing_forms(g, forms)
    for i, m in enumerate(mtps):
        if i in skip:
            continue
        for s in seeds:
            t = run_session(g, m, sut, s)
            traces.append(t)
            classes.append(classify_error(t, g, forms, missing))
    if not traces and missing:
        traces.append(Trace([], None, True))
        classes.append(GMISS)
    return Evaluation(traces, classes)


@dataclass
class RepairResult:
    grammar: IOGrammar
    status: str
    outcomes: list[str] = field(default_factory=list)
    reports: list[Optional[FixReport]] = field(default_factory=list)
    grammars: list[IOGrammar] = field(default_factory=list)
    final: Optional[Evaluation] = None

    @property
    def rounds(self) -> list[RoundLog]:
        return aggregate_rounds([self.outcomes])


def repair_loop(
    g0: IOGrammar,
    mtps: Sequence[Mtp],
    sut: SutConfig,
    provider: LlmProvider,
    budget: int = DEFAULT_BUDGET,
    *,
    mandated_forms: Sequence[MandatedForm] = (),
    records: Sequence[SectionRecord] = (),
    seeds: Sequence[int] = (0, 1, 2),
    model_id: str = "gpt-4",
    per_mtp_cap: Optional[int] = None,
    run_dir=None,
    grammar_dir=None,
    emit: Optional[Callable[..., None]] = None,
) -> RepairResult:
    """Repair ``g0`` until every MTP session is accepted and no mandated
    form is missing, or until ``budget`` rounds have been spent.

    Each round handles the single highest-priority failure.  A rejected
    patch (or an unusable fix report) costs the round and leaves the
    grammar unchanged.
    """
    if budget < 1:
        raise ValueError("budget must be >= 1")
    emit = emit or (lambda *a, **k: None)
    g = g0
    spent: dict[int, int] = {}
    skip: frozenset = frozenset()
    result = RepairResult(g0, CONVERGED, grammars=[g0])
    if grammar_dir is not None:
        _write_grammar(grammar_dir, 0, g0)
    ev = evaluate(g, mtps, sut, seeds, mandated_forms)
    for rnd in range(1, budget + 1):
        found = ev.error
        if found is None:
            break
        err, trace = found
        if trace.mtp is not None and trace.mtp in mtps:
            k = list(mtps).index(trace.mtp)
            spent[k] = spent.get(k, 0) + 1
        report = None
        try:
            loc = localize(trace, g, err, mandated_forms, records)
            script = min_edit_script(loc.source_tokens, loc.target_tokens)
            report = generate_fix(provider, loc, script, g, model_id)
            new = apply_patch(g, report.patch, mtps)
            emit("patch_applied", round=rnd, error_class=err, target_rule=loc.target_rule,
                 touched=touched_rules(g, new), patch=report.patch.to_json(), diff=grammar_diff(g, new))
            g = new
        except (PatchRejected, SchemaViolation, LocalizationFailure) as exc:
            emit("patch_rejected", round=rnd, error_class=err, reason=str(exc))
            log.info("round %d: %s", rnd, exc)
        result.reports.append(report)
        result.grammars.append(g)
        if run_dir is not None and report is not None:
            p = Path(run_dir) / f"fix_round_{rnd}.json"
            p.parent.mkdir(parents=True, exist_ok=True)
            p.write_text(json.dumps(report.to_json(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
        if grammar_dir is not None:
            _write_grammar(grammar_dir, rnd, g)
        skip = frozenset(k for k, n in spent.items() if per_mtp_cap is not None and n >= per_mtp_cap)
        ev = evaluate(g, mtps, sut, seeds, mandated_forms, skip)
        outcome = ev.error[0] if ev.error else "fixed"
        result.outcomes.append(outcome)
        emit("repair_round", round=rnd, outcome=outcome)
    result.grammar = g
    result.final = ev
    result.status = CONVERGED if ev.error is None and not skip else BUDGET_EXHAUSTED
    if run_dir is not None:
        write_rounds_csv(Path(run_dir) / "rounds.csv", result.rounds)
    return result


def grammar_diff(a: IOGrammar, b: IOGrammar) -> str:
    return "".join(difflib.unified_diff(
        serialize_grammar(a).splitlines(keepends=True), serialize_grammar(b).splitlines(keepends=True), "before", "after"))


def _write_grammar(d, n: int, g: IOGrammar) -> Path:
    p = Path(d) / f"round_{n}.grammar"
    p.parent.mkdir(parents=True, exist_ok=True)
    p.write_text(serialize_grammar(g), encoding="utf-8")
    return p
