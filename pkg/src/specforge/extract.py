"""Section classification, structured extraction and micrograph proposals.

All three calls return JSON that is validated locally before anything
downstream sees it.  Validation covers shape (missing keys, extra keys,
types), ranges (summary length, paragraph indices that exist in the
section) and cross references (transitions between declared states).
"""

from __future__ import annotations

import json
import re
from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from .errors import SchemaViolation
from .graph import Anchor, GEdge, GNode, Micrograph, SectionConstraint, normalize_label
from .ingest import Provenance, SectionRecord
from .llm import CLASSIFY_TEMPERATURE, GENERATE_TEMPERATURE, LlmProvider, build_request, call_with_retry

SUMMARY_MAX_TOKENS = 30
DEFAULT_MAX_TOKENS = 2000
DEFAULT_MODEL = "gpt-4"


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class ProvenanceModel(_Strict):
    rfc_id: str = Field(min_length=1)
    section_id: str = Field(min_length=1)
    paragraph_indices: list[int] = Field(min_length=1)

    @field_validator("paragraph_indices")
    @classmethod
    def _nonnegative(cls, v):
        if any(i < 0 for i in v):
            raise ValueError("paragraph indices must be >= 0")
        return v

    def to_provenance(self) -> Provenance:
        return Provenance(self.rfc_id, self.section_id, tuple(self.paragraph_indices))


class ClassificationRecord(_Strict):
    section_id: str
    label: Literal["state_machine", "overview", "example", "other"]
    action: Literal["extract", "copy", "summarize"]
    summary: str
    evidence: ProvenanceModel

    @field_validator("summary")
    @classmethod
    def _short(cls, v):
        if len(v.split()) > SUMMARY_MAX_TOKENS:
            raise ValueError(f"summary exceeds {SUMMARY_MAX_TOKENS} tokens")
        return v

    @property
    def normative(self) -> bool:
        return self.label == "state_machine"


class StateItem(_Strict):
    name: str = Field(min_length=1)
    description: Optional[str]
    provenance: ProvenanceModel


class CommandItem(_Strict):
    name: str = Field(min_length=1)
    valid_in_states: Optional[list[str]]
    description: Optional[str]
    provenance: ProvenanceModel


class TransitionItem(_Strict):
    from_state: str
    command: str
    to_state: str
    provenance: ProvenanceModel


class ConstraintItem(_Strict):
    text: str = Field(min_length=1)
    kind: Optional[Literal["independent", "dependent"]]
    provenance: ProvenanceModel


class SyntaxRuleItem(_Strict):
    nonterminal: str = Field(min_length=1)
    definition_text: str
    provenance: ProvenanceModel


class ExtractionFragment(_Strict):
    states: Optional[list[StateItem]]
    commands: Optional[list[CommandItem]]
    transitions: Optional[list[TransitionItem]]
    constraints: Optional[list[ConstraintItem]]
    syntax_rules: Optional[list[SyntaxRuleItem]]

    def items(self):
        for group in (self.states, self.commands, self.transitions, self.constraints, self.syntax_rules):
            yield from group or ()

    @property
    def is_empty(self) -> bool:
        return not any(True for _ in self.items())


class NodeItem(_Strict):
    id: str
    label: str
    type: Literal["state", "command", "response"]
    provenance: list[ProvenanceModel]


class EdgeItem(_Strict):
    source: str
    target: str
    type: Literal["invokes", "yields", "requires", "enables", "dependency"]
    provenance: list[ProvenanceModel]
    in_state: Optional[str] = None


class SectionConstraintItem(_Strict):
    text: str
    attached_to: str
    kind: Optional[Literal["independent", "dependent"]]
    provenance: list[ProvenanceModel]


class MicrographProposal(_Strict):
    nodes: list[NodeItem]
    edges: list[EdgeItem]
    constraints: list[SectionConstraintItem] = Field(default_factory=list)


# --- validation helpers -----------------------------------------------------------

_FENCE_RE = re.compile(r"^\s*```(?:json)?\s*\n(.*?)\n```\s*$", re.DOTALL)


def _load_json(text: str):
    m = _FENCE_RE.match(text)
    body = m.group(1) if m else text
    try:
        return json.loads(body)
    except json.JSONDecodeError as exc:
        raise SchemaViolation(f"response is not JSON: {exc}", raw=text) from None


def _validate(model, text: str):
    data = _load_json(text)
    try:
        return model.model_validate(data)
    except ValidationError as exc:
        raise SchemaViolation(f"{model.__name__}: {exc.errors()[0]['loc']}: {exc.errors()[0]['msg']}", raw=text) from None


def _check_anchor(p: ProvenanceModel, record: SectionRecord, text: str):
    if (p.rfc_id, p.section_id) != record.ref:
        raise SchemaViolation(f"provenance {p.rfc_id}/{p.section_id} outside section {record.section_id}", raw=text)
    bad = [i for i in p.paragraph_indices if i >= len(record.paragraphs)]
    if bad:
        raise SchemaViolation(f"paragraph indices {bad} out of range for section {record.section_id}", raw=text)


def classification_schema(record: SectionRecord):
    def check(text: str) -> ClassificationRecord:
        rec = _validate(ClassificationRecord, text)
        if rec.section_id != record.section_id:
            raise SchemaViolation(f"classification names section {rec.section_id}, expected {record.section_id}", raw=text)
        _check_anchor(rec.evidence, record, text)
        return rec

    return check


def fragment_schema(record: SectionRecord):
    def check(text: str) -> ExtractionFragment:
        frag = _validate(ExtractionFragment, text)
        for item in frag.items():
            _check_anchor(item.provenance, record, text)
        declared = {normalize_label(s.name, "state") for s in frag.states or ()}
        for t in frag.transitions or ():
            for s in (t.from_state, t.to_state):
                if normalize_label(s, "state") not in declared:
                    raise SchemaViolation(f"transition references undeclared state {s!r}", raw=text)
        return frag

    return check


def micrograph_schema(record: SectionRecord):
    def check(text: str) -> MicrographProposal:
        prop = _validate(MicrographProposal, text)
        for item in list(prop.nodes) + list(prop.edges) + list(prop.constraints):
            for p in item.provenance:
                _check_anchor(p, record, text)
        return prop

    return check


def to_micrograph(prop: MicrographProposal, normative: bool) -> Micrograph:
    def anchors(ps):
        return tuple(sorted({Anchor.of(p.to_provenance(), normative) for p in ps}))

    return Micrograph(
        tuple(GNode(n.id, n.label, n.type, anchors(n.provenance)) for n in prop.nodes),
        tuple(GEdge(e.source, e.target, e.type, anchors(e.provenance), e.in_state) for e in prop.edges),
        tuple(SectionConstraint(c.text, c.attached_to, c.kind, anchors(c.provenance)) for c in prop.constraints),
    )


# --- calls -----------------------------------------------------------------------------

def section_payload(record: SectionRecord) -> str:
    lines = [f"rfc_id: {record.rfc_id}", f"section_id: {record.section_id}", f"title: {record.title}", ""]
    for p in record.paragraphs:
        lines.append(f"[{p.index}]")
        lines.append(p.text)
    return "\n".join(lines)


def classify_request(record: SectionRecord, model_id: str = DEFAULT_MODEL, max_tokens: int = DEFAULT_MAX_TOKENS):
    return build_request("classify", section_payload(record), model_id=model_id, temperature=CLASSIFY_TEMPERATURE, max_tokens=max_tokens)


def extract_request(record: SectionRecord, model_id: str = DEFAULT_MODEL, max_tokens: int = DEFAULT_MAX_TOKENS):
    return build_request("extract", section_payload(record), model_id=model_id, temperature=GENERATE_TEMPERATURE, max_tokens=max_tokens)


def micrograph_request(record: SectionRecord, fragment: ExtractionFragment, model_id: str = DEFAULT_MODEL,
                       max_tokens: int = DEFAULT_MAX_TOKENS):
    payload = section_payload(record) + "\n\nfragment:\n" + json.dumps(fragment.model_dump(), indent=1, sort_keys=True)
    return build_request("micrograph", payload, model_id=model_id, temperature=GENERATE_TEMPERATURE, max_tokens=max_tokens)


def classify_section(record: SectionRecord, provider: LlmProvider, model_id: str = DEFAULT_MODEL) -> ClassificationRecord:
    if not record.paragraphs:
        raise ValueError(f"section {record.section_id} is empty")
    return call_with_retry(provider, classify_request(record, model_id), classification_schema(record))


def extract_fragment(record: SectionRecord, provider: LlmProvider, model_id: str = DEFAULT_MODEL) -> ExtractionFragment:
    return call_with_retry(provider, extract_request(record, model_id), fragment_schema(record))


def propose_micrograph(record: SectionRecord, fragment: ExtractionFragment, provider: LlmProvider,
                       normative: bool = True, model_id: str = DEFAULT_MODEL) -> Micrograph:
    prop = call_with_retry(provider, micrograph_request(record, fragment, model_id), micrograph_schema(record))
    return to_micrograph(prop, normative)
