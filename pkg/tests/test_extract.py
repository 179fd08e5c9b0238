import json

import pytest
from hypothesis import given, settings, strategies as st

from specforge.errors import SchemaViolation
from specforge.extract import (classification_schema, classify_section, extract_fragment, fragment_schema,
                               micrograph_schema, propose_micrograph)
from specforge.ingest import Paragraph, SectionRecord
from specforge.llm import ReplayProvider

from conftest import FIXTURES

REC = SectionRecord("9", "2", "Toy", (Paragraph(0, "The server is in state A."), Paragraph(1, "PING moves to B.")))


def prov(*idx, sec="2"):
    return {"rfc_id": "9", "section_id": sec, "paragraph_indices": list(idx) or [0]}


def classification(**kw):
    d = {"section_id": "2", "label": "state_machine", "action": "extract", "summary": "States A and B.",
         "evidence": prov(0)}
    d.update(kw)
    return d


def fragment(**kw):
    d = {"states": [{"name": "A", "description": None, "provenance": prov(0)},
                    {"name": "B", "description": None, "provenance": prov(1)}],
         "commands": [{"name": "PING", "valid_in_states": ["A"], "description": None, "provenance": prov(1)}],
         "transitions": [{"from_state": "A", "command": "PING", "to_state": "B", "provenance": prov(1)}],
         "constraints": None, "syntax_rules": None}
    d.update(kw)
    return d


@pytest.fixture(scope="module")
def replay():
    return ReplayProvider(FIXTURES / "llm")


def test_classify_state_machine_section_from_fixture(sections, replay):
    s5 = next(r for r in sections if r.section_id == "5")
    rec = classify_section(s5, replay)
    assert (rec.label, rec.action) == ("state_machine", "extract")


def test_section5_fragment(sections, replay):
    s5 = next(r for r in sections if r.section_id == "5")
    frag = extract_fragment(s5, replay)
    assert "TRANSACTION" in [s.name for s in frag.states]
    loops = [t.command for t in frag.transitions if t.from_state == t.to_state == "TRANSACTION"]
    assert sorted(loops) == ["DELE", "LIST", "NOOP", "RETR", "RSET", "STAT"]
    quits = [(t.from_state, t.to_state) for t in frag.transitions if t.command == "QUIT"]
    assert quits == [("TRANSACTION", "UPDATE")]
    for item in frag.items():
        assert item.provenance.section_id == "5"


def test_summary_of_31_tokens_rejected(script):
    p = script(classification(summary=" ".join(["w"] * 31)), classification(summary=" ".join(["w"] * 31)))
    with pytest.raises(SchemaViolation):
        classify_section(REC, p)
    assert len(p.requests) == 2


def test_summary_of_30_tokens_accepted(script):
    p = script(classification(summary=" ".join(["w"] * 30)))
    assert classify_section(REC, p).summary.count("w") == 30


def test_extra_key_rejected():
    with pytest.raises(SchemaViolation):
        classification_schema(REC)(json.dumps(classification(confidence=0.9)))


@pytest.mark.parametrize("bad", [
    {"label": "protocol"},                    # out of enum
    {"evidence": prov(5)},                    # paragraph out of range
    {"evidence": prov(0, sec="3")},           # other section
    {"section_id": "7"},
])
def test_classification_range_checks(bad):
    with pytest.raises(SchemaViolation):
        classification_schema(REC)(json.dumps(classification(**bad)))


def test_missing_field_and_wrong_type():
    d = classification()
    del d["summary"]
    with pytest.raises(SchemaViolation):
        classification_schema(REC)(json.dumps(d))
    with pytest.raises(SchemaViolation):
        classification_schema(REC)(json.dumps(classification(summary=3)))
    with pytest.raises(SchemaViolation):
        classification_schema(REC)("not json at all")


def test_fenced_json_accepted():
    text = "```json\n" + json.dumps(classification()) + "\n```"
    assert classification_schema(REC)(text).action == "extract"


def test_all_null_fragment_is_valid_and_empty():
    frag = fragment_schema(REC)(json.dumps({k: None for k in fragment()}))
    assert frag.is_empty


def test_omitted_fragment_key_rejected():
    d = fragment()
    del d["syntax_rules"]
    with pytest.raises(SchemaViolation):
        fragment_schema(REC)(json.dumps(d))


def test_undeclared_state_rejected():
    d = fragment(transitions=[{"from_state": "A", "command": "PING", "to_state": "C", "provenance": prov(1)}])
    with pytest.raises(SchemaViolation, match="undeclared state"):
        fragment_schema(REC)(json.dumps(d))


def test_state_alias_counts_as_declared():
    d = fragment(transitions=[{"from_state": "a", "command": "PING", "to_state": "b", "provenance": prov(1)}])
    assert len(fragment_schema(REC)(json.dumps(d)).transitions) == 1


def test_micrograph_proposal(script):
    p = script(fragment(), {
        "nodes": [{"id": "n1", "label": "A", "type": "state", "provenance": [prov(0)]},
                  {"id": "n2", "label": "PING", "type": "command", "provenance": [prov(1)]}],
        "edges": [{"source": "n1", "target": "n2", "type": "invokes", "provenance": [prov(1)]}],
        "constraints": []})
    frag = extract_fragment(REC, p)
    mg = propose_micrograph(REC, frag, p)
    assert [n.label for n in mg.nodes] == ["A", "PING"]
    assert all(a.normative for n in mg.nodes for a in n.anchors)
    assert [r.temperature for r in p.requests] == [0.1, 0.1]


def test_micrograph_bad_edge_type():
    bad = {"nodes": [], "edges": [{"source": "a", "target": "b", "type": "calls", "provenance": [prov(0)]}]}
    with pytest.raises(SchemaViolation):
        micrograph_schema(REC)(json.dumps(bad))


def test_temperatures_on_recorded_requests(script):
    p = script(classification(), fragment())
    classify_section(REC, p)
    extract_fragment(REC, p)
    assert [(r.kind, r.temperature) for r in p.requests] == [("classify", 0.0), ("extract", 0.1)]
    assert all(r.max_tokens <= 4000 for r in p.requests)


@settings(max_examples=50, deadline=None)
@given(st.integers(min_value=0, max_value=60))
def test_summary_cap_property(n):
    text = json.dumps(classification(summary=" ".join(["tok"] * n)))
    if n <= 30:
        assert classification_schema(REC)(text)
    else:
        with pytest.raises(SchemaViolation):
            classification_schema(REC)(text)
