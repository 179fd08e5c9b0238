import csv
import json

import pytest
from hypothesis import given, settings, strategies as st

from conftest import FIXTURES
from oracles import levenshtein
from specforge.errors import LocalizationFailure, SchemaViolation
from specforge.harness.classify import GMISS, GSYN, TMISM, classify_error
from specforge.iogrammar import parse_grammar
from specforge.llm import ReplayProvider
from specforge.repair.editscript import min_edit_script
from specforge.repair.loop import (BUDGET_EXHAUSTED, CONVERGED, DEFAULT_BUDGET, aggregate_rounds, evaluate,
                                   fix_schema, localize, repair_loop, write_rounds_csv)
from specforge.repair.reference import ReferenceFixer

FAULTS = FIXTURES / "faults"
INDEX = json.loads((FAULTS / "index.json").read_text())


def fault(name):
    return parse_grammar((FAULTS / f"{name}.grammar").read_text())


def first_error(g, pop3, sut, seeds=(0,)):
    found = evaluate(g, pop3.mtps, sut, seeds, pop3.mandated_forms).error
    assert found is not None
    return found


# --- edit scripts ------------------------------------------------------------------

def test_edit_script_known_pair():
    s = min_edit_script(list("kitten"), list("sitting"))
    assert s.cost == 3
    assert s.apply(list("kitten")) == list("sitting")


def test_edit_script_empty_sides():
    assert min_edit_script([], []).cost == 0
    assert min_edit_script(["a", "b"], []).cost == 2
    assert [o.kind for o in min_edit_script([], ["x"]).ops] == ["insert"]


def test_edit_script_prefers_substitution():
    s = min_edit_script(["+OK", "<SP>", "<text>", "\n"], ["+OK", "<SP>", "<text>", "<CRLF>"])
    assert [(o.kind, o.at, o.token, o.new) for o in s.ops] == [("substitute", 3, "\n", "<CRLF>")]


tokens = st.lists(st.sampled_from(["+OK", "<SP>", "<CRLF>", "<octets>", "-ERR", "."]), max_size=9)


@settings(max_examples=300)
@given(tokens, tokens)
def test_edit_script_matches_dp_oracle(a, b):
    s = min_edit_script(a, b)
    assert s.cost == levenshtein(tuple(a), tuple(b))
    assert s.apply(a) == b
    assert all(0 <= o.at <= len(a) for o in s.ops)


# --- localization --------------------------------------------------------------------

def test_gsyn_localizes_to_the_reply_rule(pop3, sut):
    g = fault("ok_lf")
    err, trace = first_error(g, pop3, sut)
    assert err == GSYN
    loc = localize(trace, g, err, pop3.mandated_forms, pop3.sections)
    assert loc.target_rule == "ok_response"
    assert trace.exchanges[loc.exchange_index].direction == "server_to_client"
    assert "<CRLF>" in loc.target_tokens
    assert min_edit_script(loc.source_tokens, loc.target_tokens).cost >= 1
    assert loc.evidence


def test_tmism_snippet_carries_violating_value(pop3, sut):
    g = fault("stat_cap")
    err, trace = first_error(g, pop3, sut)
    assert err == TMISM
    loc = localize(trace, g, err, pop3.mandated_forms)
    assert loc.target_rule == "stat_response"
    assert "<msg_count> = '8'" in loc.expected_snippet
    assert "violated" in loc.expected_snippet


def test_gmiss_evidence_quotes_the_mandated_form(pop3, sut):
    g = fault("no_top")
    err, trace = first_error(g, pop3, sut)
    assert err == GMISS
    loc = localize(trace, g, err, pop3.mandated_forms, pop3.sections)
    assert loc.form is not None and loc.form.command == "TOP"
    assert repr(loc.form.example.decode()) in loc.expected_snippet
    assert "C: TOP 1 10" in loc.evidence
    assert loc.target_rule == "exchange"
    assert loc.exchange_index is None


def test_localize_without_error(golden, pop3, sut):
    ev = evaluate(golden, pop3.mtps[:1], sut, (0,))
    with pytest.raises(LocalizationFailure):
        localize(ev.traces[0], golden, None)


# --- fix reports -------------------------------------------------------------------

def _report(loc, target, kind, new_text, cls=None):
    return json.dumps({
        "error_class": cls or loc.error_class, "target_rule": target,
        "location": {"grammar_line": loc.grammar_line, "exchange_index": loc.exchange_index},
        "current_snippet": loc.current_snippet, "expected_snippet": loc.expected_snippet, "reason": "x",
        "patch": {"entries": [{"target_rule": target, "kind": kind, "new_text": new_text,
                               "provenance": None, "rationale": "x"}]},
    })


@pytest.fixture(scope="module")
def ok_lf_loc(pop3, sut):
    g = fault("ok_lf")
    err, trace = first_error(g, pop3, sut)
    return g, localize(trace, g, err)


def test_fix_schema_accepts_a_local_rewrite(ok_lf_loc):
    g, loc = ok_lf_loc
    rep = fix_schema(loc, g)(_report(loc, "ok_response", "rewrite_production",
                                     '<ok_response> ::= "+OK" <CRLF> | "+OK" <SP> <text> <CRLF>'))
    assert rep.patch.entries[0].kind == "rewrite_production"


@pytest.mark.parametrize("target,kind,text,cls", [
    ("greeting", "rewrite_production", '<greeting> ::= "+OK" <CRLF>', None),  # unrelated rule
    ("ok_response", "add_constraint", "where len(<text>) > 0", None),  # kind does not fit GSyn
    ("ok_response", "rewrite_production", '<ok_response> ::= "+OK" <CRLF>\n<greeting> ::= "+OK" <CRLF>', None),
    ("ok_response", "rewrite_production", '<ok_response> ::= "+OK" <CRLF>', "TMism"),
    ("ok_response", "rewrite_production", "<ok_response> ::= (", None),
])
def test_fix_schema_rejects(ok_lf_loc, target, kind, text, cls):
    g, loc = ok_lf_loc
    with pytest.raises(SchemaViolation):
        fix_schema(loc, g)(_report(loc, target, kind, text, cls))


def test_rejected_patch_costs_the_round(pop3, sut, script, ok_lf_loc):
    g, loc = ok_lf_loc
    bad = _report(loc, "greeting", "rewrite_production", '<greeting> ::= "+OK" <CRLF>')
    res = repair_loop(g, pop3.mtps, sut, script(bad, bad), 1, mandated_forms=pop3.mandated_forms, seeds=(0,))
    assert res.status == BUDGET_EXHAUSTED
    assert res.outcomes == [GSYN]
    assert res.reports == [None]
    assert res.grammar is g


# --- the loop ------------------------------------------------------------------------

def _replay(name, sut, pop3, tmp_path=None):
    return repair_loop(fault(name), pop3.mtps, sut, ReplayProvider(FAULTS / "llm"), INDEX["budget"],
                       mandated_forms=pop3.mandated_forms, records=pop3.sections, seeds=INDEX["seeds"],
                       run_dir=tmp_path)


def test_crlf_fault_repaired_from_replay(pop3, sut, tmp_path):
    res = _replay("ok_lf", sut, pop3, tmp_path)
    assert res.status == CONVERGED
    assert len(res.outcomes) <= 3 and res.outcomes[-1] == "fixed"
    entry = res.reports[0].patch.entries[0]
    assert (entry.kind, entry.target_rule) == ("rewrite_production", "ok_response")
    assert (tmp_path / "fix_round_1.json").is_file()
    rows = list(csv.reader((tmp_path / "rounds.csv").open()))
    assert rows[0] == ["round", "at_risk", "fixed", "gsyn", "tmism", "gmiss"]
    assert len(rows) == len(res.outcomes) + 1


def test_unfixable_fault_exhausts_the_budget(pop3, sut):
    res = _replay("stat_cap3", sut, pop3)
    assert res.status == BUDGET_EXHAUSTED
    assert len(res.outcomes) == INDEX["budget"]
    assert set(res.outcomes) == {TMISM}
    assert res.grammar == fault("stat_cap3")


def test_reference_fixer_repairs_gmiss(pop3, sut):
    res = repair_loop(fault("no_uidl_msg"), pop3.mtps, sut, ReferenceFixer(pop3.golden), DEFAULT_BUDGET,
                      mandated_forms=pop3.mandated_forms, seeds=(0,))
    assert res.status == CONVERGED
    assert res.reports[0].patch.entries[0].kind == "add_alternative"
    assert all(classify_error(t, res.grammar, pop3.mandated_forms) is None for t in res.final.traces)


def test_golden_needs_no_rounds(golden, pop3, sut, script):
    res = repair_loop(golden, pop3.mtps, sut, script(), 3, mandated_forms=pop3.mandated_forms, seeds=(0,))
    assert res.status == CONVERGED and res.outcomes == []


def test_budget_must_be_positive(golden, pop3, sut, script):
    with pytest.raises(ValueError):
        repair_loop(golden, pop3.mtps, sut, script(), 0)


# --- round logs ------------------------------------------------------------------------

def test_aggregate_rounds_by_hand(tmp_path):
    logs = aggregate_rounds([["GSyn", "fixed"], ["fixed"], ["TMism", "GMiss", "fixed"]])
    assert [(l.round, l.at_risk, l.fixed, l.gsyn, l.tmism, l.gmiss) for l in logs] == [
        (1, 3, 1, 1, 1, 0), (2, 2, 1, 0, 0, 1), (3, 1, 1, 0, 0, 0)]
    assert logs[0].shares()["fixed"] == pytest.approx(1 / 3)
    p = write_rounds_csv(tmp_path / "rounds.csv", logs)
    assert p.read_text().splitlines()[1] == "1,3,1,1,1,0"


@given(st.lists(st.lists(st.sampled_from(["fixed", "GSyn", "TMism", "GMiss"]), max_size=7), max_size=10))
def test_round_shares_partition(outcomes):
    for lg in aggregate_rounds(outcomes):
        lg.check()
        assert lg.at_risk == sum(len(o) > lg.round - 1 for o in outcomes)
        if lg.at_risk:
            assert sum(lg.shares().values()) == pytest.approx(1.0)
