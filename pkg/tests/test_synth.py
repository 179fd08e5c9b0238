import pytest
from hypothesis import given, settings, strategies as st

from specforge.errors import InconsistentMtps, PatchRejected, SchemaViolation, UndefinedNonterminal
from specforge.graph import Mtp
from specforge.ingest import Paragraph, SectionRecord
from specforge.iogrammar import parse_grammar, serialize_grammar, structurally_equal
from specforge.iogrammar.analysis import check_mtp_generatable
from specforge.iogrammar.text import rule_text
from specforge.synth import (Patch, PatchEntry, apply_patch, build_skeleton, grammar_schema, normalize_grammar, synthesize,
                             touched_rules)

from conftest import DATA

A, Q = "AUTHORIZATION", "TRANSACTION"


def mtp(*cmds, end="UPDATE"):
    triples, state = [], A
    for c in cmds:
        nxt = {"USER": A, "PASS": Q, "QUIT": end}.get(c, Q)
        triples.append((state, c, nxt))
        state = nxt
    return Mtp(tuple(triples), cmds[-1], A)


def trie_size(seqs):
    nodes = set()
    for s in seqs:
        for i in range(1, len(s) + 1):
            nodes.add(tuple(s[:i]))
    return len(nodes)


def test_single_mtp_skeleton():
    sk = build_skeleton([mtp("USER", "PASS", "QUIT")])
    assert [x.command for x in sk.exchanges] == ["USER", "PASS", "QUIT"]
    assert sk.paths == ((0, 1, 2),)


def test_shared_prefix_once():
    sk = build_skeleton([mtp("USER", "PASS", "STAT"), mtp("USER", "PASS", "LIST")])
    assert [x.command for x in sk.exchanges] == ["USER", "PASS", "STAT", "LIST"]
    assert sk.paths == ((0, 1, 2), (0, 1, 3))


@settings(max_examples=80, deadline=None)
@given(st.lists(st.lists(st.sampled_from(["STAT", "LIST", "DELE", "NOOP"]), max_size=3), min_size=1, max_size=6))
def test_skeleton_is_a_trie(tails):
    mtps = [mtp("USER", "PASS", *t, "QUIT") for t in tails]
    sk = build_skeleton(mtps)
    seqs = [[(s, c) for s, c, _ in m.triples] for m in mtps]
    assert len(sk.exchanges) == trie_size(seqs)
    for m, path in zip(mtps, sk.paths):
        assert [sk.exchanges[i].command for i in path] == m.commands


def test_inconsistent_mtps():
    a = Mtp(((A, "PASS", Q),), "PASS", A)
    b = Mtp(((A, "PASS", A),), "PASS", A)
    with pytest.raises(InconsistentMtps):
        build_skeleton([a, b])


def test_pop3_skeleton_coverage(pop3):
    cmds = set(build_skeleton(pop3.mtps).commands)
    assert {"USER", "PASS", "STAT", "LIST", "DELE", "QUIT"} <= cmds


def test_replay_synthesis_generates_all_mtps(replay_run, pop3):
    pipe, _ = replay_run
    g0 = parse_grammar((pipe.grammar_dir / "round_0.grammar").read_text())
    for m in pipe.mtps():
        assert check_mtp_generatable(g0, m)
    assert all(r.provenance is not None for r in g0.rules)


REC = SectionRecord("1939", "6", "QUIT", (Paragraph(0, "QUIT"), Paragraph(1, "+OK")))
GOOD = ('#@ provenance rfc=1939 section=6 paragraphs=0,1\n<start> ::= <Client:QUIT> <Server:ok>\n'
        '<QUIT> ::= "QUIT" <CRLF>\n<ok> ::= "+OK" <CRLF>\n<terminals> ::= <CRLF>\n<CRLF> ::= "\\r\\n"\n')


def test_schema_accepts_grammar_only():
    assert grammar_schema([REC])(GOOD).has_rule("QUIT")


def test_commentary_rejected(script):
    p = script("Here is the grammar you asked for:\n" + GOOD, "Sure! " + GOOD)
    with pytest.raises(SchemaViolation):
        synthesize(build_skeleton([Mtp((("UPDATE", "QUIT", "UPDATE"),), "QUIT", "UPDATE")]), [REC], p)
    assert len(p.requests) == 2
    assert all(r.temperature == 0.1 and r.max_tokens == 4000 for r in p.requests)


def test_missing_provenance_rejected():
    with pytest.raises(SchemaViolation, match="provenance"):
        grammar_schema([REC])(GOOD.split("\n", 1)[1])
    with pytest.raises(SchemaViolation, match="not in the retrieved"):
        grammar_schema([REC])(GOOD.replace("paragraphs=0,1", "paragraphs=5"))


def test_missing_terminals_block_filled():
    text = '#@ provenance rfc=1939 section=6 paragraphs=0\n<start> ::= <Client:QUIT>\n<QUIT> ::= "QUIT" <SP> <text> <CRLF>\n'
    g = grammar_schema([REC])(text)
    assert g.lexeme("CRLF").literal == b"\r\n" and g.lexeme("text").pattern
    with pytest.raises(SchemaViolation):
        grammar_schema([REC])(text.replace("<text>", "<mystery>"))


def test_missing_start_built_from_skeleton():
    sk = build_skeleton([Mtp((("TRANSACTION", "QUIT", "UPDATE"),), "QUIT", "TRANSACTION")])
    text = ('#@ provenance rfc=1939 section=6 paragraphs=0\n<quit_exchange> ::= <Client:QUIT> <Server:ok>\n'
            '<QUIT> ::= "QUIT" <CRLF>\n<ok> ::= "+OK" <CRLF>\n')
    g = grammar_schema([REC], sk)(text)
    assert rule_text(g.rules[0]).endswith("<start> ::= <quit_exchange>")


def test_normalize_dedup_and_grouping():
    g = parse_grammar('<start> ::= <a> | <a>\n<a> ::= "x"\n<a> ::= "y" | "x"\n', strict=False)
    n = normalize_grammar(g)
    assert [len(n.rule(r).alternatives) for r in ("start", "a")] == [1, 2]


def test_normalize_undefined():
    with pytest.raises(UndefinedNonterminal):
        normalize_grammar(parse_grammar('<start> ::= <nowhere>\n', strict=False))


@pytest.mark.parametrize("path", sorted((DATA / "grammars").glob("*.grammar")) + ["golden"],
                         ids=lambda p: getattr(p, "stem", p))
def test_normalize_idempotent(path, golden):
    g = golden if path == "golden" else parse_grammar(path.read_text())
    once = normalize_grammar(g)
    assert structurally_equal(normalize_grammar(once), once)
    assert serialize_grammar(normalize_grammar(once)) == serialize_grammar(once)


def _entry(rule, kind, text):
    return PatchEntry(rule, kind, text, None, "test")


def test_rewrite_touches_only_target(golden, pop3):
    new = '<ok_response> ::= "+OK" <CRLF> | "+OK" <SP> <text> <CRLF> | "+OK " <CRLF>'
    out = apply_patch(golden, Patch((_entry("ok_response", "rewrite_production", new),)), pop3.mtps)
    assert touched_rules(golden, out) == ["ok_response"]
    assert out.provenance["ok_response"] == golden.provenance["ok_response"]
    before = serialize_grammar(golden).split("\n\n")
    after = serialize_grammar(out).split("\n\n")
    assert [a for a, b in zip(before, after) if a != b] == [rule_text(golden.rule("ok_response"))]


def test_unknown_target(golden):
    with pytest.raises(PatchRejected) as ei:
        apply_patch(golden, Patch((_entry("nope", "add_alternative", '<nope> ::= "x"'),)))
    assert ei.value.reason == "unknown_target"


def test_removing_quit_is_a_regression(golden, pop3):
    patch = Patch((_entry("update", "rewrite_production", "<update> ::= <Client:NOOP> <Server:ok_response>"),))
    with pytest.raises(PatchRejected) as ei:
        apply_patch(golden, patch, pop3.mtps)
    assert ei.value.reason == "mtp_regression"


def test_parse_failure_patch(golden):
    with pytest.raises(PatchRejected) as ei:
        apply_patch(golden, Patch((_entry("STAT", "rewrite_production", '<STAT> ::= "STAT'),)))
    assert ei.value.reason == "parse_failure"


def test_patch_may_not_rewrite_other_rules(golden):
    text = '<STAT> ::= "STAT" <CRLF>\n<QUIT> ::= "QUIT" <SP> <CRLF>'
    with pytest.raises(PatchRejected) as ei:
        apply_patch(golden, Patch((_entry("STAT", "rewrite_production", text),)))
    assert ei.value.reason == "schema_failure"


def test_constraint_patches(golden):
    out = apply_patch(golden, Patch((_entry("stat_response", "add_constraint", "where int(<octets>) >= 0"),)))
    assert [c.text for c in out.rule("stat_response").constraints] == ["int(<msg_count>) >= 0", "int(<octets>) >= 0"]
    out = apply_patch(out, Patch((_entry("stat_response", "modify_constraint", "int(<msg_count>) >= 1"),)))
    assert [c.text for c in out.rule("stat_response").constraints] == ["int(<msg_count>) >= 1"]
    assert touched_rules(golden, out) == ["stat_response"]


_ALT_EDITS = [
    ("ok_response", '<ok_response> ::= "+OK" <CRLF>'),
    ("exchange", "<exchange> ::= <stat_exchange>"),
    ("authorization", "<authorization> ::= <apop_exchange>"),
    ("transaction", "<transaction> ::= <exchange>"),
    ("update", "<update> ::= <Client:QUIT> <Server:ok_response>"),
    ("STAT", '<STAT> ::= "STAT" <SP> <CRLF>'),
]


@settings(max_examples=40, deadline=None)
@given(st.lists(st.sampled_from(_ALT_EDITS), min_size=1, max_size=3, unique_by=lambda e: e[0]))
def test_gate_preserves_generatability(golden, pop3, edits):
    patch = Patch(tuple(_entry(r, "rewrite_production", t) for r, t in edits))
    try:
        out = apply_patch(golden, patch, pop3.mtps)
    except PatchRejected as exc:
        assert exc.reason == "mtp_regression"
        return
    for m in pop3.mtps:
        assert check_mtp_generatable(out, m)
