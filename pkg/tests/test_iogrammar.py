import random
import re

import pytest
from hypothesis import given, settings, strategies as st

from specforge.errors import (DerivationExhausted, DuplicateDefinition, GrammarSyntaxError, ParseFailure,
                              UndefinedNonterminal, UnknownPartyTag, UnresolvableFieldRef)
from specforge.graph import Mtp
from specforge.iogrammar import (derive, eval_constraint, parse_constraint, parse_grammar, parse_message,
                                 serialize_grammar, structurally_equal, tree_violations)
from specforge.iogrammar.analysis import check_mtp_generatable
from specforge.iogrammar.model import Alternative, IOGrammar, Lexeme, Literal, Ref, Rule
from specforge.iogrammar.regexgen import sample

from conftest import DATA
from oracles import enumerated_generatable

MINIMAL = '<start> ::= <Client:QUIT> <Server:ok>\n<QUIT> ::= "QUIT\\r\\n"\n<ok> ::= "+OK\\r\\n"\n'
TEST_GRAMMARS = sorted((DATA / "grammars").glob("*.grammar"))


def grammar(name):
    return parse_grammar((DATA / "grammars" / f"{name}.grammar").read_text())


def test_minimal_grammar():
    g = parse_grammar(MINIMAL)
    assert len(g.productions) == 3
    assert g.rule("start").alternatives[0].symbols == (Ref("QUIT", "Client"), Ref("ok", "Server"))
    assert derive(g, 0).bytes == b"QUIT\r\n+OK\r\n"


def test_golden_contains_tagged_refs(golden):
    refs = {str(r) for r in golden.tagged_refs()}
    assert {"<Client:USER>", "<Server:list_response>"} <= refs


def test_undefined_nonterminal_location():
    with pytest.raises(UndefinedNonterminal) as ei:
        parse_grammar('<start> ::= "a" <foo>\n')
    assert ei.value.name == "foo"
    assert (ei.value.line, ei.value.col) == (1, 17)
    assert "<foo>" in str(ei.value)


@pytest.mark.parametrize("text, exc", [
    ('<start> ::= "a"\n<start> ::= "b"\n', DuplicateDefinition),
    ('<start> ::= "a" | "a"\n', DuplicateDefinition),
    ('<start> ::= <Peer:x>\n<x> ::= "a"\n', UnknownPartyTag),
    ('<x> ::= "a"\n<start> ::= <x>\n', GrammarSyntaxError),
    ('<start> ::= "a\n', GrammarSyntaxError),
    ('<start> ::= "a"\n    where int(<x> >= 1\n', GrammarSyntaxError),
])
def test_grammar_errors(text, exc):
    with pytest.raises(exc):
        parse_grammar(text)


def test_literal_escapes():
    g = parse_grammar(r'<start> ::= "a\r\n\t\\\"b" "é"' + "\n")
    assert g.rule("start").alternatives[0].symbols[0].value == b'a\r\n\t\\"b'
    assert g.rule("start").alternatives[0].symbols[1].value == "é".encode()


def test_comments_and_continuations():
    g = parse_grammar('# header\n<start> ::= "a"  # trailing\n    | "b"\n\n')
    assert len(g.rule("start").alternatives) == 2


@pytest.mark.parametrize("path", TEST_GRAMMARS, ids=lambda p: p.stem)
def test_roundtrip_test_grammars(path):
    g = parse_grammar(path.read_text())
    assert structurally_equal(parse_grammar(serialize_grammar(g)), g)


def test_roundtrip_golden(golden):
    again = parse_grammar(serialize_grammar(golden))
    assert structurally_equal(again, golden)
    assert again.provenance == golden.provenance


def test_derive_is_deterministic(golden):
    assert derive(golden, 7).bytes == derive(golden, 7).bytes


def test_golden_derivation_shape(golden):
    seen_list = False
    for seed in range(200):
        data = derive(golden, seed).bytes
        for m in re.finditer(rb"LIST (\d+)\r\n", data):
            assert 1 <= int(m.group(1)) <= 8
            seen_list = True
        if seen_list and data.startswith(b"+OK") and b"USER " in data and b"PASS " in data:
            assert data.endswith(b"\r\n") and b"QUIT\r\n" in data
            break
    assert seen_list


@pytest.mark.parametrize("name", ["frame", "toggle"])
def test_derivations_sound(name):
    g = grammar(name)
    for seed in range(200):
        tree = derive(g, seed)
        assert tree_violations(g, tree) == []
        for m in tree.messages():
            assert parse_message(g, m.symbol, m.bytes, m.party).bytes == m.bytes


def test_unsatisfiable_constraint_exhausts():
    g = parse_grammar('<start> ::= <Client:X>\n<X> ::= "N" <d>\n    where int(<d>) > 5 and int(<d>) < 3\n'
                      '<terminals> ::= <d>\n<d> ::= re("[0-9]")\n')
    with pytest.raises(DerivationExhausted):
        derive(g, 0)


def test_parse_ok_literal():
    g = parse_grammar('<start> ::= <Server:ok>\n<ok> ::= "+OK" <crlf>\n<terminals> ::= <crlf>\n<crlf> ::= "\\r\\n"\n')
    assert parse_message(g, "ok", b"+OK\r\n").bytes == b"+OK\r\n"
    with pytest.raises(ParseFailure) as ei:
        parse_message(g, "ok", b"-ERR no\r\n")
    assert ei.value.position == 0


def test_parse_list_response_fields(golden):
    tree = parse_message(golden, "list_response", b"+OK 8 383\r\n")
    assert tree.bytes == b"+OK 8 383\r\n"
    assert [n.text() for n in tree.find_all("msg_number")] == ["8"]
    assert [n.text() for n in tree.find_all("octets")] == ["383"]


def test_parse_failure_position(golden):
    with pytest.raises(ParseFailure) as ei:
        parse_message(golden, "stat_response", b"+OK 2x 320\r\n")
    assert ei.value.position == 5


def test_multiline_parse(golden):
    data = b"+OK 2 messages\r\n1 120\r\n2 200\r\n.\r\n"
    assert parse_message(golden, "list_multi_response", data).bytes == data


@pytest.mark.parametrize("value, ok", [("8", True), ("1", True), ("0", False), ("9", False)])
def test_range_constraint(golden, value, ok):
    tree = parse_message(golden, "LIST_msg", f"LIST {value}\r\n".encode())
    (c,) = golden.rule("LIST_msg").constraints
    assert eval_constraint(tree, c) is ok


def test_constraint_kinds_and_text():
    a = parse_constraint("int(<n>) >= 1 and int(<n>) <= 8")
    assert a.kind == "independent"
    b = parse_constraint("len(<payload>) == int(<size>)")
    assert b.kind == "dependent"
    assert parse_constraint(b.text).text == b.text


def test_unresolvable_ref(golden):
    tree = parse_message(golden, "STAT", b"STAT\r\n")
    with pytest.raises(UnresolvableFieldRef):
        eval_constraint(tree, parse_constraint("int(<msg_number>) >= 1"))


@settings(max_examples=200, deadline=None)
@given(st.text(alphabet="abcxyz", min_size=1, max_size=20), st.integers(min_value=1, max_value=99))
def test_len_equals_int(payload, size):
    g = grammar("frame")
    tree = parse_message(g, "SEND", f"SEND {size} {payload}\r\n".encode())
    c = parse_constraint("len(<payload>) == int(<size>)")
    assert eval_constraint(tree, c) is (len(payload) == size)


def test_positional_refs():
    g = grammar("frame")
    tree = parse_message(g, "exchange", b"SEND 3 abc\r\nACK 4\r\n")
    (c,) = g.rule("exchange").constraints
    assert eval_constraint(tree, c) is False
    tree = parse_message(g, "exchange", b"SEND 3 abc\r\nACK 3\r\n")
    assert eval_constraint(tree, c) is True


def test_golden_generates_every_mtp(golden, pop3):
    for m in pop3.mtps:
        assert check_mtp_generatable(golden, m) is True
        assert enumerated_generatable(golden, m.commands) is True


def _without_quit(g):
    rules = [r for r in g.rules if r.name != "QUIT"]
    rules = [Rule(r.name, tuple(a for a in r.alternatives if Ref("QUIT", "Client") not in a.symbols) or
                  (Alternative((Literal(b"x"),)),), r.constraints, r.provenance) for r in rules]
    return IOGrammar(tuple(rules), g.lexemes)


def test_missing_quit_not_generatable(golden, pop3):
    g = _without_quit(golden)
    quit_mtp = next(m for m in pop3.mtps if m.commands[-1] == "QUIT")
    assert check_mtp_generatable(g, quit_mtp) is False
    assert enumerated_generatable(g, quit_mtp.commands) is False


def test_empty_mtp_vacuous(golden):
    assert check_mtp_generatable(golden, Mtp((), "none", "AUTHORIZATION")) is True


@settings(max_examples=60, deadline=None)
@given(st.lists(st.sampled_from(["USER", "PASS", "STAT", "LIST", "RETR", "DELE", "NOOP", "RSET", "TOP", "UIDL",
                                 "APOP", "QUIT", "STLS"]), max_size=4))
def test_generatable_agrees_with_enumeration(golden, cmds):
    assert check_mtp_generatable(golden, cmds) == enumerated_generatable(golden, cmds)


# --- random grammars for the round-trip property ------------------------------

_bytes = st.text(st.characters(max_codepoint=0x24F), min_size=1, max_size=6).map(str.encode)


@st.composite
def grammars(draw):
    n = draw(st.integers(1, 5))
    names = ["start"] + [f"r{i}" for i in range(1, n)]
    lex = [Lexeme("SP", literal=b" "), Lexeme("num", pattern="[0-9]{1,3}")]
    rules = []
    for name in names:
        alts = []
        for _ in range(draw(st.integers(1, 3))):
            syms = []
            for _ in range(draw(st.integers(1, 4))):
                if draw(st.booleans()):
                    syms.append(Literal(draw(_bytes)))
                else:
                    target = draw(st.sampled_from(names[1:] + ["SP", "num"] if n > 1 else ["SP", "num"]))
                    syms.append(Ref(target, draw(st.sampled_from([None, "Client", "Server"]))))
            alts.append(Alternative(tuple(syms)))
        uniq = list(dict.fromkeys(alts))
        cons = (parse_constraint("int(<num>) >= 1"),) if draw(st.booleans()) else ()
        rules.append(Rule(name, tuple(uniq), cons))
    return IOGrammar(tuple(rules), tuple(lex))


@settings(max_examples=150, deadline=None)
@given(grammars())
def test_roundtrip_property(g):
    assert structurally_equal(parse_grammar(serialize_grammar(g)), g)


@settings(max_examples=200, deadline=None)
@given(st.sampled_from(["[0-9]{1,3}", "[a-z]+", "(ab|cd)?x", "[!-~]{1,5}", "v?[0-9]{1,3}", "[^\r\n]*"]),
       st.integers(0, 10**6))
def test_regex_sampler_matches(pattern, seed):
    s = sample(pattern, random.Random(seed))
    assert re.fullmatch(pattern, s)
