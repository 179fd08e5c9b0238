"""Write the seeded-fault grammars under fixtures/faults/ and record the
fix reports the repair loop asks for under fixtures/faults/llm/.

Each fault is one textual edit of the reference POP3 grammar.  Fixes come
from the reference grammar; the unfixable fault gets a fixer that never
changes anything.

    python3 tools/make_faults.py [out_dir]
"""

import json
import shutil
import sys
from pathlib import Path

from specforge.harness.mockpop3 import MockConfig, MockPop3Server
from specforge.harness.session import SutConfig
from specforge.iogrammar import parse_grammar
from specforge.llm import RecordingProvider
from specforge.protocols import POP3
from specforge.repair.loop import DEFAULT_BUDGET, repair_loop
from specforge.repair.reference import NoopFixer, ReferenceFixer

SEEDS = [0, 1, 2, 3, 4]

FAULTS = [
    # id, expected first class, old text, new text
    ("ok_lf", "GSyn",
     '<ok_response> ::= "+OK" <CRLF> | "+OK" <SP> <text> <CRLF>',
     '<ok_response> ::= "+OK" <CRLF> | "+OK" <SP> <text> "\\n"'),
    ("stat_nosp", "GSyn",
     '<stat_response> ::= "+OK" <SP> <msg_count> <SP> <octets> <CRLF>',
     '<stat_response> ::= "+OK" <msg_count> <SP> <octets> <CRLF>'),
    ("greeting_bare", "GSyn",
     '<greeting> ::= "+OK" <SP> <text> <CRLF>',
     '<greeting> ::= "+OK" <CRLF>'),
    ("content_bare", "GSyn",
     '<message_content> ::= <status_line> <content_lines> ".\\r\\n"',
     '<message_content> ::= "+OK" <CRLF> <content_lines> ".\\r\\n"'),
    ("stat_cap", "TMism",
     "    where int(<msg_count>) >= 0",
     "    where int(<msg_count>) >= 0 and int(<msg_count>) <= 5"),
    ("list_echo", "TMism",
     "    where int(<msg_number>[0]) == int(<msg_number>[1])",
     "    where int(<msg_number>[0]) < int(<msg_number>[1])"),
    ("list_small", "TMism",
     '<list_response> ::= "+OK" <SP> <msg_number> <SP> <octets> <CRLF>',
     '<list_response> ::= "+OK" <SP> <msg_number> <SP> <octets> <CRLF>\n    where int(<octets>) < 100'),
    ("greeting_short", "TMism",
     '<greeting> ::= "+OK" <SP> <text> <CRLF>',
     '<greeting> ::= "+OK" <SP> <text> <CRLF>\n    where len(<text>) < 5'),
    ("no_top", "GMiss",
     "    | <top_exchange> | <uidl_exchange> | <uidl_msg_exchange>",
     "    | <uidl_exchange> | <uidl_msg_exchange>"),
    ("no_uidl_msg", "GMiss",
     "    | <top_exchange> | <uidl_exchange> | <uidl_msg_exchange>",
     "    | <top_exchange> | <uidl_exchange>"),
]

# rules dropped together with a removed alternative
DROP = {
    "no_top": ("<top_exchange> ::=", "<TOP> ::="),
    "no_uidl_msg": ("<uidl_msg_exchange> ::=", "<UIDL_msg> ::="),
}

UNFIXABLE = ("stat_cap3", "TMism", "    where int(<msg_count>) >= 0",
             "    where int(<msg_count>) >= 0 and int(<msg_count>) <= 3")


def _drop_rules(text: str, heads) -> str:
    out, skipping = [], False
    for line in text.splitlines(keepends=True):
        if any(line.startswith(h) for h in heads):
            skipping = True
            # drop the provenance pragma attached to the rule as well
            if out and out[-1].startswith("#@ provenance"):
                out.pop()
            continue
        if skipping and line.startswith("    "):
            continue
        skipping = False
        out.append(line)
    return "".join(out)


def make(fault, golden: str) -> str:
    fid, _cls, old, new = fault
    if golden.count(old) != 1:
        raise SystemExit(f"{fid}: anchor text occurs {golden.count(old)} times")
    text = golden.replace(old, new)
    if fid in DROP:
        text = _drop_rules(text, DROP[fid])
    parse_grammar(text)
    return text


def main(out="fixtures/faults"):
    golden = (POP3.dir / "golden.grammar").read_text()
    d = Path(out)
    d.mkdir(parents=True, exist_ok=True)
    llm = d / "llm"
    if llm.is_dir():
        shutil.rmtree(llm)
    index = []
    with MockPop3Server(MockConfig(port=0)) as srv:
        sut = SutConfig(port=srv.port)
        for f in FAULTS + [UNFIXABLE]:
            text = make(f, golden)
            (d / f"{f[0]}.grammar").write_text(text)
            fixable = f is not UNFIXABLE
            fixer = ReferenceFixer(POP3.golden) if fixable else NoopFixer()
            res = repair_loop(parse_grammar(text), POP3.mtps, sut, RecordingProvider(fixer, llm), DEFAULT_BUDGET,
                              mandated_forms=POP3.mandated_forms, records=POP3.sections, seeds=SEEDS)
            print(f[0], res.status, res.outcomes)
            index.append({"id": f[0], "class": f[1], "fixable": fixable})
    (d / "index.json").write_text(json.dumps({"seeds": SEEDS, "budget": DEFAULT_BUDGET, "faults": index}, indent=2) + "\n")


if __name__ == "__main__":
    main(*sys.argv[1:])
