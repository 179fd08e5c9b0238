"""Regenerate fixtures/llm/ for the POP3 replay run.

A scripted provider stands in for the model: it answers classification,
extraction and micrograph requests from the tables below, returns a
deliberately imperfect grammar for synthesis (one syntax defect, the
optional commands missing) and answers fix requests from the reference
grammar.  Every answer is recorded, so `specforge run --provider replay`
reproduces the run offline.  The merged multigraph is also saved as the
bundled POP3 multigraph fixture.

    python3 tools/record_fixtures.py [--config configs/pop3.toml]
"""

import argparse
import json
import re
import shutil
import tempfile
from importlib import resources
from pathlib import Path

from specforge.config import load_config
from specforge.iogrammar import parse_grammar
from specforge.llm import LlmResponse, RecordingProvider
from specforge.pipeline import Pipeline
from specforge.repair.reference import ReferenceFixer

RFC = "1939"
POP3 = resources.files("specforge") / "data" / "protocols" / "pop3"


def prov(section, *paras):
    return {"rfc_id": RFC, "section_id": section, "paragraph_indices": list(paras)}


CLASSIFY = {
    "0": ("other", "summarize", "Front matter and status of this memo."),
    "1": ("overview", "summarize", "POP3 lets a workstation retrieve mail held by a maildrop server."),
    "2": ("overview", "summarize", "Mail submission is out of scope for POP3."),
    "3": ("state_machine", "extract", "Session states, command and response syntax, multi-line responses."),
    "4": ("state_machine", "extract", "AUTHORIZATION state: greeting, USER and PASS."),
    "5": ("state_machine", "extract", "TRANSACTION state commands STAT LIST RETR DELE NOOP RSET."),
    "6": ("state_machine", "extract", "UPDATE state entered by QUIT from TRANSACTION."),
    "7": ("overview", "summarize", "Optional commands TOP, UIDL and APOP."),
    "8": ("overview", "copy", "Summary table of minimal and optional commands by state."),
    "9": ("example", "copy", "A complete example session."),
    "10": ("other", "summarize", "Messages follow the Internet message format."),
    "11": ("other", "summarize", "APOP and password security considerations."),
}


def _state(name, section, *p):
    return {"name": name, "description": None, "provenance": prov(section, *p)}


def _cmd(name, states, section, *p):
    return {"name": name, "valid_in_states": states, "description": None, "provenance": prov(section, *p)}


def _tr(a, c, b, section, *p):
    return {"from_state": a, "command": c, "to_state": b, "provenance": prov(section, *p)}


TRANSACTION_CMDS = [("STAT", 2), ("LIST", 8), ("RETR", 14), ("DELE", 18), ("NOOP", 22), ("RSET", 25)]

FRAGMENTS = {
    "3": {
        "states": [_state("AUTHORIZATION", "3", 4), _state("TRANSACTION", "3", 4), _state("UPDATE", "3", 4)],
        "commands": None, "transitions": None, "constraints": None,
        "syntax_rules": [{"nonterminal": "response", "definition_text": "status indicator +OK or -ERR, keyword, CRLF",
                          "provenance": prov("3", 2)}],
    },
    "4": {
        "states": [_state("AUTHORIZATION", "4", 2), _state("TRANSACTION", "4", 4)],
        "commands": [_cmd("USER", ["AUTHORIZATION"], "4", 5), _cmd("PASS", ["AUTHORIZATION"], "4", 8)],
        "transitions": [_tr("AUTHORIZATION", "USER", "AUTHORIZATION", "4", 3),
                        _tr("AUTHORIZATION", "PASS", "TRANSACTION", "4", 4)],
        "constraints": [{"text": "PASS only immediately after a successful USER", "kind": "dependent",
                         "provenance": prov("4", 9)}],
        "syntax_rules": [{"nonterminal": "USER", "definition_text": "USER name", "provenance": prov("4", 5)},
                         {"nonterminal": "PASS", "definition_text": "PASS string", "provenance": prov("4", 8)}],
    },
    "5": {
        "states": [_state("TRANSACTION", "5", 0), _state("UPDATE", "5", 28)],
        "commands": [_cmd(c, ["TRANSACTION"], "5", p) for c, p in TRANSACTION_CMDS]
                    + [_cmd("QUIT", ["TRANSACTION"], "5", 28)],
        "transitions": [_tr("TRANSACTION", c, "TRANSACTION", "5", p) for c, p in TRANSACTION_CMDS]
                       + [_tr("TRANSACTION", "QUIT", "UPDATE", "5", 28)],
        "constraints": [{"text": "msg >= 1", "kind": "independent", "provenance": prov("5", 15)},
                        {"text": "msg may not refer to a message marked as deleted", "kind": "independent",
                         "provenance": prov("5", 19)}],
        "syntax_rules": None,
    },
    "6": {
        "states": [_state("TRANSACTION", "6", 0), _state("UPDATE", "6", 0)],
        "commands": [_cmd("QUIT", ["TRANSACTION"], "6", 1)],
        "transitions": [_tr("TRANSACTION", "QUIT", "UPDATE", "6", 0)],
        "constraints": None,
        "syntax_rules": [{"nonterminal": "QUIT", "definition_text": "QUIT", "provenance": prov("6", 1)}],
    },
}


def _node(nid, label, kind, section, *p):
    return {"id": nid, "label": label, "type": kind, "provenance": [prov(section, *p)]}


def _edge(a, b, kind, section, *p, in_state=None):
    return {"source": a, "target": b, "type": kind, "provenance": [prov(section, *p)], "in_state": in_state}


MICROGRAPHS = {
    "3": {"nodes": [_node("s0", "AUTHORIZATION", "state", "3", 4), _node("s1", "TRANSACTION", "state", "3", 4),
                    _node("s2", "UPDATE", "state", "3", 4)],
          "edges": [], "constraints": []},
    "4": {"nodes": [_node("s0", "AUTHORIZATION", "state", "4", 2), _node("s1", "TRANSACTION", "state", "4", 4),
                    _node("c_user", "USER", "command", "4", 5), _node("c_pass", "PASS", "command", "4", 8)],
          "edges": [_edge("s0", "c_user", "invokes", "4", 3), _edge("s0", "c_pass", "invokes", "4", 3),
                    _edge("c_user", "s0", "yields", "4", 3, in_state="AUTHORIZATION"),
                    _edge("c_pass", "s1", "yields", "4", 4, in_state="AUTHORIZATION"),
                    _edge("c_pass", "c_user", "requires", "4", 9)],
          "constraints": [{"text": "PASS only immediately after a successful USER", "attached_to": "command:PASS",
                           "kind": "dependent", "provenance": [prov("4", 9)]}]},
    "5": {"nodes": [_node("s1", "TRANSACTION", "state", "5", 0), _node("s2", "UPDATE", "state", "5", 28)]
                   + [_node(f"c_{c.lower()}", c, "command", "5", p) for c, p in TRANSACTION_CMDS]
                   + [_node("c_quit", "QUIT", "command", "5", 28)],
          "edges": [e for c, p in TRANSACTION_CMDS for e in (
                        _edge("s1", f"c_{c.lower()}", "invokes", "5", 1),
                        _edge(f"c_{c.lower()}", "s1", "yields", "5", p, in_state="TRANSACTION"))]
                   + [_edge("s1", "c_quit", "invokes", "5", 28),
                      _edge("c_quit", "s2", "yields", "5", 28, in_state="TRANSACTION")],
          "constraints": [{"text": "msg >= 1", "attached_to": "command:RETR", "kind": "independent",
                           "provenance": [prov("5", 15)]},
                          {"text": "msg >= 1", "attached_to": "command:DELE", "kind": "independent",
                           "provenance": [prov("5", 19)]}]},
    "6": {"nodes": [_node("s1", "TRANSACTION", "state", "6", 0), _node("s2", "UPDATE", "state", "6", 0),
                    _node("c_quit", "QUIT", "command", "6", 1)],
          "edges": [_edge("s1", "c_quit", "invokes", "6", 0),
                    _edge("c_quit", "s2", "yields", "6", 0, in_state="TRANSACTION")],
          "constraints": []},
}


def synthesized_grammar() -> str:
    """The reference grammar without the optional commands and with CRLF
    replaced by a bare LF in the text branch of <ok_response>."""
    text = (POP3 / "golden.grammar").read_text()
    text = text.split("\n", 6)[-1]  # drop the header comment
    text = text.replace("<authorization> ::= <user_exchange> <pass_exchange> | <apop_exchange>",
                        "<authorization> ::= <user_exchange> <pass_exchange>")
    text = text.replace("    | <top_exchange> | <uidl_exchange> | <uidl_msg_exchange>\n", "")
    text = text.replace('<ok_response> ::= "+OK" <CRLF> | "+OK" <SP> <text> <CRLF>',
                        '<ok_response> ::= "+OK" <CRLF> | "+OK" <SP> <text> "\\n"')
    drop = ("<apop_exchange>", "<APOP>", "<top_exchange>", "<TOP>", "<uidl_exchange>", "<uidl_msg_exchange>",
            "<UIDL>", "<UIDL_msg>", "<uidl_response>", "<uidl_multi_response>", "<uid_lines>", "<uid_line>")
    out = []
    lines = text.splitlines(keepends=True)
    skipping = False
    for line in lines:
        if any(line.startswith(d + " ::=") for d in drop):
            skipping = True
            if out and out[-1].startswith("#@ provenance"):
                out.pop()
            continue
        if skipping and line.startswith("    "):
            continue
        skipping = False
        out.append(line)
    text = "".join(out)
    text = text.replace("<terminals> ::= <CRLF> | <SP> | <text> | <username> | <password> | <digest>\n"
                        "    | <msg_number> | <msg_count> | <octets> | <line_count> | <unique_id> | <line_text>",
                        "<terminals> ::= <CRLF> | <SP> | <text> | <username> | <password>\n"
                        "    | <msg_number> | <msg_count> | <octets> | <line_text>")
    text = re.sub(r'^<(digest|line_count|unique_id)> ::= .*\n', "", text, flags=re.M)
    parse_grammar(text)
    return text


_SECTION_RE = re.compile(r"^section_id: (\S+)$", re.M)


class ScriptedProvider:
    def __init__(self):
        self.fixer = ReferenceFixer(parse_grammar((POP3 / "golden.grammar").read_text()))
        self.grammar = synthesized_grammar()

    def complete(self, request):
        kind = request.kind
        if kind == "fix":
            return self.fixer.complete(request)
        if kind == "synthesize":
            return LlmResponse(self.grammar)
        sec = _SECTION_RE.search(request.prompt_blocks.payload).group(1)
        if kind == "classify":
            label, action, summary = CLASSIFY[sec]
            return LlmResponse(json.dumps({"section_id": sec, "label": label, "action": action,
                                           "summary": summary, "evidence": prov(sec, 0)}))
        if kind == "extract":
            return LlmResponse(json.dumps(FRAGMENTS[sec]))
        if kind == "micrograph":
            return LlmResponse(json.dumps(MICROGRAPHS[sec]))
        raise ValueError(f"no scripted answer for {kind}")


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--config", default="configs/pop3.toml")
    args = ap.parse_args()
    cfg = load_config(args.config, provider="record")
    fixtures = cfg.resolve(cfg.provider.fixture_dir)
    if fixtures.is_dir():
        shutil.rmtree(fixtures)
    with tempfile.TemporaryDirectory() as tmp:
        cfg = cfg.model_copy(update={"output_root": tmp})
        pipe = Pipeline(cfg, provider=RecordingProvider(ScriptedProvider(), fixtures))
        summary = pipe.run()
        shutil.copy(pipe.flow_dir / "graph.json", Path(str(POP3)) / "multigraph.json")
    print(json.dumps(summary["rounds"]), summary["metrics"]["trace_acceptance"])
    print(f"{len(list(fixtures.glob('*.json')))} fixtures in {fixtures}")


if __name__ == "__main__":
    main()
