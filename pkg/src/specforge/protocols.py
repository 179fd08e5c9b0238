"""Reference material shipped for a protocol: RFC text, golden grammar,
element lists, mandated forms and the merged multigraph."""

from __future__ import annotations

import json
from dataclasses import dataclass
from functools import cached_property
from importlib import resources
from pathlib import Path

from .graph import Mtp, Multigraph, compute_mtps
from .ingest import SectionRecord, ingest_file
from .iogrammar.analysis import GrammarElements, MandatedForm
from .iogrammar.model import IOGrammar
from .iogrammar.text import parse_grammar


def protocol_dir(name: str) -> Path:
    return Path(str(resources.files("specforge") / "data" / "protocols" / name))


@dataclass(frozen=True)
class ProtocolBundle:
    name: str
    rfc_file: str
    rfc_id: str
    initial_states: tuple[str, ...]
    terminal_states: tuple[str, ...]

    @property
    def dir(self) -> Path:
        return protocol_dir(self.name)

    @cached_property
    def golden(self) -> IOGrammar:
        return parse_grammar((self.dir / "golden.grammar").read_text(encoding="utf-8"))

    @cached_property
    def elements(self) -> GrammarElements:
        return GrammarElements.from_dict(json.loads((self.dir / "elements.json").read_text(encoding="utf-8")))

    @cached_property
    def mandated_forms(self) -> list[MandatedForm]:
        return [MandatedForm.from_json(d) for d in json.loads((self.dir / "mandated_forms.json").read_text(encoding="utf-8"))]

    @cached_property
    def multigraph(self) -> Multigraph:
        return Multigraph.load(self.dir / "multigraph.json")

    @cached_property
    def mtps(self) -> list[Mtp]:
        g = self.multigraph
        return compute_mtps(g, self.initial_states, g.commands, self.terminal_states)

    @cached_property
    def sections(self) -> list[SectionRecord]:
        return ingest_file(self.dir / self.rfc_file, self.rfc_id)


POP3 = ProtocolBundle("pop3", "rfc1939.txt", "1939", ("AUTHORIZATION",), ("UPDATE",))
