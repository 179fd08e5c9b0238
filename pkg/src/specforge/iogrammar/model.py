"""Data model for I/O grammars and derivation trees."""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterator, Optional, Union

from ..ingest import Provenance

PARTIES = ("Client", "Server")
NAME_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_]*$")
START = "start"
TERMINALS = "terminals"


@dataclass(frozen=True)
class Loc:
    line: int
    col: int


@dataclass(frozen=True)
class Literal:
    value: bytes
    loc: Optional[Loc] = field(default=None, compare=False, repr=False)


@dataclass(frozen=True)
class Ref:
    name: str
    party: Optional[str] = None
    loc: Optional[Loc] = field(default=None, compare=False, repr=False)

    def __str__(self):
        return f"<{self.party}:{self.name}>" if self.party else f"<{self.name}>"


Symbol = Union[Literal, Ref]


@dataclass(frozen=True)
class Alternative:
    symbols: tuple[Symbol, ...]
    loc: Optional[Loc] = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "symbols", tuple(self.symbols))
        if not self.symbols:
            raise ValueError("alternatives must be non-empty")

    def refs(self) -> Iterator[Ref]:
        return (s for s in self.symbols if isinstance(s, Ref))


@dataclass(frozen=True)
class Lexeme:
    """A terminals-block definition: one literal or one regex."""

    name: str
    literal: Optional[bytes] = None
    pattern: Optional[str] = None
    loc: Optional[Loc] = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        if (self.literal is None) == (self.pattern is None):
            raise ValueError("lexeme needs exactly one of literal / pattern")

    @cached_property
    def regex(self) -> re.Pattern:
        if self.pattern is not None:
            return re.compile(self.pattern.encode("latin-1"))
        return re.compile(re.escape(self.literal))


@dataclass(frozen=True)
class Rule:
    name: str
    alternatives: tuple[Alternative, ...]
    constraints: tuple = ()
    provenance: Optional[Provenance] = None
    loc: Optional[Loc] = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "alternatives", tuple(self.alternatives))
        object.__setattr__(self, "constraints", tuple(self.constraints))


@dataclass(frozen=True)
class IOGrammar:
    """An I/O grammar: party-tagged productions plus a terminals block.

    ``rules`` keeps file order and, for grammars read leniently, may hold
    several blocks for one nonterminal; ``normalize_grammar`` merges them.
    """

    rules: tuple[Rule, ...]
    lexemes: tuple[Lexeme, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "rules", tuple(self.rules))
        object.__setattr__(self, "lexemes", tuple(self.lexemes))

    @property
    def start(self) -> str:
        return START

    @cached_property
    def _rule_map(self) -> dict[str, Rule]:
        out: dict[str, Rule] = {}
        for r in self.rules:
            out.setdefault(r.name, r)
        return out

    @cached_property
    def _lexeme_map(self) -> dict[str, Lexeme]:
        out: dict[str, Lexeme] = {}
        for lx in self.lexemes:
            out.setdefault(lx.name, lx)
        return out

    @property
    def productions(self) -> dict[str, tuple[Alternative, ...]]:
        return {name: r.alternatives for name, r in self._rule_map.items()}

    @property
    def constraints(self) -> list[tuple[str, "Constraint"]]:
        return [(r.name, c) for r in self._rule_map.values() for c in r.constraints]

    @property
    def terminals_block(self) -> dict[str, Lexeme]:
        return dict(self._lexeme_map)

    @property
    def provenance(self) -> dict[str, Provenance]:
        return {r.name: r.provenance for r in self._rule_map.values() if r.provenance is not None}

    def rule(self, name: str) -> Rule:
        return self._rule_map[name]

    def lexeme(self, name: str) -> Lexeme:
        return self._lexeme_map[name]

    def has_rule(self, name: str) -> bool:
        return name in self._rule_map

    def is_lexeme(self, name: str) -> bool:
        return name in self._lexeme_map

    def defines(self, name: str) -> bool:
        return name in self._rule_map or name in self._lexeme_map

    def replace_rules(self, rules) -> "IOGrammar":
        return IOGrammar(tuple(rules), self.lexemes)

    def tagged_refs(self) -> list[Ref]:
        seen = {}
        for r in self.rules:
            for alt in r.alternatives:
                for ref in alt.refs():
                    if ref.party:
                        seen.setdefault((ref.party, ref.name), Ref(ref.name, ref.party))
        return list(seen.values())


# --- derivation trees -------------------------------------------------------

@dataclass(eq=False)
class Node:
    """Derivation-tree node.

    ``kind`` is ``"rule"`` for nonterminal instances, ``"lexeme"`` for
    terminals-block leaves and ``"literal"`` for inline literals.  ``party``
    is the party in effect (inherited when the reference was untagged);
    ``tagged`` records whether the reference carried an explicit tag.
    """

    symbol: str
    kind: str
    party: Optional[str] = None
    children: list["Node"] = field(default_factory=list)
    value: Optional[bytes] = None
    tagged: bool = False

    @property
    def bytes(self) -> bytes:
        if self.value is not None:
            return self.value
        return b"".join(c.bytes for c in self.children)

    def text(self) -> str:
        return self.bytes.decode("latin-1")

    def walk(self) -> Iterator["Node"]:
        yield self
        for c in self.children:
            yield from c.walk()

    def leaves(self) -> Iterator["Node"]:
        if self.kind != "rule":
            yield self
        else:
            for c in self.children:
                yield from c.leaves()

    def messages(self) -> list["Node"]:
        """Outermost party-tagged subtrees, in order; each is one wire message."""
        out = []

        def visit(n):
            if n.tagged and n.party:
                out.append(n)
                return
            for c in n.children:
                visit(c)

        visit(self)
        return out

    def find_all(self, name: str) -> list["Node"]:
        """Descendants named ``name`` in preorder, excluding ``self``."""
        return [n for c in self.children for n in c.walk() if n.symbol == name and n.kind != "literal"]

    def replace_with(self, other: "Node") -> None:
        self.children = other.children
        self.value = other.value

    def structure(self):
        if self.kind == "rule":
            return (self.symbol, self.party, tuple(c.structure() for c in self.children))
        return (self.symbol, self.party, self.value)

    def __repr__(self):
        return f"Node({self.symbol!r}, {self.kind}, {self.bytes!r})"
