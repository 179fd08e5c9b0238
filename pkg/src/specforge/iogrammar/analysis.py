"""Static questions about a grammar relative to command sequences.

The central computation is a fixpoint over *position relations*: for a
command word ``w = c1..cn`` every symbol ``X`` gets the set of pairs
``(i, j)`` such that some derivation of ``X`` emits client messages that
cover ``w[i:j]``, together with the cheapest such derivation's cost.  Two
covering modes exist:

* ``exact``: the client messages are exactly ``c(i+1)..cj``;
* ``subsequence``: they contain ``c(i+1)..cj`` in order, possibly with
  other client messages in between.

A client message covers command ``c`` when ``c`` occurs as a literal word
somewhere in its nonterminal's definition.  Server messages cover nothing.
"""

from __future__ import annotations

import random
import re
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

from ..errors import ParseFailure
from .derive import INF, min_depths
from .matcher import parse_message
from .model import START, IOGrammar, Literal, Node, Ref

WORD_RE = re.compile(rb"[A-Za-z][A-Za-z0-9]*")

Cost = tuple[int, int]  # (messages, rule expansions)
ZERO: Cost = (0, 0)


def _add(a: Cost, b: Cost) -> Cost:
    return (a[0] + b[0], a[1] + b[1])


def commands_of(mtp) -> list[str]:
    cmds = getattr(mtp, "commands", mtp)
    return [c.upper() for c in cmds]


# --- keyword tables ------------------------------------------------------------

def keywords(g: IOGrammar, name: str, _seen: Optional[set] = None) -> set[str]:
    """Upper-cased literal words reachable from ``name`` without crossing a party tag."""
    seen = _seen if _seen is not None else set()
    if name in seen:
        return set()
    seen.add(name)
    if g.is_lexeme(name):
        lx = g.lexeme(name)
        return {w.decode().upper() for w in WORD_RE.findall(lx.literal)} if lx.literal else set()
    if not g.has_rule(name):
        return set()
    out: set[str] = set()
    for alt in g.rule(name).alternatives:
        for s in alt.symbols:
            if isinstance(s, Literal):
                out.update(w.decode().upper() for w in WORD_RE.findall(s.value))
            elif s.party is None:
                out |= keywords(g, s.name, seen)
    return out


def has_keyword(g: IOGrammar, tree: Node, word: str) -> bool:
    """Whether ``word`` occurs in a literal (or literal lexeme) leaf of ``tree``."""
    word = word.upper()
    for leaf in tree.leaves():
        if leaf.kind == "lexeme" and not (g.is_lexeme(leaf.symbol) and g.lexeme(leaf.symbol).literal is not None):
            continue
        if word in {w.decode().upper() for w in WORD_RE.findall(leaf.value or b"")}:
            return True
    return False


# --- the position-relation fixpoint ---------------------------------------------

class CoverageTable:
    """Least-fixpoint relation table for one grammar and one command word."""

    def __init__(self, g: IOGrammar, commands: Sequence[str], mode: str = "subsequence"):
        if mode not in ("exact", "subsequence"):
            raise ValueError(mode)
        self.g = g
        self.w = [c.upper() for c in commands]
        self.n = len(self.w)
        self.mode = mode
        self.productive = {k for k, v in min_depths(g).items() if v < INF}
        self._kw: dict[str, set[str]] = {}
        self.table: dict[str, dict[tuple[int, int], Cost]] = {name: {} for name in g.productions}
        self._solve()

    def kw(self, name: str) -> set[str]:
        if name not in self._kw:
            self._kw[name] = keywords(self.g, name)
        return self._kw[name]

    def rel(self, sym, party: Optional[str]) -> dict[tuple[int, int], Cost]:
        """Relation of one symbol occurrence; ``party`` is the party in effect."""
        n = self.n
        if isinstance(sym, Ref) and sym.party is not None:
            if self.g.is_lexeme(sym.name) or sym.name in self.productive:
                if sym.party == "Server":
                    return {(i, i): (1, 0) for i in range(n + 1)}
                kws = self.kw(sym.name)
                out = {(i, i + 1): (1, 0) for i in range(n) if self.w[i] in kws}
                if self.mode == "subsequence":
                    for i in range(n + 1):
                        out.setdefault((i, i), (1, 0))
                return out
            return {}
        if isinstance(sym, Literal) or self.g.is_lexeme(sym.name):
            return {(i, i): ZERO for i in range(n + 1)}
        return self.table.get(sym.name, {})

    def seq_rel(self, symbols) -> dict[tuple[int, int], Cost]:
        cur: dict[tuple[int, int], Cost] = {(i, i): ZERO for i in range(self.n + 1)}
        for s in symbols:
            r = self.rel(s, None)
            if not r:
                return {}
            by_start: dict[int, list] = {}
            for (a, b), c in r.items():
                by_start.setdefault(a, []).append((b, c))
            nxt: dict[tuple[int, int], Cost] = {}
            for (i, m), c1 in cur.items():
                for j, c2 in by_start.get(m, ()):
                    c = _add(c1, c2)
                    if c < nxt.get((i, j), (INF, INF)):
                        nxt[(i, j)] = c
            cur = nxt
            if not cur:
                return {}
        return cur

    def _solve(self):
        changed = True
        while changed:
            changed = False
            for name, alts in self.g.productions.items():
                tab = self.table[name]
                for alt in alts:
                    for key, c in self.seq_rel(alt.symbols).items():
                        c = _add(c, (0, 1))
                        if c < tab.get(key, (INF, INF)):
                            tab[key] = c
                            changed = True

    def covers(self, name: str = START) -> bool:
        return (0, self.n) in self.table.get(name, {})

    # --- plan reconstruction -----------------------------------------------

    def plan(self, rng: random.Random, name: str = START) -> Node:
        """A derivation skeleton covering the whole word at minimum cost.

        Party-tagged references become empty placeholder nodes; client
        placeholders carry ``command`` (the word they cover, or ``None``).
        Ties between equally cheap choices are broken by ``rng``.
        """
        if not self.covers(name):
            raise ValueError(f"<{name}> cannot cover {self.w}")
        return self._build_rule(name, None, False, 0, self.n, rng)

    def _build_rule(self, name, party, tagged, i, j, rng) -> Node:
        target = self.table[name][(i, j)]
        options = []
        for alt in self.g.rule(name).alternatives:
            r = self.seq_rel(alt.symbols)
            if (i, j) in r and _add(r[(i, j)], (0, 1)) == target:
                options.append(alt)
        alt = options[rng.randrange(len(options))]
        node = Node(name, "rule", party, tagged=tagged)
        node.children = self._build_seq(list(alt.symbols), party, i, j, rng)
        return node

    def _build_seq(self, symbols, party, i, j, rng) -> list[Node]:
        # suffix[t][p] = best cost of symbols[t:] from position p to j
        k = len(symbols)
        rels = [self.rel(s, party) for s in symbols]
        suffix: list[dict[int, Cost]] = [dict() for _ in range(k + 1)]
        suffix[k][j] = ZERO
        for t in range(k - 1, -1, -1):
            for (a, b), c in rels[t].items():
                if b in suffix[t + 1]:
                    tot = _add(c, suffix[t + 1][b])
                    if tot < suffix[t].get(a, (INF, INF)):
                        suffix[t][a] = tot
        out = []
        p = i
        for t, s in enumerate(symbols):
            best = suffix[t][p]
            moves = [(b, c) for (a, b), c in rels[t].items() if a == p and b in suffix[t + 1] and _add(c, suffix[t + 1][b]) == best]
            moves.sort()
            b, _ = moves[rng.randrange(len(moves))]
            out.append(self._build_symbol(s, party, p, b, rng))
            p = b
        return out

    def _build_symbol(self, s, party, i, j, rng) -> Node:
        if isinstance(s, Literal):
            return Node(repr(s.value), "literal", party, value=s.value)
        eff = s.party or party
        if s.party is not None:
            node = Node(s.name, "lexeme" if self.g.is_lexeme(s.name) else "rule", eff, tagged=True)
            node.command = self.w[i] if j == i + 1 else None
            node.placeholder = True
            return node
        if self.g.is_lexeme(s.name):
            lx = self.g.lexeme(s.name)
            return Node(s.name, "lexeme", eff, value=lx.literal) if lx.literal is not None else Node(s.name, "lexeme", eff)
        return self._build_rule(s.name, eff, False, i, j, rng)


def check_mtp_generatable(g: IOGrammar, mtp) -> bool:
    """True iff some derivation contains one client message per MTP command, in order."""
    cmds = commands_of(mtp)
    if not cmds:
        return True
    if not g.has_rule(START):
        return False
    return CoverageTable(g, cmds, "subsequence").covers()


def generatable_set(g: IOGrammar, mtps: Iterable) -> set[int]:
    return {i for i, m in enumerate(mtps) if check_mtp_generatable(g, m)}


def steer(g: IOGrammar, mtp, rng: random.Random) -> tuple[Node, str]:
    """Plan a session for ``mtp``: exact coverage if possible, else subsequence."""
    cmds = commands_of(mtp)
    for mode in ("exact", "subsequence"):
        table = CoverageTable(g, cmds, mode)
        if table.covers():
            return table.plan(rng), mode
    raise ValueError(f"grammar cannot generate {cmds}")


# --- reachability and elements ------------------------------------------------

def reachable_messages(g: IOGrammar, start: str = START) -> list[Ref]:
    """Party-tagged references reachable from ``start`` through productive alternatives."""
    productive = {k for k, v in min_depths(g).items() if v < INF}

    def ok(s) -> bool:
        return isinstance(s, Literal) or g.is_lexeme(s.name) or s.name in productive

    seen_rules = set()
    out: dict[tuple, Ref] = {}
    stack = [start]
    while stack:
        name = stack.pop()
        if name in seen_rules or not g.has_rule(name):
            continue
        seen_rules.add(name)
        for alt in g.rule(name).alternatives:
            if not all(ok(s) for s in alt.symbols):
                continue
            for ref in alt.refs():
                if ref.party:
                    out.setdefault((ref.party, ref.name), Ref(ref.name, ref.party))
                else:
                    stack.append(ref.name)
    return sorted(out.values(), key=lambda r: (r.party, r.name))


@dataclass(frozen=True)
class GrammarElements:
    client: frozenset[str]
    server: frozenset[str]
    independent: frozenset[str]
    dependent: frozenset[str]

    KINDS = ("client", "server", "independent", "dependent")

    def as_dict(self) -> dict[str, list[str]]:
        return {k: sorted(getattr(self, k)) for k in self.KINDS}

    @classmethod
    def from_dict(cls, d: dict) -> "GrammarElements":
        return cls(*(frozenset(d.get(k, ())) for k in cls.KINDS))


def canonical_message_label(name: str) -> str:
    return re.sub(r"[^a-z0-9]", "", name.lower())


def constraint_label(owner: str, text: str) -> str:
    return f"{owner}: {text}"


def grammar_elements(g: IOGrammar) -> GrammarElements:
    client, server = set(), set()
    for ref in g.tagged_refs():
        (client if ref.party == "Client" else server).add(canonical_message_label(ref.name))
    ind, dep = set(), set()
    for owner, c in g.constraints:
        for atom in c.atoms():
            (dep if atom.kind == "dependent" else ind).add(constraint_label(owner, atom.text))
    return GrammarElements(frozenset(client), frozenset(server), frozenset(ind), frozenset(dep))


# --- mandated forms -------------------------------------------------------------

@dataclass(frozen=True)
class MandatedForm:
    """An RFC-described client message variant that a grammar must be able to emit."""

    form_id: str
    command: str
    example: bytes
    route: tuple[str, ...]
    evidence: str = ""

    @classmethod
    def from_json(cls, d: dict) -> "MandatedForm":
        return cls(
            d["form_id"],
            d["command"].upper(),
            d["example"].encode("latin-1"),
            tuple(c.upper() for c in d["route"]),
            d.get("evidence", ""),
        )

    def to_json(self) -> dict:
        return {
            "form_id": self.form_id,
            "command": self.command,
            "example": self.example.decode("latin-1"),
            "route": list(self.route),
            "evidence": self.evidence,
        }


def form_generatable(g: IOGrammar, form: MandatedForm) -> bool:
    """The example parses as a reachable client message and its route is generatable."""
    if not check_mtp_generatable(g, form.route):
        return False
    for ref in reachable_messages(g):
        if ref.party != "Client" or form.command not in keywords(g, ref.name):
            continue
        try:
            parse_message(g, ref.name, form.example, party="Client")
            return True
        except ParseFailure:
            continue
    return False


def missing_forms(g: IOGrammar, forms: Iterable[MandatedForm]) -> list[MandatedForm]:
    return [f for f in forms if not form_generatable(g, f)]
