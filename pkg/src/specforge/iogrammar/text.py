"""Reading and writing the textual grammar format.

::

    # comment
    #@ provenance rfc=1939 section=5 paragraphs=3,4
    <start> ::= <Server:greeting> <session>
    <session> ::= <Client:QUIT> <Server:ok>
        | <Client:NOOP> <Server:ok> <session>
    <QUIT> ::= "QUIT" <CRLF>
    <ok> ::= "+OK" <CRLF>
    where len(<CRLF>) == 2
    <terminals> ::= <CRLF>
    <CRLF> ::= "\\r\\n"

Everything after the ``<terminals>`` production belongs to the terminals
block; its definitions are a single literal or ``re("pattern")``.
"""

from __future__ import annotations

import re
from typing import Optional

from ..errors import DuplicateDefinition, GrammarSyntaxError, UndefinedNonterminal, UnknownPartyTag
from ..ingest import Provenance
from .constraints import Constraint, _quote, parse_constraint, unescape
from .model import NAME_RE, PARTIES, START, TERMINALS, Alternative, IOGrammar, Lexeme, Literal, Loc, Ref, Rule

_TOK_RE = re.compile(
    r"""
    (?P<ws>[ \t]+)
  | (?P<define>::=)
  | (?P<bar>\|)
  | (?P<regex>re\("(?:[^"\\]|\\.)*"\))
  | (?P<lit>"(?:[^"\\]|\\.)*")
  | (?P<ref><[^<>\s]*>)
  | (?P<comment>\#.*)
    """,
    re.VERBOSE,
)
_PRAGMA_RE = re.compile(r"^#@\s*provenance\s+rfc=(\S+)\s+section=(\S+)\s+paragraphs=([\d,]+)\s*$")
_WHERE_RE = re.compile(r"^(\s*)where\b(.*)$")


class _Regex:
    __slots__ = ("pattern", "loc")

    def __init__(self, pattern, loc):
        self.pattern = pattern
        self.loc = loc


def _strip_comment(line: str) -> str:
    """Drop a ``#`` comment, ignoring ``#`` inside string literals."""
    in_str = False
    i = 0
    while i < len(line):
        ch = line[i]
        if in_str:
            if ch == "\\":
                i += 2
                continue
            if ch == '"':
                in_str = False
        elif ch == '"':
            in_str = True
        elif ch == "#":
            return line[:i]
        i += 1
    return line


def _tokenize(text: str, lineno: int, offset: int = 0):
    toks = []
    pos = 0
    while pos < len(text):
        m = _TOK_RE.match(text, pos)
        if not m:
            raise GrammarSyntaxError(f"unexpected text {text[pos:pos + 20]!r}", lineno, offset + pos + 1)
        kind = m.lastgroup
        loc = Loc(lineno, offset + pos + 1)
        val = m.group()
        if kind == "ref":
            toks.append(("ref", _parse_ref(val, loc), loc))
        elif kind == "lit":
            toks.append(("sym", Literal(unescape(val[1:-1]).encode("utf-8"), loc), loc))
        elif kind == "regex":
            toks.append(("sym", _Regex(unescape(val[4:-2]), loc), loc))
        elif kind in ("define", "bar"):
            toks.append((kind, val, loc))
        pos = m.end()
    return toks


def _parse_ref(text: str, loc: Loc) -> Ref:
    inner = text[1:-1]
    party = None
    if ":" in inner:
        party, inner = inner.split(":", 1)
        if party not in PARTIES:
            raise UnknownPartyTag(f"unknown party tag {party!r} in {text}", loc.line, loc.col)
    if not NAME_RE.match(inner):
        raise GrammarSyntaxError(f"bad nonterminal name {text}", loc.line, loc.col)
    return Ref(inner, party, loc)


class _Draft:
    def __init__(self, head: Ref, loc: Loc, provenance):
        self.head = head
        self.loc = loc
        self.provenance = provenance
        self.tokens: list = []
        self.constraints: list[Constraint] = []


def _alternatives(draft: _Draft) -> list[list]:
    alts: list[list] = [[]]
    for kind, val, loc in draft.tokens:
        if kind == "bar":
            alts.append([])
        elif kind == "define":
            raise GrammarSyntaxError("unexpected '::='", loc.line, loc.col)
        else:
            alts[-1].append((val, loc))
    for a in alts:
        if not a:
            raise GrammarSyntaxError(f"empty alternative in <{draft.head.name}>", draft.loc.line, draft.loc.col)
    return alts


def parse_grammar(text: str, strict: bool = True) -> IOGrammar:
    """Parse grammar text.

    With ``strict=False`` the structural checks (start first, unique
    definitions, all references defined, terminals list complete) are
    skipped so that ``normalize_grammar`` can repair the result.
    """
    drafts: list[_Draft] = []
    pending_prov: Optional[Provenance] = None
    # only LF ends a line; other control bytes may sit inside literals
    for lineno, raw in enumerate(text.replace("\r\n", "\n").split("\n"), start=1):
        pragma = _PRAGMA_RE.match(raw.strip())
        if pragma:
            idx = tuple(int(x) for x in pragma.group(3).split(",") if x)
            pending_prov = Provenance(pragma.group(1), pragma.group(2), idx)
            continue
        line = _strip_comment(raw).rstrip()
        if not line.strip():
            continue
        w = _WHERE_RE.match(line)
        if w:
            if not drafts:
                raise GrammarSyntaxError("'where' before any production", lineno, 1)
            col = len(w.group(1)) + len("where")
            drafts[-1].constraints.append(parse_constraint(w.group(2), lineno, col))
            continue
        if line[0] in " \t":
            if not drafts:
                raise GrammarSyntaxError("continuation line before any production", lineno, 1)
            if drafts[-1].constraints:
                raise GrammarSyntaxError("alternatives may not follow 'where'", lineno, 1)
            drafts[-1].tokens.extend(_tokenize(line, lineno))
            continue
        if line[0] != "<":
            raise GrammarSyntaxError(f"expected a production, found {line[:30]!r}", lineno, 1)
        toks = _tokenize(line, lineno)
        if len(toks) < 2 or toks[0][0] != "ref" or toks[1][0] != "define":
            raise GrammarSyntaxError("expected '<name> ::='", lineno, 1)
        head = toks[0][1]
        if head.party:
            raise GrammarSyntaxError(f"production heads carry no party tag: {head}", lineno, 1)
        d = _Draft(head, toks[0][2], pending_prov)
        pending_prov = None
        d.tokens = toks[2:]
        drafts.append(d)

    rules: list[Rule] = []
    lexemes: list[Lexeme] = []
    declared: list[str] = []
    in_terminals = False
    for d in drafts:
        alts = _alternatives(d)
        name = d.head.name
        if name == TERMINALS:
            if in_terminals and strict:
                raise DuplicateDefinition("second <terminals> block", d.loc.line, d.loc.col)
            in_terminals = True
            for a in alts:
                if len(a) != 1 or not isinstance(a[0][0], Ref) or a[0][0].party:
                    loc = a[0][1]
                    raise GrammarSyntaxError("<terminals> alternatives must each name one lexeme", loc.line, loc.col)
                declared.append(a[0][0].name)
            continue
        if in_terminals:
            if d.constraints:
                raise GrammarSyntaxError("constraints are not allowed in the terminals block", d.loc.line, d.loc.col)
            if len(alts) != 1 or len(alts[0]) != 1 or isinstance(alts[0][0][0], Ref):
                raise GrammarSyntaxError(f"lexeme <{name}> must be one literal or re(...)", d.loc.line, d.loc.col)
            sym = alts[0][0][0]
            if isinstance(sym, _Regex):
                try:
                    re.compile(sym.pattern.encode("latin-1"))
                except (re.error, UnicodeEncodeError) as exc:
                    raise GrammarSyntaxError(f"bad regex in <{name}>: {exc}", sym.loc.line, sym.loc.col) from None
                lexemes.append(Lexeme(name, pattern=sym.pattern, loc=d.loc))
            else:
                lexemes.append(Lexeme(name, literal=sym.value, loc=d.loc))
            continue
        alternatives = []
        for a in alts:
            for val, loc in a:
                if isinstance(val, _Regex):
                    raise GrammarSyntaxError("re(...) is only allowed in the terminals block", loc.line, loc.col)
            alternatives.append(Alternative(tuple(v for v, _ in a), a[0][1]))
        rules.append(Rule(name, tuple(alternatives), tuple(d.constraints), d.provenance, d.loc))

    g = IOGrammar(tuple(rules), tuple(lexemes))
    object.__setattr__(g, "declared_terminals", tuple(declared))
    if strict:
        validate(g)
    return g


def validate(g: IOGrammar) -> None:
    """Check the structural invariants of an I/O grammar; raise on the first violation."""
    if not g.rules or g.rules[0].name != START:
        loc = g.rules[0].loc if g.rules else None
        raise GrammarSyntaxError("the first production must be <start>", loc.line if loc else None, loc.col if loc else None)
    seen: dict[str, Rule] = {}
    for r in g.rules:
        if r.name in seen:
            raise DuplicateDefinition(f"<{r.name}> defined twice", r.loc.line if r.loc else None, r.loc.col if r.loc else None)
        seen[r.name] = r
        alts = set()
        for a in r.alternatives:
            if a.symbols in alts:
                raise DuplicateDefinition(f"duplicate alternative in <{r.name}>", a.loc.line if a.loc else None, a.loc.col if a.loc else None)
            alts.add(a.symbols)
    lex_names = set()
    for lx in g.lexemes:
        if lx.name in lex_names or lx.name in seen or lx.name in (START, TERMINALS):
            raise DuplicateDefinition(f"<{lx.name}> defined twice", lx.loc.line if lx.loc else None, lx.loc.col if lx.loc else None)
        lex_names.add(lx.name)
    declared = getattr(g, "declared_terminals", None)
    if declared is not None and declared != () and set(declared) != lex_names:
        missing = sorted(set(declared) - lex_names)
        if missing:
            raise UndefinedNonterminal(missing[0])
        extra = sorted(lex_names - set(declared))
        raise GrammarSyntaxError(f"lexeme <{extra[0]}> is not listed in <terminals>")
    for r in g.rules:
        for a in r.alternatives:
            for ref in a.refs():
                if ref.name not in seen and ref.name not in lex_names:
                    raise UndefinedNonterminal(ref.name, ref.loc.line if ref.loc else None, ref.loc.col if ref.loc else None)
                if ref.party is not None and ref.party not in PARTIES:
                    raise UnknownPartyTag(f"unknown party {ref.party!r}")


# --- serialization -----------------------------------------------------------

def _lit_text(b: bytes) -> str:
    return _quote(b.decode("utf-8", errors="surrogateescape"))


def symbol_text(s) -> str:
    return str(s) if isinstance(s, Ref) else _lit_text(s.value)


def alternative_text(a: Alternative) -> str:
    return " ".join(symbol_text(s) for s in a.symbols)


def provenance_pragma(p: Provenance) -> str:
    return f"#@ provenance rfc={p.rfc_id} section={p.section_id} paragraphs={','.join(map(str, p.paragraph_indices))}"


def rule_text(r: Rule) -> str:
    lines = []
    if r.provenance is not None:
        lines.append(provenance_pragma(r.provenance))
    alts = [alternative_text(a) for a in r.alternatives]
    head = f"<{r.name}> ::= "
    one = head + " | ".join(alts)
    if len(one) <= 100 or len(alts) == 1:
        lines.append(one)
    else:
        lines.append(head + alts[0])
        lines.extend("    | " + a for a in alts[1:])
    lines.extend("where " + c.text for c in r.constraints)
    return "\n".join(lines)


def lexeme_text(lx: Lexeme) -> str:
    if lx.pattern is not None:
        return f"<{lx.name}> ::= re({_quote(lx.pattern)})"
    return f"<{lx.name}> ::= {_lit_text(lx.literal)}"


def serialize_grammar(g: IOGrammar) -> str:
    parts = [rule_text(r) for r in g.rules]
    if g.lexemes:
        block = ["<terminals> ::= " + " | ".join(f"<{lx.name}>" for lx in g.lexemes)]
        block.extend(lexeme_text(lx) for lx in g.lexemes)
        parts.append("\n".join(block))
    return "\n\n".join(parts) + "\n"


def structurally_equal(a: IOGrammar, b: IOGrammar) -> bool:
    return a.rules == b.rules and a.lexemes == b.lexemes
