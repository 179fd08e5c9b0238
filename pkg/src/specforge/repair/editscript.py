"""Minimal edit scripts over terminal-level token sequences."""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Optional, Sequence

from ..errors import ParseFailure
from ..iogrammar.matcher import parse_message
from ..iogrammar.model import IOGrammar, Literal, Ref


@dataclass(frozen=True)
class EditOp:
    kind: str  # insert | delete | substitute
    at: int  # position in the source sequence
    token: str
    new: Optional[str] = None

    def to_json(self) -> dict:
        d = {"op": self.kind, "at": self.at, "token": self.token}
        if self.new is not None:
            d["new"] = self.new
        return d

    def __str__(self):
        if self.kind == "substitute":
            return f"substitute {self.token!r} -> {self.new!r} at {self.at}"
        return f"{self.kind} {self.token!r} at {self.at}"


@dataclass(frozen=True)
class EditScript:
    ops: tuple[EditOp, ...]

    @property
    def cost(self) -> int:
        return len(self.ops)

    def apply(self, source: Sequence[str]) -> list[str]:
        out: list[str] = []
        i = 0
        for op in self.ops:
            out.extend(source[i:op.at])
            i = max(i, op.at)
            if op.kind == "insert":
                out.append(op.token)
            elif op.kind == "delete":
                i = op.at + 1
            else:
                out.append(op.new)
                i = op.at + 1
        out.extend(source[i:])
        return out

    def to_json(self) -> dict:
        return {"cost": self.cost, "ops": [o.to_json() for o in self.ops]}


def min_edit_script(source: Sequence[str], target: Sequence[str]) -> EditScript:
    """Unit-cost Levenshtein script; among optimal scripts, prefer
    substitute over delete over insert at every step, left to right."""
    n, m = len(source), len(target)
    # d[i][j]: distance between source[i:] and target[j:]
    d = [[0] * (m + 1) for _ in range(n + 1)]
    for i in range(n, -1, -1):
        for j in range(m, -1, -1):
            if i == n:
                d[i][j] = m - j
            elif j == m:
                d[i][j] = n - i
            else:
                same = 0 if source[i] == target[j] else 1
                d[i][j] = min(d[i + 1][j + 1] + same, d[i + 1][j] + 1, d[i][j + 1] + 1)
    ops = []
    i = j = 0
    while i < n or j < m:
        if i < n and j < m and source[i] == target[j] and d[i][j] == d[i + 1][j + 1]:
            i, j = i + 1, j + 1
        elif i < n and j < m and d[i][j] == d[i + 1][j + 1] + 1:
            ops.append(EditOp("substitute", i, source[i], target[j]))
            i, j = i + 1, j + 1
        elif i < n and d[i][j] == d[i + 1][j] + 1:
            ops.append(EditOp("delete", i, source[i]))
            i += 1
        else:
            ops.append(EditOp("insert", i, target[j]))
            j += 1
    return EditScript(tuple(ops))


# --- tokenization -----------------------------------------------------------------

_RAW_RE = re.compile(rb"\r\n|\n|[ \t]+|[^ \t\r\n]+")


def _literal_token(b: bytes) -> str:
    return b.decode("latin-1")


def tokens_of_tree(g: IOGrammar, tree) -> list[str]:
    """Leaves of a parse tree in lexeme vocabulary: lexemes as ``<name>``,
    literals as their text."""
    out = []
    for leaf in tree.leaves():
        if leaf.kind == "lexeme":
            out.append(f"<{leaf.symbol}>")
        elif leaf.value:
            out.append(_literal_token(leaf.value))
    return out


def abstract_tokens(g: IOGrammar, data: bytes, vocabulary: Sequence[str] = ()) -> list[str]:
    """Raw whitespace/CRLF-delimited tokens mapped onto lexeme names.

    A token equal to a literal lexeme becomes that lexeme; otherwise the
    first regex lexeme of ``vocabulary`` matching it in full is used; the
    raw text is kept when nothing fits.
    """
    literal_lex = {lx.literal: lx.name for lx in g.lexemes if lx.literal is not None}
    regex_lex = [g.lexeme(n) for n in vocabulary if g.is_lexeme(n) and g.lexeme(n).pattern is not None]
    out = []
    for m in _RAW_RE.finditer(data):
        tok = m.group()
        if tok in literal_lex:
            out.append(f"<{literal_lex[tok]}>")
            continue
        for lx in regex_lex:
            if lx.regex.fullmatch(tok):
                out.append(f"<{lx.name}>")
                break
        else:
            out.append(_literal_token(tok))
    return out


def reply_tokens(g: IOGrammar, nt: str, data: bytes, vocabulary: Sequence[str] = ()) -> list[str]:
    """Grammar lexemes when ``data`` parses as ``nt``, raw tokens otherwise."""
    try:
        return tokens_of_tree(g, parse_message(g, nt, data))
    except ParseFailure:
        return abstract_tokens(g, data, vocabulary)


def inline_alternatives(g: IOGrammar, name: str, depth: int = 3) -> list[list[str]]:
    """Terminal-level token sequences for each alternative of ``name``.

    Untagged single-alternative, non-recursive rules are inlined up to
    ``depth`` levels; anything else stays as a ``<ref>`` token.
    """

    def expand(sym, d, seen) -> list[str]:
        if isinstance(sym, Literal):
            return [_literal_token(sym.value)] if sym.value else []
        if g.is_lexeme(sym.name):
            return [f"<{sym.name}>"]
        if d <= 0 or sym.name in seen or not g.has_rule(sym.name) or len(g.rule(sym.name).alternatives) != 1:
            return [str(Ref(sym.name, sym.party))]
        out = []
        for s in g.rule(sym.name).alternatives[0].symbols:
            out.extend(expand(s, d - 1, seen | {sym.name}))
        return out

    if not g.has_rule(name):
        return []
    res = []
    for alt in g.rule(name).alternatives:
        seq = []
        for s in alt.symbols:
            seq.extend(expand(s, depth, {name}))
        res.append(seq)
    return res


def lexeme_vocabulary(g: IOGrammar, name: str) -> list[str]:
    """Lexeme names used (through untagged refs) by ``name``, in first-use order."""
    out: list[str] = []
    seen = set()
    stack = [name]
    while stack:
        n = stack.pop(0)
        if n in seen:
            continue
        seen.add(n)
        if g.is_lexeme(n):
            if n not in out:
                out.append(n)
            continue
        if not g.has_rule(n):
            continue
        for alt in g.rule(n).alternatives:
            for s in alt.symbols:
                if isinstance(s, Ref):
                    stack.append(s.name)
    return out
