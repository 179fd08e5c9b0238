"""Matching wire bytes against a nonterminal.

Ordered choice with backtracking: alternatives are tried in file order and
the first complete parse wins, so every input has at most one accepted
tree.  A step budget bounds pathological grammars.
"""

from __future__ import annotations

import sys
from typing import Iterator

from ..errors import ParseFailure
from .model import IOGrammar, Literal, Node, Ref

DEFAULT_BUDGET = 200_000


class _BudgetExceeded(Exception):
    pass


class _Matcher:
    def __init__(self, g: IOGrammar, data: bytes, budget: int):
        self.g = g
        self.data = data
        self.budget = budget
        self.steps = 0
        self.fail_pos = -1
        self.expected: set[str] = set()
        self.fail_stack: tuple[str, ...] = ()
        self.stack: list[str] = []
        self.active: set[tuple[str, int]] = set()

    def _tick(self):
        self.steps += 1
        if self.steps > self.budget:
            raise _BudgetExceeded()

    def _fail(self, pos: int, what: str):
        if pos > self.fail_pos:
            self.fail_pos = pos
            self.expected = {what}
            self.fail_stack = tuple(self.stack)
        elif pos == self.fail_pos:
            self.expected.add(what)
            if len(self.stack) > len(self.fail_stack):
                self.fail_stack = tuple(self.stack)

    def symbol(self, sym, pos: int, party) -> Iterator[tuple[Node, int]]:
        self._tick()
        if isinstance(sym, Literal):
            if self.data.startswith(sym.value, pos):
                yield Node(repr(sym.value), "literal", party, value=sym.value), pos + len(sym.value)
            else:
                self._fail(pos, repr(sym.value.decode("latin-1")))
            return
        eff = sym.party or party
        if self.g.is_lexeme(sym.name):
            yield from self.lexeme(sym, pos, eff)
            return
        yield from self.rule(sym.name, pos, eff, sym.party is not None)

    def lexeme(self, ref: Ref, pos: int, party) -> Iterator[tuple[Node, int]]:
        lx = self.g.lexeme(ref.name)
        if lx.literal is not None:
            if self.data.startswith(lx.literal, pos):
                yield Node(ref.name, "lexeme", party, value=lx.literal, tagged=ref.party is not None), pos + len(lx.literal)
            else:
                self._fail(pos, f"<{ref.name}>")
            return
        m = lx.regex.match(self.data, pos)
        greedy = m.end() if m else None
        if greedy is not None:
            yield Node(ref.name, "lexeme", party, value=self.data[pos:greedy], tagged=ref.party is not None), greedy
        # shorter matches, longest first
        top = greedy if greedy is not None else len(self.data)
        for end in range(top - 1, pos - 1, -1):
            self._tick()
            if lx.regex.fullmatch(self.data, pos, end):
                yield Node(ref.name, "lexeme", party, value=self.data[pos:end], tagged=ref.party is not None), end
        self._fail(pos, f"<{ref.name}>")

    def rule(self, name: str, pos: int, party, tagged: bool) -> Iterator[tuple[Node, int]]:
        key = (name, pos)
        if key in self.active:
            return  # left recursion at this position: no progress possible
        entered = True
        self.active.add(key)
        self.stack.append(name)
        try:
            for alt in self.g.rule(name).alternatives:
                for children, end in self.seq(alt.symbols, 0, pos, party):
                    node = Node(name, "rule", party, list(children), tagged=tagged)
                    self.active.discard(key)
                    self.stack.pop()
                    entered = False
                    yield node, end
                    self.stack.append(name)
                    self.active.add(key)
                    entered = True
        finally:
            if entered:
                self.active.discard(key)
                self.stack.pop()

    def seq(self, symbols, i: int, pos: int, party) -> Iterator[tuple[tuple, int]]:
        if i == len(symbols):
            yield (), pos
            return
        for node, mid in self.symbol(symbols[i], pos, party):
            for rest, end in self.seq(symbols, i + 1, mid, party):
                yield (node,) + rest, end


def parse_message(g: IOGrammar, nt: str, data: bytes, party: str | None = None, budget: int = DEFAULT_BUDGET) -> Node:
    """Parse ``data`` as one instance of ``nt``; the whole input must be consumed.

    Raises ``ParseFailure`` with the furthest failing byte offset, the set of
    expected terminals there and the innermost rule stack at that point.
    ``failure.incomplete`` is true when the parse ran off the end of the
    input, meaning more bytes might still make it succeed.
    """
    if not g.defines(nt):
        raise KeyError(f"<{nt}> is not defined")
    if sys.getrecursionlimit() < 20000:
        sys.setrecursionlimit(20000)
    m = _Matcher(g, data, budget)
    ref = Ref(nt, party)
    try:
        for node, end in m.symbol(ref, 0, party):
            if end == len(data):
                node.tagged = party is not None
                return node
            m._fail(end, "end of input")
    except _BudgetExceeded:
        pass
    stack = m.fail_stack or (nt,)
    err = ParseFailure(max(m.fail_pos, 0), m.expected, stack[-1], stack)
    err.incomplete = m.fail_pos >= len(data)
    raise err


def matches(g: IOGrammar, nt: str, data: bytes) -> bool:
    try:
        parse_message(g, nt, data)
        return True
    except ParseFailure:
        return False
