"""Seeded random derivation with constraint satisfaction.

Generation picks alternatives uniformly; past half the depth limit the
choice is damped geometrically toward the alternatives with the smallest
minimum depth, and at the limit only those are used.  Constraints are
satisfied bottom-up: integer ranges are sampled directly, field equalities
are copied, and anything still false triggers a resample of the owning
subtree.  The finished tree is re-parsed from its bytes so the caller gets
exactly the tree the matcher would see.
"""

from __future__ import annotations

import logging
import math
import random
from dataclasses import dataclass
from typing import Iterable, Optional

from ..errors import DerivationExhausted, ParseFailure, UnresolvableFieldRef
from .constraints import Constraint, equalities, eval_constraint, integer_bounds, resolve_field
from .matcher import parse_message
from .model import START, IOGrammar, Literal, Node, Ref
from .regexgen import sample

log = logging.getLogger(__name__)

INF = math.inf


@dataclass(frozen=True)
class DeriveLimits:
    max_depth: int = 30
    max_attempts: int = 100


def min_depths(g: IOGrammar) -> dict[str, float]:
    """Minimum derivation depth of every rule; lexemes count as depth 0."""
    depth = {name: INF for name in g.productions}
    changed = True
    while changed:
        changed = False
        for name, alts in g.productions.items():
            best = min((_alt_depth(g, a, depth) for a in alts), default=INF)
            if best < depth[name]:
                depth[name] = best
                changed = True
    return depth


def _alt_depth(g, alt, depth) -> float:
    d = 0.0
    for s in alt.symbols:
        if isinstance(s, Ref) and not g.is_lexeme(s.name):
            d = max(d, depth.get(s.name, INF))
    return d + 1


class _Spent(Exception):
    pass


class Deriver:
    def __init__(self, g: IOGrammar, rng: random.Random, limits: DeriveLimits = DeriveLimits()):
        self.g = g
        self.rng = rng
        self.limits = limits
        self.depth = min_depths(g)
        self.attempts = 0
        self._depth_of: dict[int, int] = {}

    # --- generation ---------------------------------------------------------

    def choose(self, name: str, depth: int):
        alts = self.g.rule(name).alternatives
        if len(alts) == 1:
            return alts[0]
        half = self.limits.max_depth / 2
        if depth > half:
            keep = 0.5 ** (depth - half) if depth < self.limits.max_depth else 0.0
            if self.rng.random() >= keep:
                best = min(_alt_depth(self.g, a, self.depth) for a in alts)
                if best == INF:
                    raise DerivationExhausted(f"<{name}> has no terminating alternative")
                alts = [a for a in alts if _alt_depth(self.g, a, self.depth) == best]
        return alts[self.rng.randrange(len(alts))]

    def expand(self, sym, party: Optional[str], depth: int = 0) -> Node:
        if isinstance(sym, Literal):
            return Node(repr(sym.value), "literal", party, value=sym.value)
        eff = sym.party or party
        tagged = sym.party is not None
        if self.g.is_lexeme(sym.name):
            lx = self.g.lexeme(sym.name)
            value = lx.literal if lx.literal is not None else sample(lx.pattern, self.rng).encode("latin-1")
            return Node(sym.name, "lexeme", eff, value=value, tagged=tagged)
        if depth > 4 * self.limits.max_depth + 50:
            raise DerivationExhausted(f"derivation too deep at <{sym.name}>")
        alt = self.choose(sym.name, depth)
        node = Node(sym.name, "rule", eff, tagged=tagged)
        node.children = [self.expand(s, eff, depth + 1) for s in alt.symbols]
        self._depth_of[id(node)] = depth
        return node

    # --- constraints --------------------------------------------------------

    def _spend(self):
        self.attempts += 1
        if self.attempts > self.limits.max_attempts:
            raise _Spent()

    def _replace_field(self, target: Node, text: str) -> bool:
        data = text.encode("latin-1")
        if target.kind == "lexeme":
            lx = self.g.lexeme(target.symbol)
            if lx.regex.fullmatch(data):
                target.value = data
                return True
            return False
        try:
            fresh = parse_message(self.g, target.symbol, data, party=target.party)
        except ParseFailure:
            return False
        target.replace_with(fresh)
        return True

    def fixup(self, node: Node, c: Constraint, root: Node) -> None:
        for key, (lo, hi) in integer_bounds(c).items():
            f = next(f for f in c.fields if f.key == key)
            try:
                target = resolve_field(node, f, root)
            except UnresolvableFieldRef:
                continue
            try:
                current = int(target.text())
            except ValueError:
                current = None
            if current is not None and (lo is None or current >= lo) and (hi is None or current <= hi):
                continue
            a = 0 if lo is None else lo
            b = a + 999 if hi is None else hi
            if a > b:
                continue
            self._replace_field(target, str(self.rng.randint(a, b)))
        for kind, src, dst in equalities(c):
            try:
                s = resolve_field(node, src, root)
                d = resolve_field(node, dst, root)
            except UnresolvableFieldRef:
                continue
            value = s.text() if kind == "copy" else str(len(s.text()))
            if kind == "copy" and _int_form(value) and _int_form(d.text()):
                value = str(int(value))
            if d.text() != value:
                self._replace_field(d, value)

    def holds(self, node: Node, c: Constraint, root: Node) -> bool:
        try:
            return eval_constraint(node, c, root)
        except UnresolvableFieldRef:
            log.debug("constraint %s not applicable to <%s>", c.text, node.symbol)
            return True

    def satisfy(self, node: Node, root: Node, extra: Iterable[Constraint] = ()) -> None:
        for child in node.children:
            if child.kind == "rule":
                self.satisfy(child, root)
        cons = list(self.g.rule(node.symbol).constraints) + list(extra)
        if not cons:
            return
        while True:
            for c in cons:
                self.fixup(node, c, root)
            if all(self.holds(node, c, root) for c in cons):
                return
            self._spend()
            fresh = self.expand(Ref(node.symbol), node.party, self._depth_of.get(id(node), 0))
            node.replace_with(fresh)
            for child in node.children:
                if child.kind == "rule":
                    self.satisfy(child, root)

    # --- entry points -------------------------------------------------------

    def instance(self, nt: str, party: Optional[str] = None, extra: Iterable[Constraint] = ()) -> Node:
        """A constraint-satisfying instance of ``nt`` (as seen by the matcher)."""
        extra = list(extra)
        ref = Ref(nt, party)
        while True:
            tree = self.expand(ref, party, 0)
            if tree.kind != "rule":
                return tree
            try:
                self.satisfy(tree, tree, extra)
                parsed = parse_message(self.g, nt, tree.bytes, party=party)
            except _Spent:
                break
            except ParseFailure:
                parsed = None
            if parsed is not None and parsed.structure() == tree.structure() and not tree_violations(self.g, parsed, extra):
                parsed.tagged = tree.tagged
                return parsed
            try:
                self._spend()
            except _Spent:
                break
        raise DerivationExhausted(f"no constraint-satisfying <{nt}> within {self.limits.max_attempts} attempts")


def _int_form(s: str) -> bool:
    return s.isdigit()


def tree_violations(g: IOGrammar, tree: Node, extra: Iterable[Constraint] = ()) -> list[tuple[Node, Constraint]]:
    """Every (instance, constraint) pair in ``tree`` that evaluates false."""
    bad = []
    for n in tree.walk():
        if n.kind != "rule" or not g.has_rule(n.symbol):
            continue
        for c in g.rule(n.symbol).constraints:
            try:
                ok = eval_constraint(n, c, tree)
            except UnresolvableFieldRef:
                ok = True
            if not ok:
                bad.append((n, c))
    for c in extra:
        try:
            ok = eval_constraint(tree, c, tree)
        except UnresolvableFieldRef:
            ok = True
        if not ok:
            bad.append((tree, c))
    return bad


def derive(g: IOGrammar, seed: int, limits: DeriveLimits | None = None, start: str = START) -> Node:
    """Derive one complete tree from ``start``; deterministic in ``(g, seed)``."""
    return Deriver(g, random.Random(seed), limits or DeriveLimits()).instance(start)
