"""The ``where``-clause constraint language.

Expressions combine integer/string literals, field references ``<name>``
(optionally indexed, ``<name>[1]``), the functions ``len``, ``int`` and
``matches``, comparisons and ``and``/``or``/``not``.  Field references
resolve against the nearest enclosing production instance; a bare
``<name>`` is the first match in preorder.
"""

from __future__ import annotations

import logging
import operator
import re
from dataclasses import dataclass, field
from typing import Optional, Union

from ..errors import GrammarSyntaxError, UnresolvableFieldRef

log = logging.getLogger(__name__)

COMPARATORS = {
    "==": operator.eq,
    "!=": operator.ne,
    "<": operator.lt,
    "<=": operator.le,
    ">": operator.gt,
    ">=": operator.ge,
}
FUNCTIONS = {"len": 1, "int": 1, "matches": 2}


@dataclass(frozen=True)
class Num:
    value: int


@dataclass(frozen=True)
class Str:
    value: str


@dataclass(frozen=True)
class Field:
    name: str
    index: Optional[int] = None

    @property
    def key(self) -> tuple[str, int]:
        return (self.name, self.index or 0)


@dataclass(frozen=True)
class Call:
    func: str
    args: tuple


@dataclass(frozen=True)
class Compare:
    op: str
    left: object
    right: object


@dataclass(frozen=True)
class BoolOp:
    op: str  # "and" | "or"
    operands: tuple


@dataclass(frozen=True)
class Not:
    operand: object


Expr = Union[Num, Str, Field, Call, Compare, BoolOp, Not]


def _quote(s: str) -> str:
    return '"' + s.replace("\\", "\\\\").replace('"', '\\"').replace("\r", "\\r").replace("\n", "\\n").replace("\t", "\\t") + '"'


_PREC = {"or": 1, "and": 2}


def unparse(e: Expr, parent: int = 0) -> str:
    if isinstance(e, Num):
        return str(e.value)
    if isinstance(e, Str):
        return _quote(e.value)
    if isinstance(e, Field):
        return f"<{e.name}>" if e.index is None else f"<{e.name}>[{e.index}]"
    if isinstance(e, Call):
        return f"{e.func}(" + ", ".join(unparse(a) for a in e.args) + ")"
    if isinstance(e, Compare):
        return f"{unparse(e.left, 3)} {e.op} {unparse(e.right, 3)}"
    if isinstance(e, Not):
        return "not " + unparse(e.operand, 3)
    if isinstance(e, BoolOp):
        p = _PREC[e.op]
        s = f" {e.op} ".join(unparse(o, p) for o in e.operands)
        return f"({s})" if p < parent else s
    raise TypeError(e)


def fields_of(e: Expr) -> list[Field]:
    if isinstance(e, Field):
        return [e]
    if isinstance(e, Call):
        return [f for a in e.args for f in fields_of(a)]
    if isinstance(e, Compare):
        return fields_of(e.left) + fields_of(e.right)
    if isinstance(e, Not):
        return fields_of(e.operand)
    if isinstance(e, BoolOp):
        return [f for o in e.operands for f in fields_of(o)]
    return []


@dataclass(frozen=True)
class Constraint:
    expr: Expr
    source: str = field(default="", compare=False)

    @property
    def text(self) -> str:
        return unparse(self.expr)

    @property
    def fields(self) -> list[Field]:
        out = []
        for f in fields_of(self.expr):
            if f.key not in [g.key for g in out]:
                out.append(f)
        return out

    @property
    def kind(self) -> str:
        return "dependent" if len(self.fields) >= 2 else "independent"

    def atoms(self) -> list["Constraint"]:
        """Split top-level conjunctions into atomic predicates."""
        if isinstance(self.expr, BoolOp) and self.expr.op == "and":
            return [a for o in self.expr.operands for a in Constraint(o).atoms()]
        return [self]


# --- parsing ----------------------------------------------------------------

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<field><[A-Za-z_][A-Za-z0-9_]*>(?:\[\d+\])?)
  | (?P<num>-?\d+)
  | (?P<str>"(?:[^"\\]|\\.)*")
  | (?P<op>==|!=|<=|>=|<|>)
  | (?P<punct>[(),])
  | (?P<ident>[A-Za-z_][A-Za-z0-9_]*)
    """,
    re.VERBOSE,
)

_ESCAPES = {"r": "\r", "n": "\n", "t": "\t", "\\": "\\", '"': '"'}


def unescape(body: str) -> str:
    out = []
    i = 0
    while i < len(body):
        ch = body[i]
        if ch == "\\" and i + 1 < len(body):
            nxt = body[i + 1]
            if nxt in _ESCAPES:
                out.append(_ESCAPES[nxt])
            else:
                out.append(ch + nxt)
            i += 2
            continue
        out.append(ch)
        i += 1
    return "".join(out)


class _Parser:
    def __init__(self, text: str, line: int | None = None, col: int = 0):
        self.text = text
        self.line = line
        self.col = col
        self.toks: list[tuple[str, str, int]] = []
        pos = 0
        while pos < len(text):
            m = _TOKEN_RE.match(text, pos)
            if not m:
                self.fail(f"unexpected character {text[pos]!r}", pos)
            kind = m.lastgroup
            if kind != "ws":
                self.toks.append((kind, m.group(), pos))
            pos = m.end()
        self.i = 0

    def fail(self, msg, pos=None):
        if pos is None:
            pos = self.toks[self.i][2] if self.i < len(self.toks) else len(self.text)
        raise GrammarSyntaxError(f"constraint: {msg}", self.line, self.col + pos + 1)

    def peek(self):
        return self.toks[self.i] if self.i < len(self.toks) else (None, None, len(self.text))

    def take(self, value=None, kind=None):
        k, v, _ = self.peek()
        if (value is not None and v != value) or (kind is not None and k != kind) or k is None:
            self.fail(f"expected {value or kind}, found {v!r}")
        self.i += 1
        return v

    def parse(self) -> Expr:
        e = self.or_()
        if self.i != len(self.toks):
            self.fail(f"unexpected {self.peek()[1]!r}")
        return e

    def or_(self):
        ops = [self.and_()]
        while self.peek()[1] == "or":
            self.i += 1
            ops.append(self.and_())
        return ops[0] if len(ops) == 1 else BoolOp("or", tuple(ops))

    def and_(self):
        ops = [self.not_()]
        while self.peek()[1] == "and":
            self.i += 1
            ops.append(self.not_())
        return ops[0] if len(ops) == 1 else BoolOp("and", tuple(ops))

    def not_(self):
        if self.peek()[1] == "not":
            self.i += 1
            return Not(self.not_())
        return self.cmp()

    def cmp(self):
        left = self.term()
        k, v, _ = self.peek()
        if k == "op":
            self.i += 1
            return Compare(v, left, self.term())
        return left

    def term(self):
        k, v, _ = self.peek()
        if k == "num":
            self.i += 1
            return Num(int(v))
        if k == "str":
            self.i += 1
            return Str(unescape(v[1:-1]))
        if k == "field":
            self.i += 1
            m = re.match(r"<([A-Za-z_][A-Za-z0-9_]*)>(?:\[(\d+)\])?$", v)
            return Field(m.group(1), int(m.group(2)) if m.group(2) is not None else None)
        if v == "(":
            self.i += 1
            e = self.or_()
            self.take(")")
            return e
        if k == "ident" and v in FUNCTIONS:
            self.i += 1
            self.take("(")
            args = [self.or_()]
            while self.peek()[1] == ",":
                self.i += 1
                args.append(self.or_())
            self.take(")")
            if len(args) != FUNCTIONS[v]:
                self.fail(f"{v}() takes {FUNCTIONS[v]} argument(s)")
            return Call(v, tuple(args))
        self.fail(f"unexpected {v!r}")


def parse_constraint(text: str, line: int | None = None, col: int = 0) -> Constraint:
    return Constraint(_Parser(text, line, col).parse(), source=text.strip())


# --- evaluation -------------------------------------------------------------

class _EvalFailure(Exception):
    pass


def resolve_field(tree, f: Field, root=None):
    matches = tree.find_all(f.name)
    idx = f.index or 0
    if idx < len(matches):
        return matches[idx]
    if root is not None and root is not tree:
        wide = root.find_all(f.name)
        if idx < len(wide):
            log.debug("field %s resolved in whole-tree scope", unparse(f))
            return wide[idx]
    raise UnresolvableFieldRef(f"cannot resolve {unparse(f)} in <{tree.symbol}>")


def _value(e, tree, root):
    if isinstance(e, Num):
        return e.value
    if isinstance(e, Str):
        return e.value
    if isinstance(e, Field):
        return resolve_field(tree, e, root).text()
    if isinstance(e, Call):
        args = [_value(a, tree, root) for a in e.args]
        if e.func == "len":
            if not isinstance(args[0], str):
                raise _EvalFailure("len() of non-string")
            return len(args[0])
        if e.func == "int":
            try:
                return int(args[0])
            except (TypeError, ValueError):
                raise _EvalFailure(f"int() of {args[0]!r}") from None
        if e.func == "matches":
            return re.fullmatch(str(args[1]), str(args[0])) is not None
    if isinstance(e, (Compare, BoolOp, Not)):
        return _truth(e, tree, root)
    raise TypeError(e)


def _truth(e, tree, root) -> bool:
    if isinstance(e, Compare):
        a, b = _value(e.left, tree, root), _value(e.right, tree, root)
        if isinstance(a, int) and isinstance(b, str) or isinstance(a, str) and isinstance(b, int):
            if e.op in ("==", "!="):
                return (e.op == "!=")
            raise _EvalFailure("ordering between int and string")
        return COMPARATORS[e.op](a, b)
    if isinstance(e, BoolOp):
        if e.op == "and":
            return all(_truth(o, tree, root) for o in e.operands)
        return any(_truth(o, tree, root) for o in e.operands)
    if isinstance(e, Not):
        return not _truth(e.operand, tree, root)
    v = _value(e, tree, root)
    return bool(v)


def eval_constraint(tree, c: Constraint, root=None) -> bool:
    """Evaluate ``c`` on the production instance ``tree``.

    ``root`` widens the lookup scope when a field is not found inside the
    instance.  Type errors such as ``int("abc")`` make the constraint false.
    """
    try:
        return bool(_truth(c.expr, tree, root))
    except _EvalFailure:
        return False


# --- static analysis used by the deriver ----------------------------------

def _int_field(e) -> Optional[Field]:
    if isinstance(e, Call) and e.func == "int" and isinstance(e.args[0], Field):
        return e.args[0]
    return None


def _flip(op: str) -> str:
    return {"<": ">", ">": "<", "<=": ">=", ">=": "<="}.get(op, op)


def integer_bounds(c: Constraint) -> dict[tuple[str, int], tuple[Optional[int], Optional[int]]]:
    """Intervals implied by ``int(<f>) op N`` conjuncts of ``c``."""
    bounds: dict[tuple[str, int], list] = {}
    for atom in c.atoms():
        e = atom.expr
        if not isinstance(e, Compare):
            continue
        f, n, op = _int_field(e.left), e.right, e.op
        if f is None:
            f, n, op = _int_field(e.right), e.left, _flip(e.op)
        if f is None or not isinstance(n, Num):
            continue
        lo, hi = bounds.setdefault(f.key, [None, None])
        v = n.value
        if op in (">=", ">", "=="):
            v2 = v + 1 if op == ">" else v
            lo = v2 if lo is None else max(lo, v2)
        if op in ("<=", "<", "=="):
            v2 = v - 1 if op == "<" else v
            hi = v2 if hi is None else min(hi, v2)
        bounds[f.key] = [lo, hi]
    return {k: (v[0], v[1]) for k, v in bounds.items()}


def equalities(c: Constraint) -> list[tuple[str, object, object]]:
    """``==`` conjuncts relating two fields, as ``(kind, source, target)``.

    ``kind`` is ``"copy"`` for ``<a> == <b>`` / ``int(<a>) == int(<b>)``
    and ``"len"`` for ``int(<a>) == len(<b>)`` (the target is the int side).
    """
    out = []
    for atom in c.atoms():
        e = atom.expr
        if not isinstance(e, Compare) or e.op != "==":
            continue
        l, r = e.left, e.right
        lf, rf = _int_field(l) or (l if isinstance(l, Field) else None), _int_field(r) or (r if isinstance(r, Field) else None)
        if lf is not None and rf is not None and type(l) is type(r):
            out.append(("copy", lf, rf))
            continue
        for a, b in ((l, r), (r, l)):
            if _int_field(a) is not None and isinstance(b, Call) and b.func == "len" and isinstance(b.args[0], Field):
                out.append(("len", b.args[0], _int_field(a)))
    return out
