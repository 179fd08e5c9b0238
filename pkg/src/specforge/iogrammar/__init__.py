"""Party-tagged I/O grammars: text format, matching, derivation and analysis."""

from .constraints import Constraint, eval_constraint, parse_constraint
from .derive import DeriveLimits, Deriver, derive, tree_violations
from .matcher import parse_message
from .model import IOGrammar, Node
from .text import parse_grammar, serialize_grammar, structurally_equal, validate

__all__ = [
    "Constraint",
    "DeriveLimits",
    "Deriver",
    "IOGrammar",
    "Node",
    "derive",
    "eval_constraint",
    "parse_constraint",
    "parse_grammar",
    "parse_message",
    "serialize_grammar",
    "structurally_equal",
    "tree_violations",
    "validate",
]
