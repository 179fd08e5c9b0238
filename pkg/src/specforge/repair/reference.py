"""Fix-report providers backed by a reference grammar.

They answer ``fix`` requests locally, which makes offline repair runs and
fixture recording possible without a model endpoint.
"""

from __future__ import annotations

import json
from typing import Optional

from ..iogrammar.model import IOGrammar
from ..iogrammar.text import parse_grammar, rule_text
from ..llm import LlmRequest, LlmResponse
from .loop import GMISS, GSYN, TMISM


def _missing_support(ref: IOGrammar, g: IOGrammar, names) -> list[str]:
    """Rules of ``ref`` reachable from ``names`` that ``g`` does not define."""
    out, stack, seen = [], list(names), set()
    while stack:
        n = stack.pop(0)
        if n in seen:
            continue
        seen.add(n)
        if not ref.has_rule(n):
            continue
        if not g.defines(n):
            out.append(n)
        for alt in ref.rule(n).alternatives:
            stack.extend(r.name for r in alt.refs())
    return out


def _prov(rule) -> Optional[dict]:
    p = rule.provenance
    if p is None:
        return None
    return {"rfc_id": p.rfc_id, "section_id": p.section_id, "paragraph_indices": list(p.paragraph_indices)}


class ReferenceFixer:
    """Proposes the reference grammar's version of the localized rule."""

    def __init__(self, reference: IOGrammar):
        self.reference = reference
        self.calls = 0

    def complete(self, request: LlmRequest) -> LlmResponse:
        self.calls += 1
        p = json.loads(request.prompt_blocks.payload)
        report = self.report(p)
        return LlmResponse(json.dumps(report, sort_keys=True))

    def entries(self, cls: str, target: str, g: IOGrammar) -> list[dict]:
        ref = self.reference
        if not ref.has_rule(target):
            return []
        rule = ref.rule(target)
        if cls == GSYN:
            text = rule_text(rule)
            kind = "rewrite_production"
            support = _missing_support(ref, g, [r.name for a in rule.alternatives for r in a.refs()])
        elif cls == TMISM:
            text = rule_text(rule)
            kind = "modify_constraint"
            support = []
        else:
            have = g.rule(target).alternatives if g.has_rule(target) else ()
            alts = [a for a in rule.alternatives if a not in have]
            if not alts:
                return []
            stub = type(rule)(rule.name, tuple(alts), (), rule.provenance)
            text = rule_text(stub)
            kind = "add_alternative"
            support = _missing_support(ref, g, [r.name for a in alts for r in a.refs()])
        if support:
            text += "\n" + "\n".join(rule_text(ref.rule(n)) for n in support)
        return [{
            "target_rule": target,
            "kind": kind,
            "new_text": text,
            "provenance": _prov(rule),
            "rationale": f"align <{target}> with the reference production",
        }]

    def report(self, p: dict) -> dict:
        g = parse_grammar(p["grammar"], strict=False)
        cls, target = p["error_class"], p["target_rule"]
        return {
            "error_class": cls,
            "target_rule": target,
            "location": p["location"],
            "current_snippet": p["current_snippet"],
            "expected_snippet": p["expected_snippet"],
            "reason": f"{cls} at <{target}>",
            "patch": {"entries": self.entries(cls, target, g)},
        }


class NoopFixer(ReferenceFixer):
    """Always restates the current rule, so no round makes progress."""

    def __init__(self):
        self.calls = 0

    def entries(self, cls, target, g):
        if not g.has_rule(target):
            return []
        kind = {GSYN: "rewrite_production", TMISM: "modify_constraint", GMISS: "add_alternative"}[cls]
        return [{"target_rule": target, "kind": kind, "new_text": rule_text(g.rule(target)),
                 "provenance": _prov(g.rule(target)), "rationale": "no change"}]

