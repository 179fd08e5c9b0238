"""Grammar synthesis from transition paths, normalization and patching.

The generator works in three moves: the MTP set becomes an FSM skeleton
(a command trie with a naming plan), the skeleton plus retrieved sections
go to the model, and the returned grammar text is checked and normalized.
Repairs arrive later as patches and pass through the same checks, plus a
gate that refuses any patch which makes a previously generatable MTP
ungeneratable.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

from .errors import (
    DuplicateDefinition,
    GrammarError,
    InconsistentMtps,
    PatchRejected,
    SchemaViolation,
    UndefinedNonterminal,
)
from .ingest import Provenance, SectionRecord
from .iogrammar.analysis import generatable_set
from .iogrammar.constraints import parse_constraint
from .iogrammar.model import START, Alternative, IOGrammar, Lexeme, Ref, Rule
from .iogrammar.text import parse_grammar, rule_text, validate
from .llm import GENERATE_TEMPERATURE, MAX_TOKENS_LIMIT, LlmProvider, build_request, call_with_retry

log = logging.getLogger(__name__)

PATCH_KINDS = ("rewrite_production", "add_alternative", "add_constraint", "modify_constraint")

# Lexemes a synthesized grammar may reference without defining them.
DEFAULT_LEXEMES: dict[str, Lexeme] = {
    lx.name: lx
    for lx in (
        Lexeme("CRLF", literal=b"\r\n"),
        Lexeme("SP", literal=b" "),
        Lexeme("text", pattern=r"[^\r\n]*"),
        Lexeme("number", pattern=r"[0-9]+"),
        Lexeme("msg_number", pattern=r"[0-9]+"),
        Lexeme("msg_count", pattern=r"[0-9]+"),
        Lexeme("octets", pattern=r"[0-9]+"),
        Lexeme("line_count", pattern=r"[0-9]+"),
        Lexeme("username", pattern=r"[A-Za-z0-9._@-]{1,40}"),
        Lexeme("password", pattern=r"[!-~]{1,40}"),
        Lexeme("digest", pattern=r"[0-9a-f]{32}"),
        Lexeme("unique_id", pattern=r"[!-~]{1,70}"),
        Lexeme("line_text", pattern=r"(\.\.[^\r\n]*|[^.\r\n][^\r\n]*)?"),
    )
}


# --- skeleton -------------------------------------------------------------------

@dataclass(frozen=True)
class SkeletonExchange:
    state: str
    command: str
    next_state: str
    client_nt: str
    server_nt: str

    @property
    def exchange_nt(self) -> str:
        return f"{self.command.lower()}_exchange"


@dataclass(frozen=True)
class FsmSkeleton:
    """Trie of the MTP command sequences, flattened in first-visit order.

    ``exchanges`` lists each trie node once; ``paths`` gives, per input
    MTP, the indices of the exchanges it walks through.
    """

    exchanges: tuple[SkeletonExchange, ...]
    paths: tuple[tuple[int, ...], ...]
    targets: tuple[str, ...] = ()

    @property
    def names(self) -> dict[tuple[str, str], dict[str, str]]:
        return {(x.state, x.command): {"client": x.client_nt, "server": x.server_nt} for x in self.exchanges}

    @property
    def commands(self) -> list[str]:
        return list(dict.fromkeys(x.command for x in self.exchanges))

    def render(self) -> str:
        lines = ["exchanges:"]
        for i, x in enumerate(self.exchanges):
            lines.append(
                f"  {i}. {x.state} --{x.command}--> {x.next_state}   "
                f"<Client:{x.client_nt}> / <Server:{x.server_nt}>  in <{x.exchange_nt}>"
            )
        lines.append("paths:")
        for t, p in zip(self.targets, self.paths):
            lines.append(f"  {t}: " + " ".join(map(str, p)))
        return "\n".join(lines)

    def to_json(self) -> dict:
        return {
            "exchanges": [x.__dict__ for x in self.exchanges],
            "paths": [list(p) for p in self.paths],
            "targets": list(self.targets),
        }


def build_skeleton(mtps: Sequence) -> FsmSkeleton:
    if not mtps:
        raise ValueError("build_skeleton needs at least one MTP")
    dest: dict[tuple[str, str], str] = {}
    for m in mtps:
        for s, c, t in m.triples:
            if dest.setdefault((s, c), t) != t:
                raise InconsistentMtps(f"{c} from {s} leads to both {dest[(s, c)]} and {t}")
    children: list[dict] = [{}]  # trie node -> {(state, command): child}
    exchanges: list[SkeletonExchange] = []
    paths = []
    for m in mtps:
        node, path = 0, []
        for s, c, t in m.triples:
            key = (s, c)
            if key not in children[node]:
                exchanges.append(SkeletonExchange(s, c, t, c, f"{c.lower()}_response"))
                children.append({})
                children[node][key] = len(exchanges)
            node = children[node][key]
            path.append(node - 1)
        paths.append(tuple(path))
    return FsmSkeleton(tuple(exchanges), tuple(paths), tuple(getattr(m, "target", "") for m in mtps))


# --- normalization ----------------------------------------------------------------

def _skeleton_start(g: IOGrammar, skeleton: FsmSkeleton) -> Rule:
    alts = []
    for path in skeleton.paths:
        names = [skeleton.exchanges[i].exchange_nt for i in path]
        for n in names:
            if not g.has_rule(n):
                raise UndefinedNonterminal(n)
        alt = Alternative(tuple(Ref(n) for n in names))
        if alt not in alts:
            alts.append(alt)
    return Rule(START, tuple(alts))


def normalize_grammar(g: IOGrammar, skeleton: Optional[FsmSkeleton] = None) -> IOGrammar:
    """Canonical form: one block per nonterminal, start first, no duplicate
    alternatives or constraints, and a complete terminals block.

    A missing ``<start>`` is built from ``skeleton`` when one is given.
    Referenced names that are neither rules nor lexemes are filled from
    ``DEFAULT_LEXEMES``; anything else raises ``UndefinedNonterminal``.
    """
    merged: dict[str, dict] = {}
    for r in g.rules:
        m = merged.setdefault(r.name, {"alts": [], "cons": [], "prov": None, "loc": r.loc})
        for a in r.alternatives:
            if a not in m["alts"]:
                m["alts"].append(a)
        for c in r.constraints:
            if all(c.text != d.text for d in m["cons"]):
                m["cons"].append(c)
        if m["prov"] is None:
            m["prov"] = r.provenance
    rules = [Rule(n, tuple(m["alts"]), tuple(m["cons"]), m["prov"], m["loc"]) for n, m in merged.items()]

    lexemes: dict[str, Lexeme] = {}
    for lx in g.lexemes:
        if lx.name in lexemes and lexemes[lx.name] != lx:
            raise DuplicateDefinition(f"<{lx.name}> has two lexeme definitions", lx.loc.line if lx.loc else None)
        lexemes.setdefault(lx.name, lx)

    out = IOGrammar(tuple(rules), tuple(lexemes.values()))
    if not out.has_rule(START):
        if skeleton is None:
            raise UndefinedNonterminal(START)
        rules.insert(0, _skeleton_start(out, skeleton))
    rules.sort(key=lambda r: r.name != START)  # stable: only moves start to the front

    defined = {r.name for r in rules} | set(lexemes)
    missing = []
    for r in rules:
        for a in r.alternatives:
            for ref in a.refs():
                if ref.name not in defined and ref.name not in missing:
                    if ref.name not in DEFAULT_LEXEMES:
                        raise UndefinedNonterminal(ref.name, ref.loc.line if ref.loc else None, ref.loc.col if ref.loc else None)
                    missing.append(ref.name)
    for name in missing:
        lexemes[name] = DEFAULT_LEXEMES[name]

    out = IOGrammar(tuple(rules), tuple(lexemes.values()))
    object.__setattr__(out, "declared_terminals", tuple(lexemes))
    validate(out)
    return out


# --- synthesis --------------------------------------------------------------------

def _inherit_provenance(g: IOGrammar) -> IOGrammar:
    """A pragma covers its production and the unannotated ones after it."""
    cur = None
    rules = []
    for r in g.rules:
        if r.provenance is not None:
            cur = r.provenance
        elif cur is not None:
            r = Rule(r.name, r.alternatives, r.constraints, cur, r.loc)
        rules.append(r)
    out = IOGrammar(tuple(rules), g.lexemes)
    object.__setattr__(out, "declared_terminals", getattr(g, "declared_terminals", ()))
    return out


def grammar_schema(records: Iterable[SectionRecord], skeleton: Optional[FsmSkeleton] = None, require_provenance: bool = True):
    """Validator for generator output: grammar text only, anchored, normalizable."""
    sizes = {r.ref: len(r.paragraphs) for r in records}

    def check(text: str) -> IOGrammar:
        try:
            g = parse_grammar(text, strict=False)
        except GrammarError as exc:
            raise SchemaViolation(f"output is not grammar text: {exc}", raw=text) from None
        if not g.rules:
            raise SchemaViolation("output contains no productions", raw=text)
        if require_provenance:
            g = _inherit_provenance(g)
            for r in g.rules:
                p = r.provenance
                if p is None:
                    raise SchemaViolation(f"<{r.name}> carries no provenance anchor", raw=text)
                n = sizes.get((p.rfc_id, p.section_id))
                if n is None or any(i >= n for i in p.paragraph_indices):
                    raise SchemaViolation(f"<{r.name}> cites {p.rfc_id}/{p.section_id} {list(p.paragraph_indices)}, not in the retrieved text", raw=text)
        try:
            return normalize_grammar(g, skeleton)
        except GrammarError as exc:
            raise SchemaViolation(f"grammar cannot be normalized: {exc}", raw=text) from None

    return check


def synthesis_request(skeleton: FsmSkeleton, retrieved: Sequence[SectionRecord], model_id: str, rfc_id: str):
    from .extract import section_payload

    payload = "skeleton:\n" + skeleton.render() + "\n\nretrieved sections:\n\n" + "\n\n".join(section_payload(r) for r in retrieved)
    return build_request("synthesize", payload, model_id=model_id, temperature=GENERATE_TEMPERATURE,
                         max_tokens=MAX_TOKENS_LIMIT, rfc_id=rfc_id)


def synthesize(skeleton: FsmSkeleton, retrieved: Sequence[SectionRecord], provider: LlmProvider,
               model_id: str = "gpt-4") -> IOGrammar:
    if not retrieved:
        raise ValueError("synthesis needs retrieved sections")
    rfc_id = retrieved[0].rfc_id
    req = synthesis_request(skeleton, retrieved, model_id, rfc_id)
    return call_with_retry(provider, req, grammar_schema(retrieved, skeleton))


def naive_synthesize(protocol: str, provider: LlmProvider, model_id: str = "gpt-4") -> IOGrammar:
    """Grammar from the protocol name alone, without paths or retrieval."""
    req = build_request("naive", f"protocol: {protocol}", model_id=model_id, temperature=GENERATE_TEMPERATURE,
                        max_tokens=MAX_TOKENS_LIMIT, protocol=protocol)
    return call_with_retry(provider, req, grammar_schema((), None, require_provenance=False))


# --- patches ------------------------------------------------------------------------

@dataclass(frozen=True)
class PatchEntry:
    target_rule: str
    kind: str
    new_text: str
    provenance: Optional[Provenance] = None
    rationale: str = ""

    def __post_init__(self):
        if self.kind not in PATCH_KINDS:
            raise ValueError(f"unknown patch kind {self.kind!r}")

    def to_json(self) -> dict:
        p = self.provenance
        return {
            "target_rule": self.target_rule,
            "kind": self.kind,
            "new_text": self.new_text,
            "provenance": None if p is None else {"rfc_id": p.rfc_id, "section_id": p.section_id, "paragraph_indices": list(p.paragraph_indices)},
            "rationale": self.rationale,
        }

    @classmethod
    def from_json(cls, d: dict) -> "PatchEntry":
        p = d.get("provenance")
        prov = None if p is None else Provenance(p["rfc_id"], p["section_id"], tuple(p["paragraph_indices"]))
        return cls(d["target_rule"], d["kind"], d["new_text"], prov, d.get("rationale", ""))


@dataclass(frozen=True)
class Patch:
    entries: tuple[PatchEntry, ...] = field(default_factory=tuple)

    def to_json(self) -> dict:
        return {"entries": [e.to_json() for e in self.entries]}

    @classmethod
    def from_json(cls, d: dict) -> "Patch":
        return cls(tuple(PatchEntry.from_json(e) for e in d["entries"]))


def _constraints_from(text: str, target: str):
    body = text.strip()
    lines = [l for l in body.splitlines() if l.strip() and not l.lstrip().startswith("#")]
    if lines and lines[0].lstrip().startswith("<"):
        frag = parse_grammar(body, strict=False)
        for r in frag.rules:
            if r.name == target:
                return list(r.constraints)
        raise GrammarError(f"constraint patch does not mention <{target}>")
    out = []
    for i, line in enumerate(body.splitlines(), start=1):
        line = line.strip()
        if line.startswith("#"):
            continue
        if line.startswith("where "):
            line = line[len("where "):]
        if line:
            out.append(parse_constraint(line, i, 1))
    if not out:
        raise GrammarError("constraint patch is empty")
    return out


def _apply_entry(rules: list[Rule], lexemes: dict[str, Lexeme], entry: PatchEntry) -> None:
    names = [r.name for r in rules]
    if entry.target_rule not in names:
        raise PatchRejected("unknown_target", f"<{entry.target_rule}> is not a rule of the grammar")
    idx = names.index(entry.target_rule)
    old = rules[idx]
    prov = entry.provenance or old.provenance

    if entry.kind in ("add_constraint", "modify_constraint"):
        try:
            cons = _constraints_from(entry.new_text, entry.target_rule)
        except GrammarError as exc:
            raise PatchRejected("parse_failure", str(exc)) from None
        if entry.kind == "add_constraint":
            cons = list(old.constraints) + [c for c in cons if all(c.text != d.text for d in old.constraints)]
        rules[idx] = Rule(old.name, old.alternatives, tuple(cons), prov, old.loc)
        return

    try:
        frag = parse_grammar(entry.new_text, strict=False)
    except GrammarError as exc:
        raise PatchRejected("parse_failure", str(exc)) from None
    target = [r for r in frag.rules if r.name == entry.target_rule]
    if not target:
        raise PatchRejected("parse_failure", f"patch text does not define <{entry.target_rule}>")
    extra = [r for r in frag.rules if r.name != entry.target_rule]
    for r in extra:
        if r.name in names:
            raise PatchRejected("schema_failure", f"patch for <{entry.target_rule}> also rewrites <{r.name}>")
    for lx in frag.lexemes:
        if lx.name in lexemes and lexemes[lx.name] != lx:
            raise PatchRejected("schema_failure", f"patch redefines lexeme <{lx.name}>")

    new_alts = [a for r in target for a in r.alternatives]
    new_cons = [c for r in target for c in r.constraints]
    if entry.kind == "add_alternative":
        alts = list(old.alternatives) + [a for a in new_alts if a not in old.alternatives]
        cons = list(old.constraints) + [c for c in new_cons if all(c.text != d.text for d in old.constraints)]
    else:
        alts, cons = new_alts, new_cons
    rules[idx] = Rule(old.name, tuple(alts), tuple(cons), target[0].provenance or prov, old.loc)
    # new supporting rules go right after the target
    added = []
    for r in extra:
        if r.name not in [a.name for a in added]:
            added.append(Rule(r.name, r.alternatives, r.constraints, r.provenance or prov, r.loc))
    rules[idx + 1:idx + 1] = added
    for lx in frag.lexemes:
        lexemes.setdefault(lx.name, lx)


def apply_patch(g: IOGrammar, patch: Patch, mtps: Sequence = ()) -> IOGrammar:
    """Apply every entry of ``patch`` or none of them.

    Raises ``PatchRejected`` with reason ``unknown_target``,
    ``parse_failure``, ``schema_failure`` or ``mtp_regression``.
    """
    if not patch.entries:
        raise PatchRejected("schema_failure", "empty patch")
    rules = list(g.rules)
    lexemes = {lx.name: lx for lx in g.lexemes}
    for entry in patch.entries:
        _apply_entry(rules, lexemes, entry)
    try:
        out = normalize_grammar(IOGrammar(tuple(rules), tuple(lexemes.values())))
    except GrammarError as exc:
        raise PatchRejected("schema_failure", str(exc)) from None
    if mtps:
        before = generatable_set(g, mtps)
        after = generatable_set(out, mtps)
        lost = before - after
        if lost:
            raise PatchRejected("mtp_regression", f"patch makes {len(lost)} MTP(s) ungeneratable: {sorted(lost)}")
    return out


def touched_rules(a: IOGrammar, b: IOGrammar) -> list[str]:
    """Nonterminals whose serialized production differs between ``a`` and ``b``."""
    ta = {r.name: rule_text(r) for r in a.rules}
    tb = {r.name: rule_text(r) for r in b.rules}
    return sorted(n for n in set(ta) | set(tb) if ta.get(n) != tb.get(n))


def dump_patch(p: Patch) -> str:
    return json.dumps(p.to_json(), indent=2, sort_keys=True)
