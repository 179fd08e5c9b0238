"""Section micrographs, the protocol multigraph and minimal transition paths.

Edge conventions (source → target):

* ``invokes``  state → command: the command may be issued in that state;
* ``yields``   command → state: issuing the command moves to the state
  (optionally only when issued in ``in_state``); command → response
  records a reply form;
* ``requires`` command → command: the source needs the target issued
  earlier on the path;
* ``enables``  command → command: the source, once issued, unlocks the
  target (the forward reading of ``requires``);
* ``dependency`` is the untyped form proposed by the model; merging turns
  it into ``requires``.
"""

from __future__ import annotations

import json
import logging
import re
from collections import deque
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Iterable, Optional

from .errors import SpecforgeError, TargetUnreachable
from .ingest import Provenance

log = logging.getLogger(__name__)

NODE_TYPES = ("state", "command", "response")
EDGE_TYPES = ("invokes", "yields", "requires", "enables", "dependency")
EDGE_ENDPOINTS = {
    "invokes": ({"state"}, {"command"}),
    "yields": ({"command"}, {"state", "response"}),
    "requires": ({"command"}, {"command"}),
    "enables": ({"command"}, {"command"}),
    "dependency": ({"command"}, {"command"}),
}


@dataclass(frozen=True, order=True)
class Anchor:
    """A provenance anchor plus whether its section is normative."""

    rfc_id: str
    section_id: str
    paragraph_indices: tuple[int, ...]
    normative: bool = True

    def __post_init__(self):
        object.__setattr__(self, "paragraph_indices", tuple(sorted(set(self.paragraph_indices))))
        if not self.paragraph_indices:
            raise ValueError("anchor needs paragraph indices")

    @property
    def provenance(self) -> Provenance:
        return Provenance(self.rfc_id, self.section_id, self.paragraph_indices)

    @classmethod
    def of(cls, p: Provenance, normative: bool = True) -> "Anchor":
        return cls(p.rfc_id, p.section_id, p.paragraph_indices, normative)

    def to_json(self) -> dict:
        return {
            "rfc_id": self.rfc_id,
            "section_id": self.section_id,
            "paragraph_indices": list(self.paragraph_indices),
            "normative": self.normative,
        }

    @classmethod
    def from_json(cls, d: dict) -> "Anchor":
        return cls(d["rfc_id"], d["section_id"], tuple(d["paragraph_indices"]), d.get("normative", True))


def _anchors(items) -> tuple[Anchor, ...]:
    return tuple(sorted(set(items)))


@dataclass(frozen=True)
class GNode:
    id: str
    label: str
    type: str
    anchors: tuple[Anchor, ...] = ()

    def to_json(self) -> dict:
        return {"id": self.id, "label": self.label, "type": self.type, "provenance": [a.to_json() for a in self.anchors]}

    @classmethod
    def from_json(cls, d: dict) -> "GNode":
        return cls(d["id"], d["label"], d["type"], _anchors(Anchor.from_json(a) for a in d.get("provenance") or ()))


@dataclass(frozen=True)
class GEdge:
    source: str
    target: str
    type: str
    anchors: tuple[Anchor, ...] = ()
    in_state: Optional[str] = None

    @property
    def key(self) -> tuple:
        return (self.type, self.source, self.target, self.in_state or "")

    def to_json(self) -> dict:
        d = {"source": self.source, "target": self.target, "type": self.type, "provenance": [a.to_json() for a in self.anchors]}
        if self.in_state is not None:
            d["in_state"] = self.in_state
        return d

    @classmethod
    def from_json(cls, d: dict) -> "GEdge":
        return cls(d["source"], d["target"], d["type"], _anchors(Anchor.from_json(a) for a in d.get("provenance") or ()), d.get("in_state"))


@dataclass(frozen=True)
class SectionConstraint:
    text: str
    attached_to: str
    kind: Optional[str] = None
    anchors: tuple[Anchor, ...] = ()

    def to_json(self) -> dict:
        return {"text": self.text, "attached_to": self.attached_to, "kind": self.kind, "provenance": [a.to_json() for a in self.anchors]}

    @classmethod
    def from_json(cls, d: dict) -> "SectionConstraint":
        return cls(d["text"], d["attached_to"], d.get("kind"), _anchors(Anchor.from_json(a) for a in d.get("provenance") or ()))


@dataclass(frozen=True)
class Micrograph:
    nodes: tuple[GNode, ...] = ()
    edges: tuple[GEdge, ...] = ()
    constraints: tuple[SectionConstraint, ...] = ()

    def node(self, node_id: str) -> Optional[GNode]:
        for n in self.nodes:
            if n.id == node_id:
                return n
        return None

    def to_json(self) -> dict:
        return {
            "nodes": [n.to_json() for n in self.nodes],
            "edges": [e.to_json() for e in self.edges],
            "constraints": [c.to_json() for c in self.constraints],
        }

    @classmethod
    def from_json(cls, d: dict) -> "Micrograph":
        return cls(
            tuple(GNode.from_json(n) for n in d.get("nodes") or ()),
            tuple(GEdge.from_json(e) for e in d.get("edges") or ()),
            tuple(SectionConstraint.from_json(c) for c in d.get("constraints") or ()),
        )


# --- label normalization -------------------------------------------------------

@lru_cache(maxsize=None)
def load_aliases(protocol: Optional[str] = None) -> dict[str, dict[str, str]]:
    """Alias tables keyed by node type; ``None`` merges every shipped protocol."""
    base = resources.files("specforge") / "data" / "protocols"
    protocols = [protocol] if protocol else sorted(p.name for p in base.iterdir() if p.is_dir())
    out: dict[str, dict[str, str]] = {t: {} for t in NODE_TYPES}
    for name in protocols:
        f = base / name / "aliases.json"
        if f.is_file():
            data = json.loads(f.read_text(encoding="utf-8"))
            for t, table in data.items():
                out.setdefault(t, {}).update({_alias_key(k): v for k, v in table.items()})
    return out


def _alias_key(s: str) -> str:
    return re.sub(r"[\s_-]+", " ", s.strip().lower())


def normalize_label(raw: str, kind: str, aliases: Optional[dict] = None) -> str:
    """Canonical label: commands upper-cased, states mapped through the alias table."""
    aliases = load_aliases() if aliases is None else aliases
    s = re.sub(r"\s+", " ", raw.strip())
    if kind == "command":
        s = s.upper()
        return aliases.get("command", {}).get(_alias_key(s), s)
    if kind == "state":
        key = _alias_key(s)
        if key in aliases.get("state", {}):
            return aliases["state"][key]
        key = re.sub(r" state$", "", key)
        if key in aliases.get("state", {}):
            return aliases["state"][key]
        return key.upper().replace(" ", "_")
    return s


def node_id(kind: str, label: str) -> str:
    return f"{kind}:{label}"


# --- acceptance filter -----------------------------------------------------------

def _symbol_tables(fragment, aliases):
    states = {normalize_label(s.name, "state", aliases) for s in fragment.states or ()}
    cmds = {normalize_label(c.name, "command", aliases) for c in fragment.commands or ()}
    trans = {}
    for t in fragment.transitions or ():
        key = (normalize_label(t.command, "command", aliases), normalize_label(t.from_state, "state", aliases))
        trans.setdefault(key, set()).add(normalize_label(t.to_state, "state", aliases))
    return states, cmds, trans


def accept_micrograph(fragment, proposal: Micrograph, aliases: Optional[dict] = None) -> Micrograph:
    """Keep only the typed, anchored, symbol-table-backed part of ``proposal``.

    Nodes need anchors, and state/command labels must occur in the
    fragment.  Edges need anchors, accepted endpoints and a legal endpoint
    typing.  ``yields`` edges that disagree on the destination are settled
    against the fragment's transitions first, then by precedence
    (normative anchors beat non-normative); unresolved groups are dropped.
    """
    states, cmds, trans = _symbol_tables(fragment, aliases)
    kept: dict[str, GNode] = {}
    for v in proposal.nodes:
        if not v.anchors or v.type not in NODE_TYPES:
            continue
        if v.type == "state" and normalize_label(v.label, "state", aliases) not in states:
            continue
        if v.type == "command" and normalize_label(v.label, "command", aliases) not in cmds:
            continue
        kept.setdefault(v.id, v)

    edges = []
    for e in proposal.edges:
        if not e.anchors or e.type not in EDGE_TYPES:
            continue
        if e.source not in kept or e.target not in kept:
            continue
        src_types, dst_types = EDGE_ENDPOINTS[e.type]
        if kept[e.source].type not in src_types or kept[e.target].type not in dst_types:
            continue
        edges.append(e)

    def label(nid):
        n = kept[nid]
        return normalize_label(n.label, n.type, aliases)

    groups: dict[tuple, list[GEdge]] = {}
    for e in edges:
        if e.type == "yields" and kept[e.target].type == "state":
            in_state = normalize_label(e.in_state, "state", aliases) if e.in_state else None
            groups.setdefault((label(e.source), in_state), []).append(e)
    dropped: set[int] = set()
    for (cmd, in_state), group in groups.items():
        allowed = None
        if in_state is not None and (cmd, in_state) in trans:
            allowed = trans[(cmd, in_state)]
        elif in_state is None:
            dests = [d for (c, _), ds in trans.items() if c == cmd for d in ds]
            allowed = set(dests) if dests else None
        survivors = [e for e in group if allowed is None or label(e.target) in allowed]
        dropped.update(id(e) for e in group if e not in survivors)
        targets = {label(e.target) for e in survivors}
        if len(targets) > 1:
            normative = {label(e.target) for e in survivors if any(a.normative for a in e.anchors)}
            if len(normative) == 1:
                dropped.update(id(e) for e in survivors if label(e.target) not in normative)
            else:
                dropped.update(id(e) for e in survivors)
    accepted_edges = tuple(e for e in edges if id(e) not in dropped)
    used_constraints = tuple(c for c in proposal.constraints if c.anchors)
    return Micrograph(tuple(kept.values()), accepted_edges, used_constraints)


# --- multigraph ---------------------------------------------------------------------

@dataclass(frozen=True)
class PhiEntry:
    text: str
    kind: Optional[str]
    attached_to: str
    anchors: tuple[Anchor, ...]
    conflict_flag: bool = False

    def to_json(self) -> dict:
        return {
            "text": self.text,
            "kind": self.kind,
            "attached_to": self.attached_to,
            "provenance": [a.to_json() for a in self.anchors],
            "conflict_flag": self.conflict_flag,
        }

    @classmethod
    def from_json(cls, d: dict) -> "PhiEntry":
        return cls(d["text"], d.get("kind"), d["attached_to"], _anchors(Anchor.from_json(a) for a in d["provenance"]), d.get("conflict_flag", False))


@dataclass(frozen=True)
class Multigraph:
    nodes: tuple[GNode, ...]
    edges: tuple[GEdge, ...]
    phi: tuple[PhiEntry, ...] = ()

    def labels(self, kind: str) -> list[str]:
        return sorted(n.label for n in self.nodes if n.type == kind)

    @property
    def states(self) -> list[str]:
        return self.labels("state")

    @property
    def commands(self) -> list[str]:
        return self.labels("command")

    @property
    def responses(self) -> list[str]:
        return self.labels("response")

    def node(self, nid: str) -> GNode:
        for n in self.nodes:
            if n.id == nid:
                return n
        raise KeyError(nid)

    def edges_of(self, etype: str) -> list[GEdge]:
        return [e for e in self.edges if e.type == etype]

    def to_json(self) -> dict:
        return {
            "states": self.states,
            "commands": self.commands,
            "responses": self.responses,
            "nodes": [n.to_json() for n in self.nodes],
            "edges": [e.to_json() for e in self.edges],
            "phi": [p.to_json() for p in self.phi],
        }

    @classmethod
    def from_json(cls, d: dict) -> "Multigraph":
        return cls(
            tuple(GNode.from_json(n) for n in d["nodes"]),
            tuple(GEdge.from_json(e) for e in d["edges"]),
            tuple(PhiEntry.from_json(p) for p in d.get("phi", ())),
        )

    @classmethod
    def load(cls, path) -> "Multigraph":
        return cls.from_json(json.loads(Path(path).read_text(encoding="utf-8")))


_RANGE_RE = re.compile(r"^\s*(?:int\()?<?([A-Za-z_][A-Za-z0-9_]*)>?\)?\s*(==|>=|<=|>|<|=)\s*(-?\d+)\s*$")


def _normalize_ops(text: str) -> str:
    return text.replace("≥", ">=").replace("≤", "<=").replace("≠", "!=")


def _range_atom(text: str):
    m = _RANGE_RE.match(_normalize_ops(text))
    if not m:
        return None
    name, op, v = m.group(1), m.group(2), int(m.group(3))
    lo = hi = None
    if op in (">=", ">"):
        lo = v + (op == ">")
    elif op in ("<=", "<"):
        hi = v - (op == "<")
    else:
        lo = hi = v
    return name, lo, hi


def _lift_constraints(items: list[tuple[str, SectionConstraint]]) -> tuple[PhiEntry, ...]:
    ranges: dict[tuple[str, str], list] = {}
    out: list[PhiEntry] = []
    for attached, c in items:
        atom = _range_atom(c.text)
        if atom is None:
            out.append(PhiEntry(_normalize_ops(c.text.strip()), c.kind, attached, c.anchors))
            continue
        ranges.setdefault((attached, atom[0]), []).append((atom[1], atom[2], c))
    for (attached, fld), entries in sorted(ranges.items()):
        lo = max((e[0] for e in entries if e[0] is not None), default=None)
        hi = min((e[1] for e in entries if e[1] is not None), default=None)
        anchors = _anchors(a for e in entries for a in e[2].anchors)
        kind = entries[0][2].kind or "independent"
        if lo is not None and hi is not None and lo > hi:
            for e in entries:
                out.append(PhiEntry(_normalize_ops(e[2].text.strip()), e[2].kind, attached, e[2].anchors, True))
            continue
        parts = []
        if lo is not None and lo == hi:
            parts.append(f"{fld} == {lo}")
        else:
            if lo is not None:
                parts.append(f"{fld} >= {lo}")
            if hi is not None:
                parts.append(f"{fld} <= {hi}")
        out.append(PhiEntry(" and ".join(parts), kind, attached, anchors))
    return tuple(sorted(set(out), key=lambda p: (p.attached_to, p.text, p.conflict_flag)))


def merge(micrographs: Iterable[Micrograph], aliases: Optional[dict] = None) -> Multigraph:
    """Deterministic union of accepted micrographs into one multigraph."""
    nodes: dict[str, dict] = {}
    edges: dict[tuple, set] = {}
    constraints: list[tuple[str, SectionConstraint]] = []
    for mg in micrographs:
        local = {}
        for v in mg.nodes:
            lab = normalize_label(v.label, v.type, aliases)
            nid = node_id(v.type, lab)
            local[v.id] = nid
            entry = nodes.setdefault(nid, {"label": lab, "type": v.type, "anchors": set()})
            entry["anchors"].update(v.anchors)
        for e in mg.edges:
            if e.source not in local or e.target not in local:
                continue
            etype = "requires" if e.type == "dependency" else e.type
            in_state = normalize_label(e.in_state, "state", aliases) if e.in_state else None
            key = (etype, local[e.source], local[e.target], in_state)
            edges.setdefault(key, set()).update(e.anchors)
        for c in mg.constraints:
            attached = c.attached_to
            if ":" in attached:
                kind, lab = attached.split(":", 1)
                attached = node_id(kind, normalize_label(lab, kind, aliases))
            constraints.append((attached, c))

    # cross-section yields conflicts: normative destinations win over non-normative ones
    groups: dict[tuple, list[tuple]] = {}
    for key in edges:
        etype, src, dst, in_state = key
        if etype == "yields" and dst.startswith("state:"):
            groups.setdefault((src, in_state), []).append(key)
    for keys in groups.values():
        if len({k[2] for k in keys}) < 2:
            continue
        normative = [k for k in keys if any(a.normative for a in edges[k])]
        if normative and len(normative) < len(keys):
            for k in keys:
                if k not in normative:
                    log.info("dropping non-normative edge %s in favour of normative text", k)
                    del edges[k]

    gnodes = tuple(GNode(nid, d["label"], d["type"], _anchors(d["anchors"])) for nid, d in sorted(nodes.items()))
    gedges = tuple(
        GEdge(src, dst, etype, _anchors(anchors), in_state)
        for (etype, src, dst, in_state), anchors in sorted(edges.items(), key=lambda kv: (kv[0][0], kv[0][1], kv[0][2], kv[0][3] or ""))
    )
    return Multigraph(gnodes, gedges, _lift_constraints(constraints))


# --- minimal transition paths ---------------------------------------------------------

@dataclass(frozen=True)
class Mtp:
    triples: tuple[tuple[str, str, str], ...]
    target: str
    initial_state: str
    preconditions: tuple[str, ...] = ()
    postcondition: str = ""

    def __post_init__(self):
        object.__setattr__(self, "triples", tuple(tuple(t) for t in self.triples))
        for a, b in zip(self.triples, self.triples[1:]):
            if a[2] != b[0]:
                raise ValueError(f"triples do not chain: {a} then {b}")
        if self.triples and self.triples[0][0] != self.initial_state:
            raise ValueError("first triple must start in the initial state")

    @property
    def commands(self) -> list[str]:
        return [t[1] for t in self.triples]

    @property
    def states(self) -> list[str]:
        return [self.initial_state] + [t[2] for t in self.triples]

    def __len__(self):
        return len(self.triples)

    def to_json(self) -> dict:
        return {
            "target": self.target,
            "initial_state": self.initial_state,
            "triples": [list(t) for t in self.triples],
            "preconditions": list(self.preconditions),
            "postcondition": self.postcondition,
        }

    @classmethod
    def from_json(cls, d: dict) -> "Mtp":
        return cls(tuple(tuple(t) for t in d["triples"]), d["target"], d["initial_state"], tuple(d.get("preconditions", ())), d.get("postcondition", ""))

    def __str__(self):
        parts = [self.initial_state]
        for _, c, s in self.triples:
            parts.append(f"-{c}-> {s}")
        return " ".join(parts)


class TransitionModel:
    """The executable reading of a multigraph used by the path search."""

    def __init__(self, g: Multigraph):
        self.invokes: dict[str, set[str]] = {}
        self.yields: dict[str, list[tuple[Optional[str], str]]] = {}
        self.prereq: dict[str, set[str]] = {}
        lab = {n.id: n.label for n in g.nodes}
        kinds = {n.id: n.type for n in g.nodes}
        for e in g.edges:
            s, t = lab.get(e.source), lab.get(e.target)
            if s is None or t is None:
                continue
            if e.type == "invokes":
                self.invokes.setdefault(s, set()).add(t)
            elif e.type == "yields" and kinds[e.target] == "state":
                self.yields.setdefault(s, []).append((e.in_state, t))
            elif e.type in ("requires", "dependency"):
                self.prereq.setdefault(s, set()).add(t)
            elif e.type == "enables":
                self.prereq.setdefault(t, set()).add(s)
        self.relevant = frozenset(c for ps in self.prereq.values() for c in ps)

    def next_states(self, state: str, cmd: str) -> list[str]:
        dests = sorted({t for (ins, t) in self.yields.get(cmd, ()) if ins is None or ins == state})
        return dests or [state]

    def moves(self, pstate):
        """Successor product states, as ``(command, next_state, successor)``."""
        state, issued, hit, target = pstate
        out = []
        for cmd in sorted(self.invokes.get(state, ())):
            if not self.prereq.get(cmd, set()) <= issued:
                continue
            new_issued = issued | {cmd} if cmd in self.relevant else issued
            for nxt in self.next_states(state, cmd):
                out.append((cmd, nxt, (nxt, new_issued, hit or cmd == target, target)))
        return out


def _search(model: TransitionModel, initial: list[str], target: str, terminal: Optional[frozenset]):
    def goal(p):
        return p[2] and (terminal is None or p[0] in terminal)

    starts = [(s, frozenset(), False, target) for s in initial]
    seen = set(starts)
    order = list(starts)
    succ: dict = {}
    queue = deque(starts)
    while queue:
        p = queue.popleft()
        if goal(p):
            continue  # goal states need no successors
        succ[p] = model.moves(p)
        for _, _, q in succ[p]:
            if q not in seen:
                seen.add(q)
                order.append(q)
                queue.append(q)
    # distance to goal by reverse relaxation (unit weights)
    pred: dict = {}
    for p, ms in succ.items():
        for _, _, q in ms:
            pred.setdefault(q, []).append(p)
    dist = {p: 0 for p in seen if goal(p)}
    queue = deque(dist)
    while queue:
        q = queue.popleft()
        for p in pred.get(q, ()):
            if p not in dist:
                dist[p] = dist[q] + 1
                queue.append(p)
    viable = [s for s in starts if s in dist]
    if not viable:
        return None
    best = min(dist[s] for s in viable)
    # lexicographic reconstruction: smallest (command, next_state) at every step,
    # breaking ties between initial states by the resulting triple sequence
    candidates = []
    for s in viable:
        if dist[s] != best:
            continue
        p, triples = s, []
        while not goal(p):
            cmd, nxt, q = min(
                ((c, n, q) for c, n, q in succ[p] if dist.get(q) == dist[p] - 1), key=lambda m: (m[0], m[1])
            )
            triples.append((p[0], cmd, nxt))
            p = q
        candidates.append((tuple((t[1], t[2]) for t in triples), s[0], tuple(triples)))
    candidates.sort()
    _, init, triples = candidates[0]
    return init, triples


def compute_mtps(
    g: Multigraph,
    initial: Iterable[str],
    targets: Iterable[str],
    terminal_states: Optional[Iterable[str]] = None,
    strict: bool = True,
) -> list[Mtp]:
    """Shortest dependency-respecting path for each target command.

    A path reaches its target when the target command has been issued; with
    ``terminal_states`` it must additionally end in one of them.  Paths are
    searched over (state, issued prerequisites, target hit) product states;
    ties go to the lexicographically smallest command sequence.
    """
    model = TransitionModel(g)
    initial = sorted(set(initial))
    unknown = [s for s in initial if s not in g.states]
    if unknown:
        raise SpecforgeError(f"initial states not in graph: {unknown}")
    terminal = frozenset(terminal_states) if terminal_states else None
    mtps, unreachable = [], []
    for target in targets:
        found = _search(model, initial, target, terminal)
        if found is None:
            unreachable.append(target)
            continue
        init, triples = found
        mtps.append(Mtp(triples, target, init, _preconditions(g, init, triples), target))
    if unreachable:
        log.warning("unreachable targets: %s", ", ".join(unreachable))
        if strict:
            raise TargetUnreachable(unreachable, mtps)
    return mtps


def _preconditions(g: Multigraph, init: str, triples) -> tuple[str, ...]:
    ids = {node_id("state", init)}
    for s, c, t in triples:
        ids.update({node_id("state", s), node_id("command", c), node_id("state", t)})
    return tuple(sorted({f"{p.attached_to}: {p.text}" for p in g.phi if p.attached_to in ids}))


def check_path(g: Multigraph, mtp: Mtp) -> bool:
    """Linear scan: chaining, invocability, next states and the dependency rule."""
    model = TransitionModel(g)
    issued: set[str] = set()
    state = mtp.initial_state
    for s, c, t in mtp.triples:
        if s != state or c not in model.invokes.get(s, ()):
            return False
        if not model.prereq.get(c, set()) <= issued:
            return False
        if t not in model.next_states(s, c):
            return False
        issued.add(c)
        state = t
    return mtp.target in issued


def export_artifacts(g: Multigraph, mtps: list[Mtp], root, rfc_id: str) -> list[Path]:
    d = Path(root) / "output" / "flows" / rfc_id
    try:
        d.mkdir(parents=True, exist_ok=True)
        gp, mp = d / "graph.json", d / "mtps.json"
        gp.write_text(json.dumps(g.to_json(), indent=2) + "\n", encoding="utf-8")
        mp.write_text(json.dumps([m.to_json() for m in mtps], indent=2) + "\n", encoding="utf-8")
    except OSError as exc:
        raise SpecforgeError(f"cannot write flow artifacts: {exc}") from exc
    return [gp, mp]


def load_mtps(path) -> list[Mtp]:
    return [Mtp.from_json(d) for d in json.loads(Path(path).read_text(encoding="utf-8"))]
