"""Independent reference implementations the tests compare against."""

import random
from functools import lru_cache

import networkx as nx

from specforge.graph import Anchor, GEdge, GNode, Multigraph

ANCHOR = (Anchor("0", "1", (0,)),)


def random_multigraph(rng: random.Random, max_states=8, max_cmds=12) -> Multigraph:
    ns, nc = rng.randint(1, max_states), rng.randint(1, max_cmds)
    states = [f"S{i}" for i in range(ns)]
    cmds = [f"C{i}" for i in range(nc)]
    nodes = [GNode(f"state:{s}", s, "state", ANCHOR) for s in states]
    nodes += [GNode(f"command:{c}", c, "command", ANCHOR) for c in cmds]
    edges = []
    for c in cmds:
        for s in rng.sample(states, rng.randint(1, min(3, ns))):
            edges.append(GEdge(f"state:{s}", f"command:{c}", "invokes", ANCHOR))
        for _ in range(rng.randint(0, 2)):
            ins = rng.choice(states + [None])
            edges.append(GEdge(f"command:{c}", f"state:{rng.choice(states)}", "yields", ANCHOR, ins))
    for _ in range(rng.randint(0, nc)):
        a, b = rng.sample(cmds, 2) if nc > 1 else (cmds[0], cmds[0])
        if a != b:
            kind = rng.choice(["requires", "enables"])
            src, dst = (a, b) if kind == "requires" else (b, a)
            edges.append(GEdge(f"command:{src}", f"command:{dst}", kind, ANCHOR))
    return Multigraph(tuple(nodes), tuple(edges))


def _semantics(g: Multigraph):
    label = {n.id: n.label for n in g.nodes}
    kind = {n.id: n.type for n in g.nodes}
    inv, yl, pre = {}, {}, {}
    for e in g.edges:
        s, t = label[e.source], label[e.target]
        if e.type == "invokes":
            inv.setdefault(s, set()).add(t)
        elif e.type == "yields" and kind[e.target] == "state":
            yl.setdefault(s, []).append((e.in_state, t))
        elif e.type == "requires":
            pre.setdefault(s, set()).add(t)
        elif e.type == "enables":
            pre.setdefault(t, set()).add(s)
    return inv, yl, pre


def bfs_lengths(g: Multigraph, initial, targets, terminal=None) -> dict:
    """Shortest path length per target over (state, every issued command).

    Tracking the full issued set (rather than just the dependency-relevant
    commands) is exponential but obviously correct for small graphs.
    """
    inv, yl, pre = _semantics(g)
    prod = nx.DiGraph()
    start = ("start",)
    frontier = [(s, frozenset()) for s in initial]
    for p in frontier:
        prod.add_edge(start, p)
    seen = set(frontier)
    while frontier:
        nxt = []
        for state, issued in frontier:
            for c in inv.get(state, ()):
                if not pre.get(c, set()) <= issued:
                    continue
                dests = {t for ins, t in yl.get(c, ()) if ins is None or ins == state} or {state}
                for t in dests:
                    q = (t, issued | {c})
                    prod.add_edge((state, issued), q)
                    if q not in seen:
                        seen.add(q)
                        nxt.append(q)
        frontier = nxt
    dist = nx.single_source_shortest_path_length(prod, start)
    out = {}
    for target in targets:
        ds = [d - 1 for p, d in dist.items() if p != start and target in p[1]
              and (terminal is None or p[0] in terminal)]
        out[target] = min(ds) if ds else None
    return out


def levenshtein(a, b) -> int:
    """Top-down recursive edit distance (insert, delete, substitute)."""
    a, b = tuple(a), tuple(b)

    @lru_cache(maxsize=None)
    def d(i, j):
        if i == 0:
            return j
        if j == 0:
            return i
        return min(d(i - 1, j) + 1, d(i, j - 1) + 1, d(i - 1, j - 1) + (a[i - 1] != b[j - 1]))

    return d(len(a), len(b))


def client_sequences(g, depth: int = 12, cap: int = 6, vocab=None) -> set:
    """Every sequence (length <= cap) of client-message keyword sets that a
    derivation of depth <= ``depth`` from <start> can emit, by enumeration.
    Keywords outside ``vocab`` are dropped."""
    from specforge.iogrammar.analysis import keywords
    from specforge.iogrammar.model import Literal

    memo = {}

    def seqs(name, d):
        if d == 0 or not g.has_rule(name):
            return set()
        key = (name, d)
        if key in memo:
            return memo[key]
        memo[key] = set()
        out = set()
        for alt in g.rule(name).alternatives:
            acc = {()}
            for s in alt.symbols:
                if isinstance(s, Literal) or g.is_lexeme(s.name):
                    continue
                if s.party is not None:
                    if not (g.is_lexeme(s.name) or seqs(s.name, d - 1)):
                        acc = set()
                    elif s.party == "Client":
                        kw = frozenset(k for k in keywords(g, s.name) if vocab is None or k in vocab)
                        acc = {a + (kw,) for a in acc if len(a) < cap}
                    continue
                sub = seqs(s.name, d - 1)
                acc = {a + b for a in acc for b in sub if len(a) + len(b) <= cap}
                if not acc:
                    break
            out |= acc
        memo[key] = out
        return out

    return seqs("start", depth)


def enumerated_generatable(g, commands, depth: int = 12) -> bool:
    cmds = [c.upper() for c in commands]
    if not cmds:
        return True

    def embeds(seq):
        i = 0
        for kws in seq:
            if i < len(cmds) and cmds[i] in kws:
                i += 1
        return i == len(cmds)

    return any(embeds(s) for s in client_sequences(g, depth, len(cmds) + 2, frozenset(cmds)))
