"""Running one grammar-driven session against a system under test."""

from __future__ import annotations

import base64
import logging
import random
import socket
from dataclasses import dataclass, field
from typing import Optional

from ..errors import ConnectFailure, DerivationExhausted, ParseFailure
from ..graph import Mtp
from ..iogrammar.analysis import has_keyword, steer
from ..iogrammar.constraints import eval_constraint
from ..iogrammar.derive import DeriveLimits, Deriver, tree_violations
from ..iogrammar.matcher import parse_message
from ..iogrammar.model import IOGrammar, Literal, Node
from ..errors import UnresolvableFieldRef

log = logging.getLogger(__name__)

VERDICTS = ("accepted", "parse_failure", "constraint_violation", "timeout", "disconnect")
C2S, S2C = "client_to_server", "server_to_client"
TERMINATOR = b".\r\n"
MAX_REPLY = 1 << 20


@dataclass(frozen=True)
class SutCapabilities:
    """What the harness knows about an implementation when labelling failures."""

    tls_required: tuple[str, ...] = ("STLS", "AUTH")
    unrecognized_markers: tuple[str, ...] = ("unknown command", "unrecognized", "not implemented", "unimplemented")
    data_state_markers: tuple[str, ...] = ("no such message", "mailbox", "maildrop", "already deleted", "no messages")


@dataclass(frozen=True)
class SutConfig:
    host: str = "127.0.0.1"
    port: int = 11000
    connect_timeout_ms: int = 3000
    read_timeout_ms: int = 5000
    greeting_expected: bool = True
    capabilities: SutCapabilities = field(default_factory=SutCapabilities)

    def __post_init__(self):
        if not 1 <= self.port <= 65535:
            raise ValueError(f"port out of range: {self.port}")
        if self.connect_timeout_ms <= 0 or self.read_timeout_ms <= 0:
            raise ValueError("timeouts must be positive")


@dataclass
class Exchange:
    direction: str
    data: bytes
    ts: int
    verdict: Optional[str] = None
    nonterminal: Optional[str] = None
    detail: str = ""

    def set_verdict(self, v: str, detail: str = "") -> None:
        if self.verdict is not None:
            raise RuntimeError("verdict already set")
        if v not in VERDICTS:
            raise ValueError(v)
        self.verdict = v
        self.detail = detail

    @property
    def sent(self) -> bool:
        return self.direction == C2S and bool(self.data)

    def to_json(self) -> dict:
        return {
            "direction": self.direction,
            "bytes_b64": base64.b64encode(self.data).decode("ascii"),
            "verdict": self.verdict,
            "ts": self.ts,
            "nonterminal": self.nonterminal,
            "detail": self.detail,
        }

    @classmethod
    def from_json(cls, d: dict) -> "Exchange":
        return cls(d["direction"], base64.b64decode(d["bytes_b64"]), d["ts"], d["verdict"], d.get("nonterminal"), d.get("detail", ""))


@dataclass
class Trace:
    exchanges: list[Exchange]
    mtp: Optional[Mtp]
    terminal_state_reached: bool = False
    failure_cause: Optional[str] = None
    seed: int = 0
    generatable: bool = True

    def __post_init__(self):
        if self.terminal_state_reached and any(e.verdict != "accepted" for e in self.exchanges):
            raise ValueError("a trace that reached its terminal state must be fully accepted")

    @property
    def accepted(self) -> bool:
        return self.terminal_state_reached

    @property
    def commands(self) -> tuple[str, ...]:
        return tuple(self.mtp.commands) if self.mtp else ()

    def first_failure(self) -> Optional[int]:
        for i, e in enumerate(self.exchanges):
            if e.verdict != "accepted":
                return i
        return None

    def to_json(self) -> dict:
        return {
            "mtp": self.mtp.to_json() if self.mtp else None,
            "seed": self.seed,
            "generatable": self.generatable,
            "terminal_state_reached": self.terminal_state_reached,
            "failure_cause": self.failure_cause,
            "exchanges": [e.to_json() for e in self.exchanges],
        }

    @classmethod
    def from_json(cls, d: dict) -> "Trace":
        return cls(
            [Exchange.from_json(e) for e in d["exchanges"]],
            Mtp.from_json(d["mtp"]) if d.get("mtp") else None,
            d["terminal_state_reached"],
            d.get("failure_cause"),
            d.get("seed", 0),
            d.get("generatable", True),
        )


# --- reply framing ---------------------------------------------------------------

def declares_terminator(g: IOGrammar, nt: str) -> bool:
    """Whether ``nt`` (through untagged references) contains the ``.\\r\\n`` literal."""
    seen, stack = set(), [nt]
    while stack:
        name = stack.pop()
        if name in seen:
            continue
        seen.add(name)
        if g.is_lexeme(name):
            if g.lexeme(name).literal == TERMINATOR:
                return True
            continue
        if not g.has_rule(name):
            continue
        for alt in g.rule(name).alternatives:
            for s in alt.symbols:
                if isinstance(s, Literal):
                    if s.value.endswith(TERMINATOR) and (s.value == TERMINATOR or s.value.endswith(b"\r\n" + TERMINATOR)):
                        return True
                elif s.party is None:
                    stack.append(s.name)
    return False


class _Closed(Exception):
    def __init__(self, partial: bytes):
        self.partial = partial


class _Reader:
    def __init__(self, sock: socket.socket):
        self.sock = sock
        self.buf = b""

    def line(self) -> bytes:
        while b"\n" not in self.buf:
            chunk = self.sock.recv(4096)
            if not chunk:
                partial, self.buf = self.buf, b""
                raise _Closed(partial)
            self.buf += chunk
            if len(self.buf) > MAX_REPLY:
                break
        i = self.buf.find(b"\n")
        i = len(self.buf) - 1 if i < 0 else i
        out, self.buf = self.buf[: i + 1], self.buf[i + 1:]
        return out


def _read_reply(reader: _Reader, g: IOGrammar, nt: str) -> bytes:
    data = reader.line()
    if not declares_terminator(g, nt):
        return data
    try:
        parse_message(g, nt, data, party="Server")
        return data
    except ParseFailure as exc:
        if not getattr(exc, "incomplete", False):
            return data  # already wrong on the first line; do not wait for a body
    while True:
        line = reader.line()
        data += line
        if line == TERMINATOR or len(data) > MAX_REPLY:
            return data


# --- session -------------------------------------------------------------------------

def _parents(root: Node) -> dict[int, Node]:
    out = {}
    for n in root.walk():
        for c in n.children:
            out[id(c)] = n
    return out


def _ancestors(node: Node, parents: dict[int, Node]) -> list[Node]:
    out = []
    cur = parents.get(id(node))
    while cur is not None:
        out.append(cur)
        cur = parents.get(id(cur))
    return out


def _filled(node: Node) -> bool:
    return not any(getattr(n, "placeholder", False) for n in node.walk())


def _client_message(deriver: Deriver, g: IOGrammar, ph: Node, tries: int = 50) -> Node:
    last = None
    for _ in range(tries):
        deriver.attempts = 0
        try:
            m = deriver.instance(ph.symbol, "Client")
        except DerivationExhausted as exc:
            last = exc
            continue
        if ph.command is None or has_keyword(g, m, ph.command):
            return m
    raise DerivationExhausted(f"no <Client:{ph.symbol}> carrying {ph.command}: {last or 'keyword never drawn'}")


def _violations(g: IOGrammar, msg: Node, ph: Node, parents, root: Node, checked: set[int]) -> list[str]:
    bad = [f"<{n.symbol}>: {c.text}" for n, c in tree_violations(g, msg)]
    for anc in _ancestors(ph, parents):
        if id(anc) in checked or anc.kind != "rule" or not g.has_rule(anc.symbol) or not _filled(anc):
            continue
        checked.add(id(anc))
        for c in g.rule(anc.symbol).constraints:
            try:
                ok = eval_constraint(anc, c, root)
            except UnresolvableFieldRef:
                ok = True
            if not ok:
                bad.append(f"<{anc.symbol}>: {c.text}")
    return bad


def run_session(g: IOGrammar, mtp: Mtp, sut: SutConfig, seed: int, limits: Optional[DeriveLimits] = None) -> Trace:
    """Drive one session for ``mtp`` and record every exchange.

    The session skeleton comes from the grammar's coverage plan for the
    MTP's commands; client messages are derived on demand and each server
    reply is parsed against the ``Server:`` nonterminal the plan expects.
    The session stops at the first exchange that is not accepted.
    """
    rng = random.Random(seed)
    try:
        plan, _mode = steer(g, mtp, rng)
    except ValueError:
        return Trace([], mtp, False, None, seed, generatable=False)
    deriver = Deriver(g, rng, limits or DeriveLimits())
    parents = _parents(plan)
    slots = plan.messages()
    if not sut.greeting_expected:
        while slots and slots[0].party == "Server":
            slots.pop(0)

    try:
        sock = socket.create_connection((sut.host, sut.port), timeout=sut.connect_timeout_ms / 1000)
    except OSError as exc:
        raise ConnectFailure(f"cannot connect to {sut.host}:{sut.port}: {exc}") from exc
    sock.settimeout(sut.read_timeout_ms / 1000)
    reader = _Reader(sock)
    exchanges: list[Exchange] = []
    checked: set[int] = set()
    pending_client: Optional[Exchange] = None
    ok = True

    def fail(ex: Exchange, verdict: str, detail: str):
        ex.set_verdict(verdict, detail)
        if pending_client is not None and pending_client.verdict is None:
            pending_client.set_verdict(verdict, detail)

    try:
        for k, ph in enumerate(slots):
            ts = len(exchanges)
            if ph.party == "Client":
                msg = _client_message(deriver, g, ph)
                ph.replace_with(msg)
                ph.placeholder = False
                ex = Exchange(C2S, msg.bytes, ts, nonterminal=ph.symbol)
                exchanges.append(ex)
                try:
                    sock.sendall(msg.bytes)
                except OSError as exc:
                    ex.set_verdict("disconnect", str(exc))
                    ok = False
                    _mark_rest(exchanges, slots[k + 1:])
                    break
                pending_client = ex
                continue
            ex = Exchange(S2C, b"", ts, nonterminal=ph.symbol)
            exchanges.append(ex)
            try:
                ex.data = _read_reply(reader, g, ph.symbol)
            except socket.timeout:
                fail(ex, "timeout", f"no reply within {sut.read_timeout_ms} ms")
                ok = False
                break
            except _Closed as closed:
                ex.data = closed.partial
                fail(ex, "disconnect", "connection closed by peer")
                ok = False
                _mark_rest(exchanges, slots[k + 1:])
                break
            try:
                reply = parse_message(g, ph.symbol, ex.data, party="Server")
            except ParseFailure as exc:
                fail(ex, "parse_failure", str(exc))
                ok = False
                break
            ph.replace_with(reply)
            ph.placeholder = False
            bad = _violations(g, reply, ph, parents, plan, checked)
            if bad:
                fail(ex, "constraint_violation", "; ".join(bad))
                ok = False
                break
            ex.set_verdict("accepted")
            if pending_client is not None:
                pending_client.set_verdict("accepted")
                pending_client = None
    finally:
        sock.close()

    if ok and pending_client is not None and pending_client.verdict is None:
        pending_client.set_verdict("accepted")  # trailing client message with no expected reply
    if ok and tree_violations(g, plan):
        ok = False
    return Trace(exchanges, mtp, ok and all(e.verdict == "accepted" for e in exchanges), None, seed)


def _mark_rest(exchanges: list[Exchange], rest: list[Node]) -> None:
    for ph in rest:
        direction = C2S if ph.party == "Client" else S2C
        ex = Exchange(direction, b"", len(exchanges), nonterminal=ph.symbol)
        ex.set_verdict("disconnect", "session ended before this exchange")
        exchanges.append(ex)
