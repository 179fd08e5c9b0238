"""A small, deterministic POP3 server for desk-scale conformance runs.

It implements the minimal command set plus TOP and UIDL over a fixed
mailbox of eight messages.  Deletions are per connection and never
persist, so every session sees the same maildrop.
"""

from __future__ import annotations

import logging
import socketserver
import threading
from dataclasses import dataclass, field
from typing import Optional

from ..errors import BindFailure

log = logging.getLogger(__name__)

DEFAULT_PORT = 11000
DEFAULT_SIZES = (120, 200, 150, 310, 245, 178, 512, 383)


def _message(i: int, size: int) -> bytes:
    """Message ``i`` padded with body lines to exactly ``size`` octets."""
    head = (
        f"From: sender{i}@example.org\r\n"
        f"To: user@example.org\r\n"
        f"Subject: test message {i}\r\n"
        "\r\n"
    ).encode("ascii")
    body = b""
    n = 0
    while len(head) + len(body) < size:
        room = size - len(head) - len(body)
        if room <= 2:
            # too small for another line: widen the last one instead
            body = body[:-2] + b"x" * room + b"\r\n"
            break
        line = (f"line {n} of message {i} " + "-" * 40)[: min(58, room - 2)]
        body += line.encode("ascii") + b"\r\n"
        n += 1
    msg = head + body
    assert len(msg) == size, (i, len(msg), size)
    return msg


@dataclass
class MockConfig:
    host: str = "127.0.0.1"
    port: int = DEFAULT_PORT
    banner: str = "specforge POP3 mock ready."
    sizes: tuple[int, ...] = DEFAULT_SIZES
    optional_commands: bool = True
    users: Optional[dict[str, str]] = None  # None accepts every user/password


@dataclass
class _Session:
    state: str = "AUTHORIZATION"
    user: Optional[str] = None
    deleted: set[int] = field(default_factory=set)


class Mailbox:
    def __init__(self, sizes):
        self.messages = [_message(i + 1, s) for i, s in enumerate(sizes)]

    def live(self, deleted):
        return [(i + 1, m) for i, m in enumerate(self.messages) if i + 1 not in deleted]


def _msg_number(arg: str, box: Mailbox, sess: _Session) -> Optional[int]:
    if not arg.isdigit():
        return None
    n = int(arg)
    if not 1 <= n <= len(box.messages) or n in sess.deleted:
        return None
    return n


def _stuff(data: bytes) -> bytes:
    out = []
    for line in data.split(b"\r\n")[:-1]:
        out.append(b"." + line if line.startswith(b".") else line)
    return b"".join(l + b"\r\n" for l in out)


class Pop3Logic:
    """Command interpreter; ``handle`` maps one command line to a reply."""

    def __init__(self, cfg: MockConfig):
        self.cfg = cfg
        self.box = Mailbox(cfg.sizes)

    def greeting(self) -> bytes:
        return f"+OK {self.cfg.banner}\r\n".encode("ascii")

    def handle(self, sess: _Session, line: str) -> tuple[bytes, bool]:
        """Reply bytes and whether to close the connection afterwards."""
        parts = line.split(" ")
        cmd, args = parts[0].upper(), [a for a in parts[1:] if a]
        if sess.state == "AUTHORIZATION":
            return self._auth(sess, cmd, args)
        return self._transaction(sess, cmd, args)

    def _auth(self, sess, cmd, args):
        users = self.cfg.users
        if cmd == "USER":
            if len(args) != 1:
                return b"-ERR USER needs exactly one argument\r\n", False
            if users is not None and args[0] not in users:
                sess.user = None
                return b"-ERR never heard of mailbox " + args[0].encode() + b"\r\n", False
            sess.user = args[0]
            return b"+OK " + args[0].encode() + b" is a valid mailbox\r\n", False
        if cmd == "PASS":
            if sess.user is None:
                return b"-ERR USER first\r\n", False
            if not args:
                return b"-ERR PASS needs an argument\r\n", False
            if users is not None and users.get(sess.user) != " ".join(args):
                sess.user = None
                return b"-ERR invalid password\r\n", False
            sess.state = "TRANSACTION"
            return b"+OK Logged in.\r\n", False
        if cmd == "QUIT":
            return b"+OK Logging out.\r\n", True
        if cmd in ("STAT", "LIST", "RETR", "DELE", "NOOP", "RSET", "TOP", "UIDL"):
            return b"-ERR command not valid in this state\r\n", False
        return b"-ERR unknown command\r\n", False

    def _transaction(self, sess, cmd, args):
        box = self.box
        live = box.live(sess.deleted)
        if cmd == "STAT" and not args:
            return f"+OK {len(live)} {sum(len(m) for _, m in live)}\r\n".encode(), False
        if cmd == "LIST" and not args:
            body = "".join(f"{i} {len(m)}\r\n" for i, m in live)
            head = f"+OK {len(live)} messages ({sum(len(m) for _, m in live)} octets)\r\n"
            return (head + body + ".\r\n").encode(), False
        if cmd in ("LIST", "RETR", "DELE") and len(args) == 1:
            n = _msg_number(args[0], box, sess)
            if n is None:
                return b"-ERR no such message\r\n", False
            m = box.messages[n - 1]
            if cmd == "LIST":
                return f"+OK {n} {len(m)}\r\n".encode(), False
            if cmd == "RETR":
                return f"+OK {len(m)} octets\r\n".encode() + _stuff(m) + b".\r\n", False
            sess.deleted.add(n)
            return f"+OK message {n} deleted\r\n".encode(), False
        if cmd == "NOOP" and not args:
            return b"+OK\r\n", False
        if cmd == "RSET" and not args:
            sess.deleted.clear()
            live = box.live(())
            return f"+OK maildrop has {len(live)} messages ({sum(len(m) for _, m in live)} octets)\r\n".encode(), False
        if cmd == "QUIT" and not args:
            return b"+OK Logging out.\r\n", True
        if self.cfg.optional_commands:
            if cmd == "TOP" and len(args) == 2 and args[1].isdigit():
                n = _msg_number(args[0], box, sess)
                if n is None:
                    return b"-ERR no such message\r\n", False
                head, _, body = box.messages[n - 1].partition(b"\r\n\r\n")
                lines = body.split(b"\r\n")[:-1][: int(args[1])]
                data = head + b"\r\n\r\n" + b"".join(l + b"\r\n" for l in lines)
                return b"+OK top of message follows\r\n" + _stuff(data) + b".\r\n", False
            if cmd == "UIDL" and not args:
                body = "".join(f"{i} uid{i:04d}\r\n" for i, _ in live)
                return ("+OK unique-id listing follows\r\n" + body + ".\r\n").encode(), False
            if cmd == "UIDL" and len(args) == 1:
                n = _msg_number(args[0], box, sess)
                if n is None:
                    return b"-ERR no such message\r\n", False
                return f"+OK {n} uid{n:04d}\r\n".encode(), False
        if cmd in ("STAT", "LIST", "RETR", "DELE", "NOOP", "RSET", "QUIT", "TOP", "UIDL"):
            return b"-ERR invalid arguments\r\n", False
        return b"-ERR unknown command\r\n", False


class _Handler(socketserver.StreamRequestHandler):
    def handle(self):
        logic: Pop3Logic = self.server.logic
        sess = _Session()
        self.wfile.write(logic.greeting())
        while True:
            raw = self.rfile.readline(4096)
            if not raw:
                return
            line = raw.rstrip(b"\r\n").decode("latin-1")
            reply, close = logic.handle(sess, line)
            self.wfile.write(reply)
            if close:
                return


class _Server(socketserver.ThreadingTCPServer):
    allow_reuse_address = True
    daemon_threads = True


class MockPop3Server:
    """Handle for a running mock server; usable as a context manager."""

    def __init__(self, cfg: Optional[MockConfig] = None):
        self.cfg = cfg or MockConfig()
        try:
            self._srv = _Server((self.cfg.host, self.cfg.port), _Handler)
        except OSError as exc:
            raise BindFailure(f"cannot bind {self.cfg.host}:{self.cfg.port}: {exc}") from exc
        self._srv.logic = Pop3Logic(self.cfg)
        self._thread: Optional[threading.Thread] = None

    @property
    def address(self) -> tuple[str, int]:
        return self._srv.server_address[:2]

    @property
    def port(self) -> int:
        return self.address[1]

    def start(self) -> "MockPop3Server":
        self._thread = threading.Thread(target=self._srv.serve_forever, name="mock-pop3", daemon=True)
        self._thread.start()
        log.info("mock POP3 server listening on %s:%d", *self.address)
        return self

    def serve_forever(self) -> None:
        self._srv.serve_forever()

    def stop(self) -> None:
        self._srv.shutdown()
        self._srv.server_close()
        if self._thread is not None:
            self._thread.join()

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.stop()


def mock_pop3_server(cfg: Optional[MockConfig] = None) -> MockPop3Server:
    """Bind and start a mock server in a background thread."""
    return MockPop3Server(cfg).start()
