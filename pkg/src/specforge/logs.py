"""JSON-lines event log correlated by run id."""

from __future__ import annotations

import base64
import json
import threading
import time
from pathlib import Path
from typing import Optional


def _default(o):
    if isinstance(o, bytes):
        return base64.b64encode(o).decode("ascii")
    if hasattr(o, "to_json"):
        return o.to_json()
    if isinstance(o, (set, frozenset, tuple)):
        return list(o)
    return str(o)


class EventLog:
    """Append-only event stream; ``emit`` is safe to call from several threads."""

    def __init__(self, path: Optional[Path], run_id: str, clock=time.time):
        self.path = Path(path) if path is not None else None
        self.run_id = run_id
        self.clock = clock
        self._lock = threading.Lock()
        if self.path is not None:
            self.path.parent.mkdir(parents=True, exist_ok=True)

    def emit(self, event: str, **fields) -> dict:
        rec = {"ts": round(self.clock(), 3), "run_id": self.run_id, "event": event, **fields}
        if self.path is not None:
            line = json.dumps(rec, default=_default, sort_keys=True, ensure_ascii=False)
            with self._lock, self.path.open("a", encoding="utf-8") as fh:
                fh.write(line + "\n")
        return rec

    __call__ = emit


def read_events(path) -> list[dict]:
    return [json.loads(l) for l in Path(path).read_text(encoding="utf-8").splitlines() if l.strip()]
