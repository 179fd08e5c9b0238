"""Model access: requests, providers, response cache, rate limiting and retry.

Every request has a canonical JSON encoding; its SHA-256 is the key for
both the response cache and the replay fixtures under ``fixtures/llm/``.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import tempfile
import threading
import time
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path
from typing import Callable, Optional, Protocol, TypeVar

from .errors import ProviderError, SchemaViolation, SpecforgeError

log = logging.getLogger(__name__)

T = TypeVar("T")

CLASSIFY_TEMPERATURE = 0.0
GENERATE_TEMPERATURE = 0.1
MAX_TOKENS_LIMIT = 4000
BLOCKS = ("objective", "requirements", "input_format", "output_format")


@dataclass(frozen=True)
class PromptBlocks:
    objective: str
    requirements: str
    input_format: str
    output_format: str
    payload: str


@dataclass(frozen=True)
class LlmRequest:
    model_id: str
    prompt_blocks: PromptBlocks
    temperature: float
    max_tokens: int
    kind: str = "generic"
    retry: int = 0

    def __post_init__(self):
        if self.temperature not in (CLASSIFY_TEMPERATURE, GENERATE_TEMPERATURE):
            raise ValueError(f"temperature must be 0.0 or 0.1, got {self.temperature}")
        if not 0 < self.max_tokens <= MAX_TOKENS_LIMIT:
            raise ValueError(f"max_tokens must be in 1..{MAX_TOKENS_LIMIT}")

    def to_json(self) -> dict:
        d = asdict(self)
        if not self.retry:
            del d["retry"]
        return d

    @classmethod
    def from_json(cls, d: dict) -> "LlmRequest":
        d = dict(d)
        d["prompt_blocks"] = PromptBlocks(**d["prompt_blocks"])
        return cls(**d)

    def canonical(self) -> bytes:
        return json.dumps(self.to_json(), sort_keys=True, separators=(",", ":"), ensure_ascii=False).encode("utf-8")

    @property
    def digest(self) -> str:
        return hashlib.sha256(self.canonical()).hexdigest()

    def with_retry(self, n: int) -> "LlmRequest":
        return LlmRequest(self.model_id, self.prompt_blocks, self.temperature, self.max_tokens, self.kind, n)

    def messages(self) -> list[dict]:
        b = self.prompt_blocks
        system = f"[Objective]\n{b.objective}\n\n[Requirements]\n{b.requirements}"
        user = f"[Input]\n{b.input_format}\n\n[Output]\n{b.output_format}\n\n{b.payload}"
        return [{"role": "system", "content": system}, {"role": "user", "content": user}]


@dataclass(frozen=True)
class LlmResponse:
    text: str
    token_counts: dict = field(default_factory=dict)
    latency_ms: int = 0

    def to_json(self) -> dict:
        return {"text": self.text, "token_counts": dict(self.token_counts), "latency_ms": self.latency_ms}

    @classmethod
    def from_json(cls, d: dict) -> "LlmResponse":
        return cls(d["text"], d.get("token_counts") or {}, d.get("latency_ms", 0))


class LlmProvider(Protocol):
    def complete(self, request: LlmRequest) -> LlmResponse: ...


# --- prompt templates -----------------------------------------------------------

def load_template(name: str) -> dict[str, str]:
    """Read ``prompts/<name>.txt`` into its four named blocks."""
    text = (resources.files("specforge") / "prompts" / f"{name}.txt").read_text(encoding="utf-8")
    names = {"[Objective]": "objective", "[Requirements]": "requirements", "[Input]": "input_format", "[Output]": "output_format"}
    blocks: dict[str, list[str]] = {}
    cur = None
    for line in text.splitlines():
        if line.strip() in names:
            cur = names[line.strip()]
            blocks[cur] = []
        elif cur is not None:
            blocks[cur].append(line)
    missing = [b for b in BLOCKS if b not in blocks]
    if missing:
        raise SpecforgeError(f"prompt template {name} lacks blocks {missing}")
    return {k: "\n".join(v).strip() for k, v in blocks.items()}


def build_request(template: str, payload: str, *, model_id: str, temperature: float, max_tokens: int, **fmt) -> LlmRequest:
    blocks = {k: (v.format(**fmt) if fmt else v) for k, v in load_template(template).items()}
    return LlmRequest(model_id, PromptBlocks(payload=payload, **blocks), temperature, max_tokens, kind=template)


# --- providers --------------------------------------------------------------------

class RateLimiter:
    """Token bucket shared by every caller of a provider."""

    def __init__(self, rate: float = 1.0, capacity: float = 1.0, clock=time.monotonic, sleep=time.sleep):
        if rate <= 0:
            raise ValueError("rate must be positive")
        self.rate = rate
        self.capacity = capacity
        self.tokens = capacity
        self.clock = clock
        self.sleep = sleep
        self.last = clock()
        self.lock = threading.Lock()

    def acquire(self) -> None:
        with self.lock:
            while True:
                now = self.clock()
                self.tokens = min(self.capacity, self.tokens + (now - self.last) * self.rate)
                self.last = now
                if self.tokens >= 1:
                    self.tokens -= 1
                    return
                self.sleep((1 - self.tokens) / self.rate)


def _word_count(s: str) -> int:
    return len(s.split())


class HttpProvider:
    """Chat-completions client; the bearer token comes from ``SPECFORGE_API_KEY``."""

    def __init__(self, base_url: str, model_id: str | None = None, api_key_env: str = "SPECFORGE_API_KEY",
                 limiter: Optional[RateLimiter] = None, timeout_s: float = 120.0):
        import httpx

        self.url = base_url.rstrip("/") + "/chat/completions"
        self.model_id = model_id
        self.api_key = os.environ.get(api_key_env)
        self.limiter = limiter or RateLimiter()
        self.client = httpx.Client(timeout=timeout_s)

    def complete(self, request: LlmRequest) -> LlmResponse:
        import httpx

        self.limiter.acquire()
        body = {
            "model": request.model_id,
            "messages": request.messages(),
            "temperature": request.temperature,
            "top_p": 1.0,
            "max_tokens": request.max_tokens,
        }
        headers = {"Authorization": f"Bearer {self.api_key}"} if self.api_key else {}
        t0 = time.monotonic()
        try:
            r = self.client.post(self.url, json=body, headers=headers)
            r.raise_for_status()
            data = r.json()
            text = data["choices"][0]["message"]["content"]
        except (httpx.HTTPError, KeyError, IndexError, ValueError) as exc:
            raise ProviderError(f"chat completion failed: {exc}") from exc
        usage = data.get("usage") or {}
        return LlmResponse(
            text,
            {"prompt": usage.get("prompt_tokens", 0), "completion": usage.get("completion_tokens", 0)},
            int((time.monotonic() - t0) * 1000),
        )


def fixture_path(fixture_dir, request: LlmRequest) -> Path:
    return Path(fixture_dir) / f"{request.digest}.json"


class ReplayProvider:
    """Serves canned responses from ``<fixture_dir>/<sha256>.json``."""

    def __init__(self, fixture_dir):
        self.fixture_dir = Path(fixture_dir)
        self.calls = 0

    def complete(self, request: LlmRequest) -> LlmResponse:
        self.calls += 1
        p = fixture_path(self.fixture_dir, request)
        if not p.is_file():
            raise ProviderError(f"no replay fixture for request {request.kind}: expected {p}")
        data = json.loads(p.read_text(encoding="utf-8"))
        text = data["response"]["text"]
        counts = {"prompt": _word_count(request.canonical().decode("utf-8")), "completion": _word_count(text)}
        return LlmResponse(text, counts, 0)


def write_fixture(fixture_dir, request: LlmRequest, response: LlmResponse) -> Path:
    p = fixture_path(fixture_dir, request)
    p.parent.mkdir(parents=True, exist_ok=True)
    p.write_text(json.dumps({"request": request.to_json(), "response": {"text": response.text}}, indent=2, ensure_ascii=False) + "\n", encoding="utf-8")
    return p


class RecordingProvider:
    """Wraps a live provider and stores every response as a replay fixture."""

    def __init__(self, inner: LlmProvider, fixture_dir):
        self.inner = inner
        self.fixture_dir = Path(fixture_dir)

    def complete(self, request: LlmRequest) -> LlmResponse:
        resp = self.inner.complete(request)
        write_fixture(self.fixture_dir, request, resp)
        return resp


class CachedProvider:
    """Response cache keyed by request hash; concurrent writers: first one wins."""

    def __init__(self, inner: LlmProvider, cache_dir):
        self.inner = inner
        self.cache_dir = Path(cache_dir)
        self.hits = 0
        self.misses = 0

    def complete(self, request: LlmRequest) -> LlmResponse:
        p = self.cache_dir / f"{request.digest}.json"
        if p.is_file():
            self.hits += 1
            return LlmResponse.from_json(json.loads(p.read_text(encoding="utf-8"))["response"])
        self.misses += 1
        resp = self.inner.complete(request)
        try:
            self.cache_dir.mkdir(parents=True, exist_ok=True)
            fd, tmp = tempfile.mkstemp(dir=self.cache_dir, suffix=".tmp")
            with os.fdopen(fd, "w", encoding="utf-8") as fh:
                json.dump({"request": request.to_json(), "response": resp.to_json()}, fh)
            try:
                os.link(tmp, p)
            except FileExistsError:
                pass
            finally:
                os.unlink(tmp)
        except OSError as exc:
            raise SpecforgeError(f"cannot write cache entry: {exc}") from exc
        return resp


def cached(provider: LlmProvider, cache_dir=None) -> CachedProvider:
    cache_dir = cache_dir or os.environ.get("SPECFORGE_CACHE_DIR") or ".specforge-cache"
    return CachedProvider(provider, cache_dir)


class LoggingProvider:
    """Emits one structured event per request/response pair."""

    def __init__(self, inner: LlmProvider, emit: Callable[..., None]):
        self.inner = inner
        self.emit = emit

    def complete(self, request: LlmRequest) -> LlmResponse:
        resp = self.inner.complete(request)
        self.emit(
            "llm_call",
            kind=request.kind,
            request_hash=request.digest,
            response_hash=hashlib.sha256(resp.text.encode("utf-8")).hexdigest(),
            temperature=request.temperature,
            max_tokens=request.max_tokens,
        )
        return resp


# --- retry --------------------------------------------------------------------------

MAX_CALLS = 2


def call_with_retry(provider: LlmProvider, request: LlmRequest, schema: Callable[[str], T]) -> T:
    """Return the first response that ``schema`` accepts; at most two calls.

    ``schema`` parses and validates response text, raising ``SchemaViolation``
    (or ``ValueError``) on rejection.  The retry request differs from the
    first only in its ``retry`` counter, so replay fixtures can hold a
    distinct second answer.
    """
    last: Optional[Exception] = None
    raw = None
    for attempt in range(MAX_CALLS):
        req = request if attempt == 0 else request.with_retry(attempt)
        resp = provider.complete(req)
        raw = resp.text
        try:
            return schema(resp.text)
        except (SchemaViolation, ValueError) as exc:
            log.info("schema rejection on attempt %d for %s: %s", attempt + 1, request.kind, exc)
            last = exc
    raise SchemaViolation(f"{request.kind}: {last}", raw=raw, attempts=MAX_CALLS)
