"""Chat-completion client: batching, rate limiting, retries, usage and audit."""

from __future__ import annotations

import base64
import json
import os
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Protocol, Sequence

from ..prompts import build_text_prompt
from .base import CollageRequest, Recognition, Recognizer
from .cost import PROMPT_TOKENS, PriceTable
from .labels import parse_response

DEFAULT_MODEL = "gpt-4-1106-vision-preview"
DEFAULT_ENDPOINT = "https://api.openai.com/v1/chat/completions"
RETRY_STATUS = frozenset({408, 429, 500, 502, 503, 504})

# (url, headers, json body) -> (status code, response text)
Transport = Callable[[str, dict, dict], "tuple[int, str]"]


class VlmError(RuntimeError):
    pass


class QuotaExceededError(VlmError):
    pass


class HttpError(VlmError):
    def __init__(self, status: int, body: str, retries: int = 0):
        super().__init__(f"HTTP {status} after {retries} retries: {body[:200]}")
        self.status, self.body, self.retries = status, body, retries


class Clock(Protocol):
    def monotonic(self) -> float: ...
    def sleep(self, seconds: float) -> None: ...


class SystemClock:
    def monotonic(self) -> float:
        return time.monotonic()

    def sleep(self, seconds: float) -> None:
        if seconds > 0:
            time.sleep(seconds)


class FakeClock:
    """Virtual time: ``sleep`` advances the clock instantly."""

    def __init__(self, start: float = 0.0):
        self.now = start
        self._lock = threading.Lock()

    def monotonic(self) -> float:
        with self._lock:
            return self.now

    def sleep(self, seconds: float) -> None:
        with self._lock:
            self.now += max(0.0, seconds)


@dataclass(frozen=True)
class ClientConfig:
    endpoint: str = DEFAULT_ENDPOINT
    model: str = DEFAULT_MODEL
    detail: str = "low"
    seed: int = 0
    batch_size: int = 4
    max_in_flight: int = 4
    rpm: float = 60.0
    max_retries: int = 5
    backoff_base: float = 1.0
    max_tokens: int = 1024
    timeout: float = 120.0
    api_key_env: str = "OPENAI_API_KEY"
    audit_log: str | None = None

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not self.rpm > 0:
            raise ValueError("rpm must be > 0")
        if self.max_in_flight < 1 or self.max_retries < 0 or self.backoff_base < 0:
            raise ValueError("max_in_flight >= 1, max_retries >= 0 and backoff_base >= 0 required")
        if self.detail != "low":
            raise ValueError("only low-detail image mode is supported")


class TokenBucket:
    """At most ``rpm`` requests per minute, bursts up to ``capacity``."""

    def __init__(self, rpm: float, clock: Clock | None = None, capacity: float | None = None):
        self.rate = rpm / 60.0
        self.capacity = float(capacity if capacity is not None else max(1.0, rpm))
        self.clock = clock or SystemClock()
        self._tokens = self.capacity
        self._stamp = self.clock.monotonic()
        self._lock = threading.Lock()

    def _refill(self):
        now = self.clock.monotonic()
        self._tokens = min(self.capacity, self._tokens + (now - self._stamp) * self.rate)
        self._stamp = now

    def acquire(self) -> None:
        while True:
            with self._lock:
                self._refill()
                if self._tokens >= 1.0:
                    self._tokens -= 1.0
                    return
                wait = (1.0 - self._tokens) / self.rate
            self.clock.sleep(wait)


@dataclass(frozen=True)
class UsageEntry:
    names: tuple[str, ...]
    input_tokens: int
    output_tokens: int
    cost: float


@dataclass
class UsageLedger:
    prices: PriceTable = field(default_factory=PriceTable)
    entries: list[UsageEntry] = field(default_factory=list)

    def __post_init__(self):
        self._lock = threading.Lock()

    def record(self, names: Sequence[str], input_tokens: int, output_tokens: int) -> UsageEntry:
        if input_tokens < 0 or output_tokens < 0:
            raise ValueError("token counts must be non-negative")
        cost = (self.prices.input_per_1k * input_tokens + self.prices.output_per_1k * output_tokens) / 1000.0
        entry = UsageEntry(tuple(names), int(input_tokens), int(output_tokens), cost)
        with self._lock:
            self.entries.append(entry)
        return entry

    @property
    def input_tokens(self) -> int:
        return sum(e.input_tokens for e in self.entries)

    @property
    def output_tokens(self) -> int:
        return sum(e.output_tokens for e in self.entries)

    @property
    def total_cost(self) -> float:
        return sum(e.cost for e in self.entries)

    def sorted_entries(self) -> list[UsageEntry]:
        """Entries in collage-name order, independent of completion order."""
        return sorted(self.entries, key=lambda e: e.names)


def httpx_transport(timeout: float = 120.0) -> Transport:
    import httpx

    client = httpx.Client(timeout=timeout)

    def send(url: str, headers: dict, body: dict) -> tuple[int, str]:
        resp = client.post(url, headers=headers, json=body)
        return resp.status_code, resp.text

    return send


def build_request_body(cfg: ClientConfig, batch: Sequence[CollageRequest], categories: Sequence[str]) -> dict:
    n = _grid_side(batch)
    content: list[dict] = [{"type": "text", "text": build_text_prompt(n, [r.name for r in batch], categories)}]
    for req in batch:
        if req.image is None:
            raise ValueError(f"collage {req.name} has no image bytes")
        url = "data:image/jpeg;base64," + base64.b64encode(req.image).decode("ascii")
        content.append({"type": "image_url", "image_url": {"url": url, "detail": cfg.detail}})
    return {
        "model": cfg.model,
        "seed": cfg.seed,
        "max_tokens": cfg.max_tokens,
        "messages": [{"role": "user", "content": content}],
    }


def _grid_side(batch: Sequence[CollageRequest]) -> int:
    sides = {round(r.k ** 0.5) for r in batch}
    if len(sides) != 1:
        raise ValueError("a request batch must share one grid size")
    return sides.pop()


@dataclass
class BatchResult:
    results: dict[str, Recognition]
    retries: int
    raw: str
    usage: UsageEntry | None


class _Audit:
    def __init__(self, path: str | None):
        self.path = Path(path) if path else None
        self._lock = threading.Lock()

    def write(self, record: dict) -> None:
        if self.path is None:
            return
        line = json.dumps(record, sort_keys=True)
        with self._lock:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with self.path.open("a", encoding="utf-8") as fh:
                fh.write(line + "\n")


def http_recognize(cfg: ClientConfig, batch: Sequence[CollageRequest], categories: Sequence[str],
                   transport: Transport | None = None, limiter: TokenBucket | None = None,
                   clock: Clock | None = None, ledger: UsageLedger | None = None,
                   audit: _Audit | None = None, api_key: str | None = None,
                   label_tokens: int = 0) -> BatchResult:
    """One chat request for up to ``cfg.batch_size`` collages."""
    if not batch:
        return BatchResult({}, 0, "", None)
    if len(batch) > cfg.batch_size:
        raise ValueError(f"batch of {len(batch)} exceeds batch_size={cfg.batch_size}")
    clock = clock or SystemClock()
    limiter = limiter or TokenBucket(cfg.rpm, clock)
    transport = transport or httpx_transport(cfg.timeout)
    audit = audit or _Audit(cfg.audit_log)
    key = api_key if api_key is not None else os.environ.get(cfg.api_key_env, "")
    headers = {"Authorization": f"Bearer {key}", "Content-Type": "application/json"}
    body = build_request_body(cfg, batch, categories)
    names = [r.name for r in batch]

    retries = 0
    while True:
        limiter.acquire()
        try:
            status, text = transport(cfg.endpoint, headers, body)
        except (OSError, ConnectionError, TimeoutError) as exc:
            status, text = -1, f"transport error: {exc}"
        except Exception as exc:  # httpx.TransportError and friends
            if type(exc).__module__.startswith("httpx"):
                status, text = -1, f"transport error: {exc}"
            else:
                raise
        audit.write({"names": names, "model": cfg.model, "attempt": retries, "status": status, "response": text})
        if status == 200:
            break
        if status == 429 and "insufficient_quota" in text:
            raise QuotaExceededError(f"quota exceeded: {text[:200]}")
        if status in RETRY_STATUS or status == -1:
            if retries >= cfg.max_retries:
                raise HttpError(status, text, retries)
            clock.sleep(cfg.backoff_base * 2 ** retries)
            retries += 1
            continue
        raise HttpError(status, text, retries)

    content, usage_doc = _content(text)
    k = batch[0].k
    parsed = parse_response(content, names, k, categories)
    results = {name: Recognition(dict(p.labels), p.error) for name, p in parsed.items()}

    usage = None
    if ledger is not None:
        if usage_doc:
            tin, tout = int(usage_doc.get("prompt_tokens", 0)), int(usage_doc.get("completion_tokens", 0))
        else:
            tin = PROMPT_TOKENS + label_tokens + ledger.prices.image_tokens * len(batch)
            tout = 0
        usage = ledger.record(names, tin, tout)
    return BatchResult(results, retries, text, usage)


def _content(text: str) -> tuple[str, dict]:
    """Assistant message text and usage block; non-chat payloads pass through."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError:
        return text, {}
    if isinstance(doc, dict) and "choices" in doc:
        try:
            return str(doc["choices"][0]["message"]["content"]), doc.get("usage") or {}
        except (KeyError, IndexError, TypeError):
            return "", doc.get("usage") or {}
    return text, {}


class HttpRecognizer(Recognizer):
    """Splits requests into batches and runs them on a bounded worker pool."""

    def __init__(self, cfg: ClientConfig, transport: Transport | None = None,
                 clock: Clock | None = None, ledger: UsageLedger | None = None,
                 api_key: str | None = None, label_tokens: int = 0):
        self.cfg = cfg
        self.batch_size = cfg.batch_size
        self.clock = clock or SystemClock()
        self.transport = transport or httpx_transport(cfg.timeout)
        self.limiter = TokenBucket(cfg.rpm, self.clock)
        self.ledger = ledger if ledger is not None else UsageLedger()
        self.audit = _Audit(cfg.audit_log)
        self.api_key = api_key
        self.label_tokens = label_tokens
        self.retries = 0

    def _one(self, batch, categories) -> dict[str, Recognition]:
        try:
            res = http_recognize(self.cfg, batch, categories, self.transport, self.limiter, self.clock,
                                 self.ledger, self.audit, self.api_key, self.label_tokens)
        except QuotaExceededError:
            raise
        except VlmError as exc:
            return {r.name: Recognition({i: None for i in range(r.k)}, str(exc)) for r in batch}
        self.retries += res.retries
        return res.results

    def recognize(self, batch, categories):
        size = self.cfg.batch_size
        chunks = [list(batch[i:i + size]) for i in range(0, len(batch), size)]
        out: dict[str, Recognition] = {}
        with ThreadPoolExecutor(max_workers=self.cfg.max_in_flight) as pool:
            for part in pool.map(lambda c: self._one(c, categories), chunks):
                out.update(part)
        return dict(sorted(out.items()))
