"""LLM access layer: chat-completion HTTP client, record/replay cache,
retries, rate limiting, and scriptable mocks for tests.

All backends expose one operation, ``complete(request) -> response``. The
request is provider-agnostic (a single prompt string plus decoding
parameters); the HTTP backend maps it onto a chat-completions JSON body with
one user message. Credentials come only from the environment (LLM_API_KEY,
optionally LLM_BASE_URL), never from config files.

Record mode wraps any live backend and appends every (key, completions)
pair to a JSONL archive whose first line is a version header. Replay mode
serves completions from such an archive and touches no network, which makes
whole experiment runs a pure function of (archive, plan, config). The key
is a SHA-256 over the canonical JSON of (model, prompt, temperature, n,
max_tokens), so it is stable across processes and platforms and any change
to decoding parameters misses the cache instead of silently reusing it.
"""

from __future__ import annotations

import hashlib
import json
import os
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import requests

ARCHIVE_FORMAT = "replay-archive"
ARCHIVE_VERSION = 1

ENV_API_KEY = "LLM_API_KEY"
ENV_BASE_URL = "LLM_BASE_URL"

BACKEND_MODES = ("live", "record", "replay", "mock")


class BackendError(Exception):
    """Base class for completion failures."""


class RateLimited(BackendError):
    """Retry budget exhausted on throttled or transient failures."""


class AuthFailure(BackendError):
    pass


class ReplayMiss(BackendError):
    """Replay mode saw a request that was never recorded."""


class MalformedResponse(BackendError):
    pass


class WriteFailure(BackendError):
    pass


@dataclass(frozen=True)
class CompletionRequest:
    prompt: str
    temperature: float
    n: int
    max_tokens: int
    model: str

    def __post_init__(self) -> None:
        if self.n < 1:
            raise ValueError("n must be >= 1")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")


@dataclass(frozen=True)
class CompletionResponse:
    completions: tuple[str, ...]
    prompt_tokens: int = 0
    completion_tokens: int = 0
    latency: float = 0.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "completions", tuple(self.completions))


def replay_key(req: CompletionRequest) -> str:
    """Stable content hash of the request's semantic fields."""
    payload = json.dumps(
        {
            "max_tokens": req.max_tokens,
            "model": req.model,
            "n": req.n,
            "prompt": req.prompt,
            "temperature": req.temperature,
        },
        sort_keys=True,
        ensure_ascii=True,
        separators=(",", ":"),
    )
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


class Backend:
    """Interface: anything with ``complete(request) -> response``."""

    def complete(self, req: CompletionRequest) -> CompletionResponse:
        raise NotImplementedError


class MockBackend(Backend):
    """Scriptable backend for tests.

    ``script`` is called per request and returns the completion strings; a
    single string is repeated to fill ``n``. All requests are kept on
    ``self.requests`` so tests can assert on the prompts actually sent.
    """

    def __init__(self, script: Callable[[CompletionRequest], str | Sequence[str]]):
        self.script = script
        self.requests: list[CompletionRequest] = []
        self._lock = threading.Lock()

    @classmethod
    def static(cls, completion: str) -> "MockBackend":
        return cls(lambda req: completion)

    @classmethod
    def from_rules(cls, rules: Sequence[tuple[str, str | Sequence[str]]], default: str = "") -> "MockBackend":
        """First rule whose substring occurs in the prompt wins."""

        def script(req: CompletionRequest):
            for needle, answer in rules:
                if needle in req.prompt:
                    return answer
            return default

        return cls(script)

    @classmethod
    def from_rules_file(cls, path: str | Path, default: str = "") -> "MockBackend":
        """Load rules from JSONL records {"match": ..., "completions": [...]}."""
        rules = []
        for line in Path(path).read_text(encoding="utf-8").splitlines():
            if not line.strip():
                continue
            record = json.loads(line)
            rules.append((record["match"], record["completions"]))
        return cls.from_rules(rules, default=default)

    def complete(self, req: CompletionRequest) -> CompletionResponse:
        with self._lock:
            self.requests.append(req)
        answer = self.script(req)
        if isinstance(answer, str):
            completions = tuple([answer] * req.n)
        else:
            completions = tuple(answer)
            if len(completions) < req.n:
                completions = completions + tuple([completions[-1]] * (req.n - len(completions)))
            completions = completions[: req.n]
        return CompletionResponse(completions=completions)


def read_archive(path: str | Path) -> dict[str, tuple[str, ...]]:
    """Load a replay archive into a key -> completions map."""
    path = Path(path)
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise BackendError(f"cannot read replay archive {path}: {exc}") from exc
    if not lines:
        raise MalformedResponse(f"replay archive {path} is empty")
    header = json.loads(lines[0])
    if header.get("format") != ARCHIVE_FORMAT:
        raise MalformedResponse(f"{path} is not a replay archive")
    if header.get("version") != ARCHIVE_VERSION:
        raise MalformedResponse(f"unsupported archive version {header.get('version')}")
    cache: dict[str, tuple[str, ...]] = {}
    for line in lines[1:]:
        if not line.strip():
            continue
        record = json.loads(line)
        cache[record["key"]] = tuple(record["completions"])
    return cache


class ReplayBackend(Backend):
    """Serves recorded completions only; raises ReplayMiss on anything new."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self._cache = read_archive(self.path)

    def complete(self, req: CompletionRequest) -> CompletionResponse:
        key = replay_key(req)
        try:
            completions = self._cache[key]
        except KeyError:
            raise ReplayMiss(
                f"no recorded response for key {key[:12]}... "
                f"(model={req.model}, n={req.n}, prompt starts {req.prompt[:60]!r})"
            ) from None
        return CompletionResponse(completions=completions)


class RecordingBackend(Backend):
    """Wraps another backend and appends every response to an archive."""

    def __init__(self, inner: Backend, path: str | Path):
        self.inner = inner
        self.path = Path(path)
        self._lock = threading.Lock()
        self._seen: set[str] = set()
        try:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with self.path.open("w", encoding="utf-8") as fh:
                fh.write(json.dumps({"format": ARCHIVE_FORMAT, "version": ARCHIVE_VERSION}) + "\n")
        except OSError as exc:
            raise WriteFailure(f"cannot create replay archive {self.path}: {exc}") from exc

    def complete(self, req: CompletionRequest) -> CompletionResponse:
        response = self.inner.complete(req)
        key = replay_key(req)
        record = {
            "key": key,
            "model": req.model,
            "temperature": req.temperature,
            "n": req.n,
            "max_tokens": req.max_tokens,
            "prompt_sha256": hashlib.sha256(req.prompt.encode("utf-8")).hexdigest(),
            "prompt_preview": req.prompt[:80],
            "completions": list(response.completions),
        }
        try:
            with self._lock:
                if key not in self._seen:
                    self._seen.add(key)
                    with self.path.open("a", encoding="utf-8") as fh:
                        fh.write(json.dumps(record, ensure_ascii=True) + "\n")
        except OSError as exc:
            raise WriteFailure(f"cannot append to replay archive {self.path}: {exc}") from exc
        return response


class TokenBucket:
    """Thread-safe token bucket; acquire() blocks until a token is free."""

    def __init__(self, rate_per_second: float, capacity: float | None = None, clock=time.monotonic, sleep=time.sleep):
        if rate_per_second <= 0:
            raise ValueError("rate_per_second must be > 0")
        self.rate = rate_per_second
        self.capacity = capacity if capacity is not None else max(1.0, rate_per_second)
        self._tokens = self.capacity
        self._clock = clock
        self._sleep = sleep
        self._last = clock()
        self._lock = threading.Lock()

    def acquire(self) -> None:
        while True:
            with self._lock:
                now = self._clock()
                self._tokens = min(self.capacity, self._tokens + (now - self._last) * self.rate)
                self._last = now
                if self._tokens >= 1.0:
                    self._tokens -= 1.0
                    return
                wait = (1.0 - self._tokens) / self.rate
            self._sleep(wait)


class HttpChatBackend(Backend):
    """POSTs to a chat-completions endpoint with retries and rate limiting.

    Transient failures (429, 5xx, connection errors) are retried with capped
    exponential backoff up to ``max_retries`` extra attempts; 401/403 raise
    AuthFailure immediately. An in-flight semaphore bounds concurrency when
    the backend is shared across worker threads.
    """

    def __init__(
        self,
        base_url: str | None = None,
        api_key: str | None = None,
        max_retries: int = 5,
        backoff_base: float = 0.5,
        backoff_cap: float = 30.0,
        requests_per_second: float = 2.0,
        max_concurrent_requests: int = 4,
        timeout: float = 60.0,
        session: requests.Session | None = None,
        sleep=time.sleep,
    ):
        base_url = base_url or os.environ.get(ENV_BASE_URL)
        if not base_url:
            raise BackendError(f"no base URL configured; set {ENV_BASE_URL} or backend.base_url")
        self.url = base_url.rstrip("/") + "/chat/completions"
        self.api_key = api_key if api_key is not None else os.environ.get(ENV_API_KEY, "")
        self.max_retries = max_retries
        self.backoff_base = backoff_base
        self.backoff_cap = backoff_cap
        self.timeout = timeout
        self.session = session or requests.Session()
        self._sleep = sleep
        self._bucket = TokenBucket(requests_per_second)
        self._slots = threading.Semaphore(max_concurrent_requests)

    def _headers(self) -> dict[str, str]:
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        return headers

    def complete(self, req: CompletionRequest) -> CompletionResponse:
        payload = {
            "model": req.model,
            "messages": [{"role": "user", "content": req.prompt}],
            "temperature": req.temperature,
            "n": req.n,
            "max_tokens": req.max_tokens,
        }
        last_error = "no attempt made"
        throttled = False
        with self._slots:
            for attempt in range(self.max_retries + 1):
                if attempt:
                    backoff = min(self.backoff_cap, self.backoff_base * (2 ** (attempt - 1)))
                    self._sleep(backoff)
                self._bucket.acquire()
                start = time.monotonic()
                try:
                    resp = self.session.post(self.url, json=payload, headers=self._headers(), timeout=self.timeout)
                except requests.RequestException as exc:
                    last_error = f"connection error: {exc}"
                    continue
                if resp.status_code in (401, 403):
                    raise AuthFailure(f"authentication failed ({resp.status_code}); check {ENV_API_KEY}")
                if resp.status_code == 429 or resp.status_code >= 500:
                    throttled = throttled or resp.status_code == 429
                    last_error = f"HTTP {resp.status_code}"
                    continue
                if resp.status_code != 200:
                    raise MalformedResponse(f"unexpected HTTP {resp.status_code}: {resp.text[:200]}")
                return self._parse_response(resp, req, time.monotonic() - start)
        if throttled:
            raise RateLimited(f"gave up after {self.max_retries + 1} attempts; last error: {last_error}")
        raise BackendError(f"gave up after {self.max_retries + 1} attempts; last error: {last_error}")

    def _parse_response(self, resp, req: CompletionRequest, latency: float) -> CompletionResponse:
        try:
            body = resp.json()
            completions = tuple(choice["message"]["content"] for choice in body["choices"])
        except (ValueError, KeyError, TypeError) as exc:
            raise MalformedResponse(f"cannot parse completion response: {exc}") from exc
        if len(completions) != req.n:
            raise MalformedResponse(f"asked for n={req.n} completions, got {len(completions)}")
        usage = body.get("usage", {}) or {}
        return CompletionResponse(
            completions=completions,
            prompt_tokens=int(usage.get("prompt_tokens", 0)),
            completion_tokens=int(usage.get("completion_tokens", 0)),
            latency=latency,
        )
