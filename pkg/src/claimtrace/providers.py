"""Text-model provider interface: live HTTPS clients, scripted mocks, response caching.

Every call is a :class:`ModelRequest` (model id, chat messages, decoding
knobs) and returns a :class:`ModelResponse`.  Requests are content-hashed;
the cache and scripted fixtures are both keyed by that hash, so a fully
cached run needs no network and is byte-reproducible.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Protocol

import requests

logger = logging.getLogger(__name__)


class ProviderError(Exception):
    """Provider unreachable or persistently misbehaving."""


@dataclass(frozen=True)
class ModelRequest:
    model_id: str
    messages: tuple[tuple[str, str], ...]  # (role, content) pairs
    temperature: float = 0.0
    max_output: int = 1024

    def content_hash(self) -> str:
        payload = json.dumps(
            {
                "model_id": self.model_id,
                "messages": list(self.messages),
                "temperature": self.temperature,
                "max_output": self.max_output,
            },
            sort_keys=True,
            ensure_ascii=False,
        )
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class ModelResponse:
    text: str
    usage: dict = field(default_factory=dict)


class ModelProvider(Protocol):
    def complete(self, request: ModelRequest) -> ModelResponse: ...


class ScriptedModelProvider:
    """Offline provider backed by canned responses.

    Responses come from a ``script`` mapping request content-hash to text,
    from a ``rule`` callable (for mocks that must inspect the prompt), or
    from a fixture file holding the hash-to-text mapping.  Raises
    :class:`ProviderError` when nothing matches.
    """

    def __init__(
        self,
        script: dict[str, str] | None = None,
        rule: Callable[[ModelRequest], Optional[str]] | None = None,
    ):
        self.script = dict(script or {})
        self.rule = rule
        self.calls = 0

    @classmethod
    def from_fixture(cls, path: str | Path) -> "ScriptedModelProvider":
        return cls(script=json.loads(Path(path).read_text(encoding="utf-8")))

    def complete(self, request: ModelRequest) -> ModelResponse:
        self.calls += 1
        key = request.content_hash()
        if key in self.script:
            return ModelResponse(text=self.script[key])
        if self.rule is not None:
            text = self.rule(request)
            if text is not None:
                return ModelResponse(text=text)
        raise ProviderError(f"no scripted response for request {key[:12]}…")


class CachingModelProvider:
    """Caches every response by request content-hash under a directory.

    Warm requests are served from disk with no call to the wrapped provider;
    ``cache_hits`` counts them for provenance.
    """

    def __init__(self, inner: ModelProvider, cache_dir: str | Path):
        self.inner = inner
        self.cache_dir = Path(cache_dir)
        self.cache_hits = 0
        self._lock = threading.Lock()

    def _path(self, request: ModelRequest) -> Path:
        return self.cache_dir / request.model_id / f"{request.content_hash()}.json"

    def complete(self, request: ModelRequest) -> ModelResponse:
        path = self._path(request)
        if path.exists():
            record = json.loads(path.read_text(encoding="utf-8"))
            with self._lock:
                self.cache_hits += 1
            return ModelResponse(text=record["text"], usage=record.get("usage", {}))
        response = self.inner.complete(request)
        with self._lock:
            path.parent.mkdir(parents=True, exist_ok=True)
            tmp = path.with_suffix(".tmp")
            tmp.write_text(
                json.dumps({"text": response.text, "usage": response.usage}, ensure_ascii=False),
                encoding="utf-8",
            )
            os.replace(tmp, path)
        return response


class HttpModelProvider:
    """Chat-completions HTTPS client with bounded retry and backoff.

    Credentials come from ``api_key_env``; the endpoint is expected to accept
    an OpenAI-style payload and return ``choices[0].message.content``.
    """

    def __init__(
        self,
        endpoint: str,
        api_key_env: str = "MODEL_API_KEY",
        max_retries: int = 3,
        backoff_s: float = 1.0,
        session: requests.Session | None = None,
    ):
        self.endpoint = endpoint
        self.api_key_env = api_key_env
        self.max_retries = max_retries
        self.backoff_s = backoff_s
        self._session = session or requests.Session()

    def complete(self, request: ModelRequest) -> ModelResponse:
        api_key = os.environ.get(self.api_key_env, "")
        payload = {
            "model": request.model_id,
            "messages": [{"role": r, "content": c} for r, c in request.messages],
            "temperature": request.temperature,
            "max_tokens": request.max_output,
        }
        last_error: Exception | None = None
        for attempt in range(self.max_retries):
            try:
                response = self._session.post(
                    self.endpoint,
                    json=payload,
                    headers={"Authorization": f"Bearer {api_key}"},
                    timeout=120,
                )
                response.raise_for_status()
                body = response.json()
                return ModelResponse(
                    text=body["choices"][0]["message"]["content"],
                    usage=body.get("usage", {}),
                )
            except (requests.RequestException, KeyError, IndexError, ValueError) as exc:
                last_error = exc
                if attempt + 1 < self.max_retries:
                    time.sleep(self.backoff_s * (2**attempt))
        raise ProviderError(f"model provider failed after retries: {last_error}") from last_error


class RateLimiter:
    """Token-bucket limiter shared across workers; acquire() blocks until a slot frees."""

    def __init__(self, requests_per_second: float, burst: int = 1):
        if requests_per_second <= 0:
            raise ValueError("requests_per_second must be positive")
        self.rate = requests_per_second
        self.capacity = max(1, burst)
        self._tokens = float(self.capacity)
        self._updated = time.monotonic()
        self._lock = threading.Lock()

    def acquire(self) -> None:
        while True:
            with self._lock:
                now = time.monotonic()
                self._tokens = min(self.capacity, self._tokens + (now - self._updated) * self.rate)
                self._updated = now
                if self._tokens >= 1.0:
                    self._tokens -= 1.0
                    return
                wait = (1.0 - self._tokens) / self.rate
            time.sleep(wait)


class RateLimitedProvider:
    """Wraps a provider so every call first takes a token from a shared bucket."""

    def __init__(self, inner: ModelProvider, limiter: RateLimiter):
        self.inner = inner
        self.limiter = limiter

    def complete(self, request: ModelRequest) -> ModelResponse:
        self.limiter.acquire()
        return self.inner.complete(request)
