"""Uniform access to chat and embedding backends.

Two backend families: a remote HTTP backend speaking the common
chat-completions JSON shape, and deterministic in-process mocks for offline
runs and tests. All calls go through ``chat``/``embed_batch``, which apply
the retry policy and append to a shared call log that tests can inspect.
"""

from __future__ import annotations

import hashlib
import json
import os
import threading
import time
from collections import defaultdict, deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

MOCK_EMBED_DIM = 64


class GatewayError(Exception):
    """Base class for gateway failures."""


class NonRetryable(GatewayError):
    """Auth / 4xx-class failure; never retried."""


class TransientError(GatewayError):
    """Retryable failure (timeouts, 5xx, connection resets)."""


class Exhausted(GatewayError):
    """All retry attempts failed."""

    def __init__(self, message: str, attempts: list[str]):
        super().__init__(message)
        self.attempts = attempts


class DimensionMismatch(GatewayError):
    pass


@dataclass(frozen=True)
class ChatMessage:
    role: str  # system | user | assistant
    text: str


@dataclass(frozen=True)
class ChatRequest:
    messages: tuple[ChatMessage, ...]
    temperature: float = 0.0
    max_tokens: int = 2048
    tag: str = "chat"

    def __post_init__(self):
        if not any(m.role == "user" for m in self.messages):
            raise ValueError("ChatRequest needs at least one user message")

    @property
    def last_user_text(self) -> str:
        return next(m.text for m in reversed(self.messages) if m.role == "user")

    def full_text(self) -> str:
        return "\n".join(f"{m.role}: {m.text}" for m in self.messages)


@dataclass(frozen=True)
class RetryPolicy:
    max_attempts: int = 3
    backoff_base_ms: int = 200
    timeout_ms: int = 60_000

    def __post_init__(self):
        if self.max_attempts < 1:
            raise ValueError("max_attempts must be >= 1")


@dataclass
class CallRecord:
    tag: str
    kind: str  # "chat" | "embed"
    attempts: int
    latency_ms: float
    request_text: str
    response_text: str


class CallLog:
    """Thread-safe append-only log of gateway calls."""

    def __init__(self):
        self._records: list[CallRecord] = []
        self._lock = threading.Lock()

    def append(self, record: CallRecord) -> None:
        with self._lock:
            self._records.append(record)

    def records(self, tag: Optional[str] = None, kind: Optional[str] = None) -> list[CallRecord]:
        with self._lock:
            recs = list(self._records)
        if tag is not None:
            recs = [r for r in recs if r.tag == tag]
        if kind is not None:
            recs = [r for r in recs if r.kind == kind]
        return recs

    def count(self, tag: Optional[str] = None, kind: Optional[str] = None) -> int:
        return len(self.records(tag=tag, kind=kind))

    def clear(self) -> None:
        with self._lock:
            self._records.clear()


class ChatBackend:
    def complete(self, req: ChatRequest) -> str:
        raise NotImplementedError


class EmbeddingBackend:
    dim: int

    def embed(self, texts: Sequence[str]) -> list[list[float]]:
        raise NotImplementedError


class EchoBackend(ChatBackend):
    """Returns the last user message verbatim."""

    def complete(self, req: ChatRequest) -> str:
        return req.last_user_text


class ScriptedBackend(ChatBackend):
    """Tag-matched FIFO responses with optional per-tag defaults.

    Script records (JSONL): {"tag": t, "response": r} queues a one-shot
    response; {"tag": t, "default": r} sets the fallback once the queue for
    that tag is empty. A record {"tag": t, "error": "transient"|"fatal"}
    queues a scripted failure.
    """

    def __init__(self, records: Optional[Sequence[dict]] = None):
        self._queues: dict[str, deque] = defaultdict(deque)
        self._defaults: dict[str, str] = {}
        self._lock = threading.Lock()
        for rec in records or []:
            self.add(rec)

    def add(self, rec: dict) -> None:
        tag = rec["tag"]
        if "default" in rec:
            self._defaults[tag] = rec["default"]
        elif "error" in rec:
            self._queues[tag].append(GatewayError if rec["error"] == "fatal" else TransientError)
        else:
            self._queues[tag].append(rec["response"])

    @classmethod
    def from_file(cls, path: str | Path) -> "ScriptedBackend":
        records = []
        with Path(path).open("r", encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if line:
                    records.append(json.loads(line))
        return cls(records)

    def complete(self, req: ChatRequest) -> str:
        with self._lock:
            queue = self._queues.get(req.tag)
            if queue:
                item = queue.popleft()
                if isinstance(item, type) and issubclass(item, Exception):
                    raise item(f"scripted failure for tag {req.tag!r}")
                return item
            if req.tag in self._defaults:
                return self._defaults[req.tag]
        raise NonRetryable(f"mock script has no response for tag {req.tag!r}")


class FlakyBackend(ChatBackend):
    """Fails the first ``failures`` calls with a transient error, then
    delegates. Test helper for the retry policy."""

    def __init__(self, inner: ChatBackend, failures: int):
        self.inner = inner
        self.remaining = failures

    def complete(self, req: ChatRequest) -> str:
        if self.remaining > 0:
            self.remaining -= 1
            raise TransientError("scheduled failure")
        return self.inner.complete(req)


class MockEmbeddingBackend(EmbeddingBackend):
    """Deterministic embedding: seeded hash of the token multiset expanded
    to a unit vector.

    Each token maps (via sha256, so stable across processes) to a fixed
    pseudo-random direction; a text embeds to the normalized sum of its
    token directions. Shared tokens therefore produce genuinely similar
    vectors, which gives HNSW tests meaningful neighborhood structure.
    """

    def __init__(self, dim: int = MOCK_EMBED_DIM, seed: int = 0):
        self.dim = dim
        self.seed = seed
        self._token_cache: dict[str, np.ndarray] = {}

    def _token_vector(self, token: str) -> np.ndarray:
        vec = self._token_cache.get(token)
        if vec is None:
            digest = hashlib.sha256(f"{self.seed}:{token}".encode("utf-8")).digest()
            rng = np.random.Generator(np.random.PCG64(int.from_bytes(digest[:8], "little")))
            vec = rng.standard_normal(self.dim)
            self._token_cache[token] = vec
        return vec

    def embed(self, texts: Sequence[str]) -> list[list[float]]:
        from .textutil import tokenize

        out = []
        for text in texts:
            tokens = tokenize(text)
            if tokens:
                acc = np.zeros(self.dim)
                for tok in tokens:
                    acc += self._token_vector(tok)
            else:
                acc = self._token_vector("")
            norm = float(np.linalg.norm(acc))
            if norm == 0.0:
                acc = self._token_vector("")
                norm = float(np.linalg.norm(acc))
            out.append((acc / norm).tolist())
        return out


class HttpChatBackend(ChatBackend):
    """Chat-completions-compatible HTTP backend.

    Endpoint, model and key come from configuration or the
    TOSRR_LLM_ENDPOINT / TOSRR_LLM_MODEL / TOSRR_LLM_KEY environment
    variables; no vendor is hardcoded.
    """

    def __init__(self, endpoint: Optional[str] = None, model: Optional[str] = None,
                 api_key: Optional[str] = None, timeout_s: float = 60.0):
        self.endpoint = endpoint or os.environ.get("TOSRR_LLM_ENDPOINT", "")
        self.model = model or os.environ.get("TOSRR_LLM_MODEL", "")
        self.api_key = api_key or os.environ.get("TOSRR_LLM_KEY", "")
        self.timeout_s = timeout_s
        if not self.endpoint:
            raise NonRetryable("no chat endpoint configured (TOSRR_LLM_ENDPOINT)")

    def complete(self, req: ChatRequest) -> str:
        import httpx

        body = {
            "model": self.model,
            "temperature": req.temperature,
            "max_tokens": req.max_tokens,
            "messages": [{"role": m.role, "content": m.text} for m in req.messages],
        }
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        try:
            resp = httpx.post(self.endpoint, json=body, headers=headers, timeout=self.timeout_s)
        except httpx.HTTPError as exc:
            raise TransientError(str(exc)) from exc
        if resp.status_code >= 500:
            raise TransientError(f"server error {resp.status_code}")
        if resp.status_code >= 400:
            raise NonRetryable(f"client error {resp.status_code}: {resp.text[:200]}")
        data = resp.json()
        return data["choices"][0]["message"]["content"]


class HttpEmbeddingBackend(EmbeddingBackend):
    def __init__(self, endpoint: Optional[str] = None, model: Optional[str] = None,
                 api_key: Optional[str] = None, dim: int = MOCK_EMBED_DIM, timeout_s: float = 60.0):
        self.endpoint = endpoint or os.environ.get("TOSRR_EMBED_ENDPOINT", "")
        self.model = model or os.environ.get("TOSRR_EMBED_MODEL", "")
        self.api_key = api_key or os.environ.get("TOSRR_LLM_KEY", "")
        self.dim = dim
        self.timeout_s = timeout_s
        if not self.endpoint:
            raise NonRetryable("no embedding endpoint configured (TOSRR_EMBED_ENDPOINT)")

    def embed(self, texts: Sequence[str]) -> list[list[float]]:
        import httpx

        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        body = {"model": self.model, "input": list(texts)}
        try:
            resp = httpx.post(self.endpoint, json=body, headers=headers, timeout=self.timeout_s)
        except httpx.HTTPError as exc:
            raise TransientError(str(exc)) from exc
        if resp.status_code >= 500:
            raise TransientError(f"server error {resp.status_code}")
        if resp.status_code >= 400:
            raise NonRetryable(f"client error {resp.status_code}: {resp.text[:200]}")
        data = resp.json()
        return [item["embedding"] for item in data["data"]]


@dataclass
class Gateway:
    """Retrying facade over one chat backend and one embedding backend."""

    chat_backend: ChatBackend
    embedding_backend: EmbeddingBackend
    policy: RetryPolicy = field(default_factory=RetryPolicy)
    call_log: CallLog = field(default_factory=CallLog)
    sleep: Callable[[float], None] = time.sleep
    clock: Callable[[], float] = time.perf_counter

    def chat(self, req: ChatRequest) -> str:
        attempts: list[str] = []
        start = self.clock()
        for attempt in range(1, self.policy.max_attempts + 1):
            try:
                response = self.chat_backend.complete(req)
                attempts.append("ok")
                self.call_log.append(CallRecord(
                    tag=req.tag, kind="chat", attempts=attempt,
                    latency_ms=(self.clock() - start) * 1000.0,
                    request_text=req.full_text(), response_text=response,
                ))
                return response
            except NonRetryable:
                raise
            except GatewayError as exc:
                attempts.append(f"error: {exc}")
                if attempt < self.policy.max_attempts:
                    self.sleep(self.policy.backoff_base_ms * (2 ** (attempt - 1)) / 1000.0)
        raise Exhausted(f"chat failed after {self.policy.max_attempts} attempts", attempts)

    def embed_batch(self, texts: Sequence[str]) -> list[list[float]]:
        if not texts:
            return []
        attempts: list[str] = []
        start = self.clock()
        for attempt in range(1, self.policy.max_attempts + 1):
            try:
                vectors = self.embedding_backend.embed(texts)
                dim = self.embedding_backend.dim
                for v in vectors:
                    if len(v) != dim:
                        raise DimensionMismatch(f"backend returned dim {len(v)}, declared {dim}")
                attempts.append("ok")
                self.call_log.append(CallRecord(
                    tag="embed", kind="embed", attempts=attempt,
                    latency_ms=(self.clock() - start) * 1000.0,
                    request_text="\n".join(texts), response_text=f"{len(vectors)} vectors",
                ))
                return [list(v) for v in vectors]
            except (NonRetryable, DimensionMismatch):
                raise
            except GatewayError as exc:
                attempts.append(f"error: {exc}")
                if attempt < self.policy.max_attempts:
                    self.sleep(self.policy.backoff_base_ms * (2 ** (attempt - 1)) / 1000.0)
        raise Exhausted(f"embed failed after {self.policy.max_attempts} attempts", attempts)


def mock_gateway(script: Optional[Sequence[dict]] = None, seed: int = 0,
                 policy: Optional[RetryPolicy] = None) -> Gateway:
    """Offline gateway: scripted chat (echo when no script) + mock embeddings."""
    chat_backend: ChatBackend = ScriptedBackend(script) if script is not None else EchoBackend()
    return Gateway(
        chat_backend=chat_backend,
        embedding_backend=MockEmbeddingBackend(seed=seed),
        policy=policy or RetryPolicy(backoff_base_ms=1),
        sleep=lambda _s: None,
    )
