"""Chat and embedding clients with caching, retry and in-flight limiting."""

from __future__ import annotations

import hashlib
import json
import logging
import os
import threading
import time
from dataclasses import dataclass
from typing import Callable, Mapping, Protocol, Sequence

import numpy as np

from ..errors import PipelineRuntimeError, ValidationError
from .cache import DiskCache

logger = logging.getLogger(__name__)

API_KEY_ENV = "EMERGE_API_KEY"
API_BASE_ENV = "EMERGE_API_BASE"


class GatewayError(PipelineRuntimeError):
    """Non-retriable gateway failure."""


class TransportError(GatewayError):
    """Network/server failure; retried with backoff."""


class ContentRisk(GatewayError):
    """The provider refused the prompt on content-policy grounds."""


class DimensionMismatch(GatewayError):
    pass


class ConfigurationError(ValidationError):
    pass


@dataclass(frozen=True)
class ChatRequest:
    profile: str
    prompt: str
    temperature: float = 0.0
    max_tokens: int = 1024

    def __post_init__(self):
        if self.temperature < 0:
            raise ValidationError("temperature must be >= 0")
        if self.max_tokens < 1:
            raise ValidationError("max_tokens must be positive")

    def cache_key(self) -> str:
        payload = json.dumps(
            ["chat", self.profile, self.prompt, float(self.temperature), int(self.max_tokens)],
            ensure_ascii=False,
        )
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()


def embed_cache_key(profile: str, text: str) -> str:
    payload = json.dumps(["embed", profile, text], ensure_ascii=False)
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class GatewayResponse:
    text: str
    cached: bool
    latency_ms: int
    attempt_count: int


class ChatBackend(Protocol):
    def complete(self, prompt: str, *, temperature: float, max_tokens: int) -> str: ...


class EmbedBackend(Protocol):
    dim: int

    def embed(self, text: str) -> Sequence[float]: ...


class _HttpBackend:
    def __init__(self, endpoint: str, model: str, api_key: str | None = None, timeout: float = 60.0,
                 session=None):
        import requests

        self.endpoint = endpoint
        self.model = model
        self.api_key = api_key if api_key is not None else os.environ.get(API_KEY_ENV)
        self.timeout = timeout
        self.session = session or requests.Session()
        self._requests = requests

    def _post(self, body: dict) -> dict:
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        try:
            resp = self.session.post(self.endpoint, json=body, headers=headers, timeout=self.timeout)
        except self._requests.RequestException as exc:
            raise TransportError(f"POST {self.endpoint} failed: {exc}") from exc
        if "Content Exists Risk" in resp.text:
            raise ContentRisk(resp.text[:200])
        if resp.status_code == 429 or resp.status_code >= 500:
            raise TransportError(f"POST {self.endpoint}: HTTP {resp.status_code}")
        if resp.status_code >= 400:
            raise GatewayError(f"POST {self.endpoint}: HTTP {resp.status_code}: {resp.text[:200]}")
        try:
            return resp.json()
        except ValueError as exc:
            raise TransportError(f"POST {self.endpoint}: response is not JSON") from exc


class OpenAIChatBackend(_HttpBackend):
    """OpenAI-compatible ``/chat/completions`` endpoint."""

    def complete(self, prompt: str, *, temperature: float, max_tokens: int) -> str:
        data = self._post(
            {
                "model": self.model,
                "messages": [{"role": "user", "content": prompt}],
                "temperature": temperature,
                "max_tokens": max_tokens,
            }
        )
        try:
            choice = data["choices"][0]
        except (KeyError, IndexError, TypeError) as exc:
            raise GatewayError("chat response has no choices") from exc
        if choice.get("finish_reason") == "content_filter":
            raise ContentRisk("finish_reason=content_filter")
        content = (choice.get("message") or {}).get("content")
        if content is None:
            raise GatewayError("chat response has no message content")
        return content


class OpenAIEmbedBackend(_HttpBackend):
    """OpenAI-compatible ``/embeddings`` endpoint."""

    def __init__(self, endpoint: str, model: str, dim: int, **kwargs):
        super().__init__(endpoint, model, **kwargs)
        self.dim = dim

    def embed(self, text: str) -> Sequence[float]:
        data = self._post({"model": self.model, "input": text})
        try:
            return data["data"][0]["embedding"]
        except (KeyError, IndexError, TypeError) as exc:
            raise GatewayError("embedding response has no data") from exc


class Gateway:
    """Single entry point for every LLM and embedding call in the pipeline.

    Cache hits never touch a backend. Misses are retried on
    ``TransportError`` with exponential backoff (``backoff * 2**attempt``);
    ``ContentRisk`` is surfaced immediately and never cached.
    """

    def __init__(
        self,
        chat_backends: Mapping[str, ChatBackend] | None = None,
        embed_backends: Mapping[str, EmbedBackend] | None = None,
        cache: DiskCache | None = None,
        *,
        max_attempts: int = 3,
        backoff: float = 0.5,
        max_in_flight: int = 8,
        sleep: Callable[[float], None] = time.sleep,
    ):
        if max_attempts < 1:
            raise ConfigurationError("max_attempts must be >= 1")
        self.chat_backends = dict(chat_backends or {})
        self.embed_backends = dict(embed_backends or {})
        self.cache = cache
        self.max_attempts = max_attempts
        self.backoff = backoff
        self._sleep = sleep
        self._slots = threading.BoundedSemaphore(max_in_flight)
        self._lock = threading.Lock()
        self.backend_calls = 0

    def _count_call(self) -> None:
        with self._lock:
            self.backend_calls += 1

    def _with_retry(self, fn, what: str):
        for attempt in range(1, self.max_attempts + 1):
            self._count_call()
            try:
                with self._slots:
                    return fn(), attempt
            except TransportError as exc:
                if attempt == self.max_attempts:
                    raise TransportError(f"{what}: giving up after {attempt} attempts: {exc}") from exc
                delay = self.backoff * 2 ** (attempt - 1)
                logger.warning("%s: attempt %d failed (%s); retrying in %.2fs", what, attempt, exc, delay)
                self._sleep(delay)

    def chat(self, req: ChatRequest) -> GatewayResponse:
        start = time.perf_counter()
        key = req.cache_key()
        if self.cache is not None:
            hit = self.cache.get(req.profile, key)
            if hit is not None:
                return GatewayResponse(hit["text"], True, _ms(start), 0)
        try:
            backend = self.chat_backends[req.profile]
        except KeyError:
            raise ConfigurationError(f"no chat profile named {req.profile!r}") from None
        text, attempts = self._with_retry(
            lambda: backend.complete(req.prompt, temperature=req.temperature, max_tokens=req.max_tokens),
            f"chat[{req.profile}]",
        )
        if not isinstance(text, str):
            raise GatewayError(f"chat[{req.profile}] returned {type(text).__name__}, expected str")
        if self.cache is not None:
            self.cache.put(req.profile, key, {"text": text})
        return GatewayResponse(text, False, _ms(start), attempts)

    def embed(self, profile: str, text: str) -> np.ndarray:
        try:
            backend = self.embed_backends[profile]
        except KeyError:
            raise ConfigurationError(f"no embedding profile named {profile!r}") from None
        key = embed_cache_key(profile, text)
        if self.cache is not None:
            hit = self.cache.get(profile, key)
            if hit is not None:
                return self._check_dim(profile, backend, hit["vector"])
        vector, _ = self._with_retry(lambda: backend.embed(text), f"embed[{profile}]")
        vec = self._check_dim(profile, backend, vector)
        if self.cache is not None:
            self.cache.put(profile, key, {"vector": vec.tolist()})
        return vec

    def embedder(self, profile: str) -> Callable[[str], np.ndarray]:
        return lambda text: self.embed(profile, text)

    @staticmethod
    def _check_dim(profile: str, backend, vector) -> np.ndarray:
        vec = np.asarray(vector, dtype=np.float64)
        if vec.ndim != 1 or vec.shape[0] != backend.dim:
            raise DimensionMismatch(
                f"embed[{profile}] returned shape {vec.shape}, profile declares dim {backend.dim}"
            )
        return vec


def _ms(start: float) -> int:
    return int(round((time.perf_counter() - start) * 1000))
