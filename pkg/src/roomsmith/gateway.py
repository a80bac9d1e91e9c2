"""The single boundary to all neural model backends.

Three capabilities: chat-style text generation, image-conditioned token
log-likelihood scoring, and embedding computation.  :class:`ModelGateway`
wraps one backend per capability with request validation, a per-capability
concurrency bound, and retries on transport failures.  :class:`MockBackend`
serves all three capabilities deterministically from lookup tables so the
whole stack runs offline.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import os
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Protocol, Sequence

import httpx

from .errors import (
    CapabilityError,
    ConfigurationError,
    GatewayError,
    GatewayTimeoutError,
    HttpStatusError,
    TransportError,
    ValidationError,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True, slots=True)
class ChatRequest:
    instruction: str
    user_content: str
    max_tokens: int = 1024
    temperature: float = 0.0
    seed: int | None = None

    def __post_init__(self):
        if self.max_tokens < 1:
            raise ValidationError(f"max_tokens must be >= 1, got {self.max_tokens}")
        if self.temperature < 0:
            raise ValidationError(
                f"temperature must be >= 0, got {self.temperature}")


@dataclass(frozen=True, slots=True)
class ScoreRequest:
    """Teacher-forced scoring of ``target_text`` conditioned on an image.

    ``prefix_prompt`` tokens condition the model but are excluded from the
    scored sum.
    """

    image: str
    prefix_prompt: str
    target_text: str


@dataclass(frozen=True, slots=True)
class ScoreResponse:
    token_logprobs: tuple[tuple[str, float], ...]
    sum_logprob: float = field(default=math.nan)

    def __post_init__(self):
        object.__setattr__(self, "token_logprobs", tuple(
            (str(tok), float(lp)) for tok, lp in self.token_logprobs))
        for token, lp in self.token_logprobs:
            if not math.isfinite(lp) or lp > 0:
                raise ValidationError(
                    f"token log-probability must be finite and <= 0, "
                    f"got {lp!r} for {token!r}")
        total = math.fsum(lp for _, lp in self.token_logprobs)
        if math.isnan(self.sum_logprob):
            object.__setattr__(self, "sum_logprob", total)
        elif abs(self.sum_logprob - total) > 1e-6:
            raise ValidationError(
                f"sum_logprob {self.sum_logprob} disagrees with token sum {total}")


@dataclass(frozen=True, slots=True)
class EmbedRequest:
    input: str
    kind: str = "text"  # "text" or "image"

    def __post_init__(self):
        if self.kind not in ("text", "image"):
            raise ValidationError(f"embed kind must be text|image, got {self.kind!r}")


@dataclass(frozen=True, slots=True)
class EmbedResponse:
    vector: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "vector",
                           tuple(float(v) for v in self.vector))
        norm = math.sqrt(math.fsum(v * v for v in self.vector))
        if abs(norm - 1.0) > 1e-6:
            raise ValidationError(f"embedding must be unit-norm, |v| = {norm}")


@dataclass(frozen=True)
class RetryPolicy:
    count: int = 2
    backoff_s: float = 0.1

    def __post_init__(self):
        if self.count < 0 or self.backoff_s < 0:
            raise ConfigurationError("retry count and backoff must be >= 0")


@dataclass(frozen=True)
class BackendConfig:
    endpoint: str = ""
    model: str = ""
    api_key_env: str = ""
    timeout_s: float = 30.0
    max_parallel_requests: int = 4
    retry: RetryPolicy = RetryPolicy()

    def __post_init__(self):
        if self.max_parallel_requests < 1:
            raise ConfigurationError("max_parallel_requests must be >= 1")
        if self.timeout_s <= 0:
            raise ConfigurationError("timeout_s must be > 0")


class Backend(Protocol):
    def generate(self, req: ChatRequest) -> str: ...

    def score_text(self, req: ScoreRequest) -> ScoreResponse: ...

    def embed(self, req: EmbedRequest) -> EmbedResponse: ...


def _normalize(vector: Sequence[float]) -> tuple[float, ...]:
    norm = math.sqrt(math.fsum(float(v) * float(v) for v in vector))
    if norm == 0:
        raise ValidationError("cannot normalize a zero embedding vector")
    return tuple(float(v) / norm for v in vector)


def _hash_unit_vector(key: str, dim: int) -> tuple[float, ...]:
    """Deterministic pseudo-random unit vector derived from a string key."""
    values: list[float] = []
    counter = 0
    while len(values) < dim:
        digest = hashlib.sha256(f"{key}#{counter}".encode("utf-8")).digest()
        for i in range(0, len(digest) - 7, 8):
            chunk = int.from_bytes(digest[i:i + 8], "big")
            values.append(chunk / 2**64 - 0.5)
            if len(values) == dim:
                break
        counter += 1
    return _normalize(values)


class MockLookupError(GatewayError):
    """The mock backend has no table entry for a request."""


class MockBackend:
    """Deterministic in-process backend driven by lookup tables.

    Chat entries map (instruction, user_content) to a response or a sequence
    of responses consumed call by call (the last one repeats).  Score entries
    map (image, target_text) to per-token log-probabilities.  Embedding
    entries map the raw input string to a vector.  Missing entries either
    raise :class:`MockLookupError` or, when the corresponding default is
    enabled, synthesize a value that is a pure function of the request.
    """

    def __init__(self, *, chat: dict | None = None,
                 scores: dict | None = None,
                 embeddings: dict | None = None,
                 embedding_dim: int | None = None,
                 default_token_logprob: float | None = None,
                 synthesize_missing_chat: bool = False,
                 synthesize_missing_embeddings: bool = False,
                 latency_s: float = 0.0):
        self._chat = {key: list(value) if isinstance(value, (list, tuple))
                      else [value] for key, value in (chat or {}).items()}
        self._scores = {key: self._normalize_score_entry(key, value)
                        for key, value in (scores or {}).items()}
        self._embeddings = {key: _normalize(value)
                            for key, value in (embeddings or {}).items()}
        self.embedding_dim = embedding_dim
        for key, vec in self._embeddings.items():
            if self.embedding_dim is None:
                self.embedding_dim = len(vec)
            elif len(vec) != self.embedding_dim:
                raise ConfigurationError(
                    f"embedding for {key!r} has dim {len(vec)}, "
                    f"expected {self.embedding_dim}")
        self.default_token_logprob = default_token_logprob
        self.synthesize_missing_chat = synthesize_missing_chat
        self.synthesize_missing_embeddings = synthesize_missing_embeddings
        self.latency_s = latency_s

        self._lock = threading.Lock()
        self._chat_cursor: dict[tuple[str, str], int] = {}
        self.call_log: list[tuple[str, tuple]] = []
        self.in_flight = 0
        self.max_in_flight = 0

    @staticmethod
    def _normalize_score_entry(key: tuple[str, str], value
                               ) -> tuple[tuple[str, float], ...]:
        _, target = key
        tokens = target.split()
        if isinstance(value, (int, float)):
            return tuple((tok, float(value)) for tok in tokens)
        value = list(value)
        if value and isinstance(value[0], (int, float)):
            if len(value) != len(tokens):
                raise ConfigurationError(
                    f"score entry for {key!r} has {len(value)} values for "
                    f"{len(tokens)} whitespace tokens; use (token, logprob) "
                    "pairs for custom tokenizations")
            return tuple((tok, float(lp)) for tok, lp in zip(tokens, value))
        return tuple((str(tok), float(lp)) for tok, lp in value)

    @classmethod
    def from_file(cls, path: str | Path) -> "MockBackend":
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        chat = {}
        for entry in data.get("chat", []):
            key = (entry.get("instruction", ""), entry.get("user", ""))
            chat[key] = entry["responses"] if "responses" in entry else entry["response"]
        scores = {}
        for entry in data.get("scores", []):
            key = (entry["image"], entry["target"])
            if "token_logprobs" in entry:
                scores[key] = [tuple(pair) for pair in entry["token_logprobs"]]
            else:
                scores[key] = entry["per_token_logprob"]
        embeddings = {entry["input"]: entry["vector"]
                      for entry in data.get("embeddings", [])}
        return cls(
            chat=chat, scores=scores, embeddings=embeddings,
            embedding_dim=data.get("embedding_dim"),
            default_token_logprob=data.get("default_token_logprob"),
            synthesize_missing_chat=data.get("synthesize_missing_chat", False),
            synthesize_missing_embeddings=data.get(
                "synthesize_missing_embeddings", False),
        )

    def _track(self, op: str, key: tuple):
        backend = self

        class _Tracker:
            def __enter__(self):
                with backend._lock:
                    backend.in_flight += 1
                    backend.max_in_flight = max(backend.max_in_flight,
                                                backend.in_flight)
                    backend.call_log.append((op, key))
                if backend.latency_s:
                    time.sleep(backend.latency_s)
                return self

            def __exit__(self, *exc):
                with backend._lock:
                    backend.in_flight -= 1
                return False

        return _Tracker()

    def count(self, op: str, key: tuple | None = None) -> int:
        with self._lock:
            return sum(1 for logged_op, logged_key in self.call_log
                       if logged_op == op and (key is None or logged_key == key))

    def embed_count(self, input_value: str) -> int:
        return self.count("embed", (input_value,))

    def generate(self, req: ChatRequest) -> str:
        key = (req.instruction, req.user_content)
        with self._track("generate", key):
            with self._lock:
                responses = self._chat.get(key)
                if responses is not None:
                    cursor = self._chat_cursor.get(key, 0)
                    self._chat_cursor[key] = cursor + 1
                    return responses[min(cursor, len(responses) - 1)]
            if self.synthesize_missing_chat:
                digest = hashlib.sha256(
                    f"{req.instruction}\x00{req.user_content}\x00{req.seed}"
                    .encode("utf-8")).hexdigest()
                return f"mock-completion-{digest[:12]}"
            raise MockLookupError(
                f"no mock chat entry for instruction={req.instruction[:60]!r} "
                f"user={req.user_content[:60]!r}")

    def score_text(self, req: ScoreRequest) -> ScoreResponse:
        key = (req.image, req.target_text)
        with self._track("score", key):
            with self._lock:
                entry = self._scores.get(key)
            if entry is None:
                if self.default_token_logprob is None:
                    raise MockLookupError(
                        f"no mock score entry for image={req.image!r} "
                        f"target={req.target_text[:60]!r}")
                entry = tuple((tok, self.default_token_logprob)
                              for tok in req.target_text.split())
            if not entry:
                raise CapabilityError(
                    f"mock tokenizer produced no tokens for "
                    f"{req.target_text!r}")
            return ScoreResponse(token_logprobs=entry)

    def embed(self, req: EmbedRequest) -> EmbedResponse:
        with self._track("embed", (req.input,)):
            with self._lock:
                vector = self._embeddings.get(req.input)
            if vector is None:
                if not self.synthesize_missing_embeddings:
                    raise MockLookupError(
                        f"no mock embedding for {req.input!r}")
                if self.embedding_dim is None:
                    raise ConfigurationError(
                        "synthesized embeddings require embedding_dim")
                vector = _hash_unit_vector(req.input, self.embedding_dim)
            return EmbedResponse(vector=vector)


class OpenAiHttpBackend:
    """Client for OpenAI-compatible HTTP servers.

    Generation uses ``/v1/chat/completions``; embeddings use
    ``/v1/embeddings``.  Scoring uses the echo-with-logprobs pattern on
    ``/v1/completions`` (``echo: true, max_tokens: 0, logprobs: 0``) with the
    image reference passed in an ``images`` list; servers that cannot echo
    prompt log-probabilities raise :class:`CapabilityError` and need a
    scoring-capable deployment.
    """

    def __init__(self, config: BackendConfig,
                 transport: httpx.BaseTransport | None = None):
        if not config.endpoint:
            raise ConfigurationError("HTTP backend requires an endpoint URL")
        self.config = config
        headers = {}
        if config.api_key_env:
            api_key = os.environ.get(config.api_key_env, "")
            if api_key:
                headers["Authorization"] = f"Bearer {api_key}"
        self._client = httpx.Client(base_url=config.endpoint, headers=headers,
                                    timeout=config.timeout_s,
                                    transport=transport)

    def close(self) -> None:
        self._client.close()

    def _post(self, path: str, payload: dict) -> dict:
        try:
            response = self._client.post(path, json=payload)
        except httpx.TimeoutException as exc:
            raise GatewayTimeoutError(
                f"request to {path} timed out after "
                f"{self.config.timeout_s}s") from exc
        except httpx.TransportError as exc:
            raise TransportError(f"request to {path} failed: {exc}") from exc
        if response.status_code < 200 or response.status_code >= 300:
            raise HttpStatusError(
                f"{path} returned HTTP {response.status_code}: "
                f"{response.text[:200]}", status=response.status_code)
        try:
            return response.json()
        except ValueError as exc:
            raise GatewayError(f"{path} returned non-JSON body") from exc

    def generate(self, req: ChatRequest) -> str:
        payload: dict = {
            "model": self.config.model,
            "messages": [
                {"role": "system", "content": req.instruction},
                {"role": "user", "content": req.user_content},
            ],
            "max_tokens": req.max_tokens,
            "temperature": req.temperature,
        }
        if req.seed is not None:
            payload["seed"] = req.seed
        data = self._post("/v1/chat/completions", payload)
        try:
            choice = data["choices"][0]
            content = choice["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise GatewayError(f"malformed chat completion response: {data!r}") from exc
        if choice.get("finish_reason") == "length":
            logger.warning("completion truncated at max_tokens=%d", req.max_tokens)
        return content or ""

    def score_text(self, req: ScoreRequest) -> ScoreResponse:
        prompt = req.prefix_prompt + req.target_text
        payload = {
            "model": self.config.model,
            "prompt": prompt,
            "echo": True,
            "max_tokens": 0,
            "logprobs": 0,
            "images": [req.image],
        }
        data = self._post("/v1/completions", payload)
        try:
            logprobs = data["choices"][0]["logprobs"]
            tokens = logprobs["tokens"]
            token_logprobs = logprobs["token_logprobs"]
            offsets = logprobs["text_offset"]
        except (KeyError, IndexError, TypeError) as exc:
            raise CapabilityError(
                "backend did not echo token log-probabilities; scoring "
                "requires a server supporting echo with logprobs") from exc
        prefix_len = len(req.prefix_prompt)
        pairs = [
            (token, lp)
            for token, lp, offset in zip(tokens, token_logprobs, offsets)
            if offset >= prefix_len and lp is not None
        ]
        if not pairs:
            raise CapabilityError(
                "no scored tokens past the prefix; check tokenizer alignment")
        return ScoreResponse(token_logprobs=tuple(pairs))

    def embed(self, req: EmbedRequest) -> EmbedResponse:
        payload = {"model": self.config.model, "input": [req.input]}
        data = self._post("/v1/embeddings", payload)
        try:
            vector = data["data"][0]["embedding"]
        except (KeyError, IndexError, TypeError) as exc:
            raise GatewayError(f"malformed embeddings response: {data!r}") from exc
        return EmbedResponse(vector=_normalize(vector))


class ModelGateway:
    """Validated, rate-bounded, retrying front to the three capabilities.

    Each capability slot has its own backend, concurrency bound, and retry
    policy.  Transport failures (including timeouts) and HTTP 5xx responses
    are retried with exponential backoff; validation and capability errors
    are not.
    """

    def __init__(self, chat: Backend,
                 score: Backend | None = None,
                 embed: Backend | None = None, *,
                 chat_config: BackendConfig | None = None,
                 score_config: BackendConfig | None = None,
                 embed_config: BackendConfig | None = None):
        chat_config = chat_config or BackendConfig()
        self._slots = {
            "chat": (chat, chat_config),
            "score": (score or chat, score_config or chat_config),
            "embed": (embed or chat, embed_config or chat_config),
        }
        self._semaphores = {
            name: threading.BoundedSemaphore(config.max_parallel_requests)
            for name, (backend, config) in self._slots.items()
        }

    def _call(self, slot: str, op: Callable):
        backend, config = self._slots[slot]
        retry = config.retry
        attempt = 0
        while True:
            try:
                with self._semaphores[slot]:
                    return op(backend)
            except (TransportError, HttpStatusError) as exc:
                if isinstance(exc, HttpStatusError) and exc.status < 500:
                    raise
                if attempt >= retry.count:
                    raise
                delay = retry.backoff_s * (2 ** attempt)
                logger.warning("%s backend failed (%s); retry %d/%d in %.2fs",
                               slot, exc, attempt + 1, retry.count, delay)
                if delay:
                    time.sleep(delay)
                attempt += 1

    def generate(self, req: ChatRequest) -> str:
        return self._call("chat", lambda backend: backend.generate(req))

    def score_text(self, req: ScoreRequest) -> ScoreResponse:
        if not req.target_text.strip():
            raise ValidationError("score target text must be non-empty")
        return self._call("score", lambda backend: backend.score_text(req))

    def embed(self, req: EmbedRequest) -> EmbedResponse:
        if not req.input:
            raise ValidationError("embed input must be non-empty")
        return self._call("embed", lambda backend: backend.embed(req))


def mock_gateway(backend: MockBackend | None = None, *,
                 config: BackendConfig | None = None,
                 **mock_kwargs) -> tuple[ModelGateway, MockBackend]:
    """Convenience constructor: one mock backend serving all capabilities."""
    backend = backend or MockBackend(**mock_kwargs)
    config = config or BackendConfig(retry=RetryPolicy(count=0, backoff_s=0.0))
    gateway = ModelGateway(backend, chat_config=config)
    return gateway, backend
