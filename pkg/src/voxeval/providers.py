"""Completion backends: deterministic local mocks and remote HTTP APIs.

Two mocks ship in-tree. EchoOracle replays each turn's gold actions and is
the harness self-test (a run scored against itself must reach F1 = 1.0).
NearestNeighborBaseline answers with the gold code of the most similar
training turn, a retrieval-only floor. Remote endpoints are reached through
a configuration-driven adapter rather than per-vendor code.
"""
from __future__ import annotations

import hashlib
import json
import logging
import os
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Callable

from .corpus import TurnPair
from .dsl import serialize_action
from .net import (
    AuthenticationError,
    MalformedResponseError,
    ProviderConfigError,
    ProviderError,
    RateLimiter,
    RetryableError,
    RetryExhaustedError,
    json_path,
    retry_with_backoff,
)
from .prompting import PromptText
from .retrieval import EmbeddingProvider, ExampleIndex, top_k

__all__ = [
    "CompletionRequest",
    "CompletionRecord",
    "CompletionProvider",
    "EchoOracle",
    "NearestNeighborBaseline",
    "RemoteProviderConfig",
    "RemoteProvider",
    "ResponseCache",
    "cached_complete",
    "ProviderError",
    "ProviderConfigError",
    "AuthenticationError",
    "MalformedResponseError",
    "RetryableError",
    "RetryExhaustedError",
]

logger = logging.getLogger(__name__)

DEFAULT_TEMPERATURE = 0.0
DEFAULT_MAX_NEW_TOKENS = 500


@dataclass(frozen=True)
class CompletionRequest:
    """One prompt to send; the turn field is mock-provider context only."""

    model_id: str
    prompt: PromptText | str
    temperature: float = DEFAULT_TEMPERATURE
    max_new_tokens: int = DEFAULT_MAX_NEW_TOKENS
    turn: TurnPair | None = field(default=None, compare=False)

    def __post_init__(self) -> None:
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.max_new_tokens <= 0:
            raise ValueError("max_new_tokens must be positive")

    @property
    def prompt_text(self) -> str:
        return self.prompt.text if isinstance(self.prompt, PromptText) else self.prompt

    @property
    def request_hash(self) -> str:
        payload = json.dumps(
            {
                "model_id": self.model_id,
                "prompt": self.prompt_text,
                "temperature": self.temperature,
                "max_new_tokens": self.max_new_tokens,
            },
            sort_keys=True,
            separators=(",", ":"),
        )
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class CompletionRecord:
    request_hash: str
    response_text: str
    latency_ms: int
    provider_meta: dict
    timestamp: str

    def to_dict(self) -> dict:
        return {
            "request_hash": self.request_hash,
            "response_text": self.response_text,
            "latency_ms": self.latency_ms,
            "provider_meta": self.provider_meta,
            "timestamp": self.timestamp,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "CompletionRecord":
        return cls(
            request_hash=data["request_hash"],
            response_text=data["response_text"],
            latency_ms=data["latency_ms"],
            provider_meta=data.get("provider_meta", {}),
            timestamp=data.get("timestamp", ""),
        )


def _make_record(request: CompletionRequest, text: str, meta: dict, started: float) -> CompletionRecord:
    return CompletionRecord(
        request_hash=request.request_hash,
        response_text=text,
        latency_ms=int((time.monotonic() - started) * 1000),
        provider_meta=meta,
        timestamp=datetime.now(timezone.utc).isoformat(),
    )


# Mock records carry fixed bookkeeping so reruns are byte-identical.
_EPOCH = datetime.fromtimestamp(0, tz=timezone.utc).isoformat()


def _make_mock_record(request: CompletionRequest, text: str, meta: dict) -> CompletionRecord:
    return CompletionRecord(
        request_hash=request.request_hash,
        response_text=text,
        latency_ms=0,
        provider_meta=meta,
        timestamp=_EPOCH,
    )


class CompletionProvider:
    """Anything that can answer a CompletionRequest."""

    name: str = "provider"

    def complete(self, request: CompletionRequest) -> CompletionRecord:
        raise NotImplementedError


class EchoOracle(CompletionProvider):
    """Emits the turn's gold actions verbatim, canonically serialized."""

    name = "echo-oracle"

    def complete(self, request: CompletionRequest) -> CompletionRecord:
        if request.turn is None:
            raise ProviderConfigError("EchoOracle needs request.turn")
        text = "\n".join(serialize_action(a) for a in request.turn.gold_actions)
        return _make_mock_record(request, text, {"provider": self.name})


class NearestNeighborBaseline(CompletionProvider):
    """Answers with the gold code of the rank-1 retrieved training turn."""

    name = "nearest-neighbor"

    def __init__(self, index: ExampleIndex, embedder: EmbeddingProvider) -> None:
        self.index = index
        self.embedder = embedder

    def complete(self, request: CompletionRequest) -> CompletionRecord:
        if request.turn is None:
            raise ProviderConfigError("NearestNeighborBaseline needs request.turn")
        hits = top_k(self.index, request.turn.instruction, 1, self.embedder)
        meta: dict = {"provider": self.name}
        if not hits:
            return _make_mock_record(request, "", meta)
        meta["source"] = [hits[0].game_id, hits[0].turn_index]
        text = "\n".join(serialize_action(a) for a in hits[0].gold_actions)
        return _make_mock_record(request, text, meta)


DEFAULT_REQUEST_TEMPLATE: dict = {
    "model": "$MODEL",
    "messages": [{"role": "user", "content": "$PROMPT"}],
    "temperature": "$TEMPERATURE",
    "max_tokens": "$MAX_NEW_TOKENS",
}


@dataclass
class RemoteProviderConfig:
    """Adapter description for an HTTP completion endpoint.

    request_template is a JSON object in which the strings $MODEL, $PROMPT,
    $TEMPERATURE and $MAX_NEW_TOKENS are substituted per request; a template
    value that IS a placeholder keeps the native type (float, int).
    response_text_path walks the response JSON to the generated text. The
    API key is read from the environment variable named by auth_env.
    """

    name: str
    endpoint: str
    model_id: str | None = None
    auth_env: str = "LLM_API_KEY"
    auth_header: str = "Authorization"
    auth_scheme: str = "Bearer"
    request_template: dict = field(default_factory=lambda: dict(DEFAULT_REQUEST_TEMPLATE))
    response_text_path: str = "choices.0.message.content"
    max_retries: int = 5
    backoff_base_seconds: float = 1.0
    backoff_cap_seconds: float = 60.0
    timeout_seconds: float = 120.0
    requests_per_minute: int | None = None
    max_in_flight: int = 4
    extra_headers: dict = field(default_factory=dict)

    @classmethod
    def from_file(cls, path: str | Path) -> "RemoteProviderConfig":
        with open(path, encoding="utf-8") as handle:
            data = json.load(handle)
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(data) - known
        if unknown:
            raise ProviderConfigError(f"unknown provider config keys: {sorted(unknown)}")
        if "name" not in data or "endpoint" not in data:
            raise ProviderConfigError("provider config requires 'name' and 'endpoint'")
        return cls(**data)


_PLACEHOLDERS = ("$MODEL", "$PROMPT", "$TEMPERATURE", "$MAX_NEW_TOKENS")


def _fill_template(node: Any, values: dict[str, Any]) -> Any:
    if isinstance(node, dict):
        return {k: _fill_template(v, values) for k, v in node.items()}
    if isinstance(node, list):
        return [_fill_template(v, values) for v in node]
    if isinstance(node, str):
        if node in values:  # exact placeholder keeps the native type
            return values[node]
        for placeholder in _PLACEHOLDERS:
            if placeholder in node:
                node = node.replace(placeholder, str(values[placeholder]))
        return node
    return node


def _default_transport(url: str, headers: dict, body: dict, timeout: float):
    import requests

    try:
        response = requests.post(url, headers=headers, json=body, timeout=timeout)
    except requests.RequestException as exc:
        raise RetryableError(f"request failed: {exc}") from exc
    try:
        payload = response.json()
    except ValueError:
        payload = {"raw": response.text}
    return response.status_code, payload


Transport = Callable[[str, dict, dict, float], tuple[int, Any]]


class RemoteProvider(CompletionProvider):
    """HTTP completion client with retries, backoff and rate limiting."""

    def __init__(self, config: RemoteProviderConfig, transport: Transport | None = None) -> None:
        self.config = config
        self.name = config.name
        self._transport = transport or _default_transport
        self.rate_limiter = RateLimiter(
            max_in_flight=config.max_in_flight,
            per_window=config.requests_per_minute,
            window_seconds=60.0,
        )

    def _headers(self) -> dict[str, str]:
        headers = {"Content-Type": "application/json"}
        headers.update(self.config.extra_headers)
        key = os.environ.get(self.config.auth_env)
        if not key:
            raise ProviderConfigError(
                f"environment variable {self.config.auth_env} is not set"
            )
        value = f"{self.config.auth_scheme} {key}".strip()
        headers[self.config.auth_header] = value
        return headers

    def build_body(self, request: CompletionRequest) -> dict:
        return _fill_template(
            self.config.request_template,
            {
                "$MODEL": request.model_id,
                "$PROMPT": request.prompt_text,
                "$TEMPERATURE": request.temperature,
                "$MAX_NEW_TOKENS": request.max_new_tokens,
            },
        )

    def complete(self, request: CompletionRequest) -> CompletionRecord:
        started = time.monotonic()
        headers = self._headers()
        body = self.build_body(request)

        def attempt(attempt_index: int) -> CompletionRecord:
            with self.rate_limiter.slot():
                status, payload = self._transport(
                    self.config.endpoint, headers, body, self.config.timeout_seconds
                )
            if status in (401, 403):
                raise AuthenticationError(f"{self.name} returned {status}")
            if status == 429 or status >= 500:
                raise RetryableError(f"{self.name} returned {status}")
            if status != 200:
                raise ProviderError(f"{self.name} returned {status}: {payload}")
            text = json_path(payload, self.config.response_text_path)
            if not isinstance(text, str):
                raise MalformedResponseError(
                    f"{self.name}: value at {self.config.response_text_path!r} is not text"
                )
            meta = {
                "provider": self.name,
                "endpoint": self.config.endpoint,
                "status": status,
                "attempts": attempt_index + 1,
            }
            return _make_record(request, text, meta, started)

        return retry_with_backoff(
            attempt,
            max_retries=self.config.max_retries,
            base_delay=self.config.backoff_base_seconds,
            cap_delay=self.config.backoff_cap_seconds,
        )


class ResponseCache:
    """Content-addressed on-disk store of completion records.

    Layout: <root>/<h[:2]>/<h[2:4]>/<h>.json holding {"record": ...,
    "digest": sha256 of the canonical record JSON}. Entries are written
    once and never mutated; a digest mismatch is logged, treated as a miss,
    and repaired by the next store.
    """

    def __init__(self, root: str | Path) -> None:
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)

    def _path(self, request_hash: str) -> Path:
        return self.root / request_hash[:2] / request_hash[2:4] / f"{request_hash}.json"

    @staticmethod
    def _digest(record_dict: dict) -> str:
        canonical = json.dumps(record_dict, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()

    def get(self, request_hash: str) -> CompletionRecord | None:
        path = self._path(request_hash)
        if not path.exists():
            return None
        try:
            with open(path, encoding="utf-8") as handle:
                stored = json.load(handle)
            record_dict = stored["record"]
            if stored.get("digest") != self._digest(record_dict):
                logger.warning("cache entry %s failed digest check; treating as miss", path)
                return None
            return CompletionRecord.from_dict(record_dict)
        except (json.JSONDecodeError, KeyError, OSError) as exc:
            logger.warning("unreadable cache entry %s (%s); treating as miss", path, exc)
            return None

    def put(self, record: CompletionRecord) -> None:
        path = self._path(record.request_hash)
        if path.exists() and self.get(record.request_hash) is not None:
            return
        path.parent.mkdir(parents=True, exist_ok=True)
        record_dict = record.to_dict()
        payload = {"record": record_dict, "digest": self._digest(record_dict)}
        tmp = path.with_name(path.name + f".tmp{os.getpid()}")
        with open(tmp, "w", encoding="utf-8", newline="\n") as handle:
            json.dump(payload, handle, sort_keys=True)
        tmp.replace(path)

    def count(self) -> int:
        return sum(1 for _ in self.root.glob("*/*/*.json"))


def cached_complete(
    provider: CompletionProvider, request: CompletionRequest, cache: ResponseCache
) -> CompletionRecord:
    """Serve from the cache when possible; otherwise complete and persist."""
    cached = cache.get(request.request_hash)
    if cached is not None:
        return cached
    record = provider.complete(request)
    cache.put(record)
    return record
