"""Instruction-similarity retrieval of in-context examples.

An ExampleIndex holds one unit-normalized vector per training turn, so the
dot product is cosine similarity and an exact scan is all the corpus needs.
"""
from __future__ import annotations

import hashlib
import json
import os
import zlib
from abc import ABC, abstractmethod
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .corpus import TurnPair
from .dsl import parse_action_call, serialize_action
from .net import (
    AuthenticationError,
    MalformedResponseError,
    ProviderConfigError,
    RetryableError,
    json_path,
    retry_with_backoff,
)


class EmbeddingProvider(ABC):
    """Deterministic text-to-vector contract; outputs are unit-normalized."""

    name: str
    dimension: int

    @abstractmethod
    def embed(self, text: str) -> np.ndarray: ...

    def embed_batch(self, texts: Sequence[str]) -> list[np.ndarray]:
        return [self.embed(text) for text in texts]


class HashedTrigramEmbedding(EmbeddingProvider):
    """Character 3-gram hashed term-frequency vectors.

    Offline and dependency-free; the deterministic stand-in for a sentence
    encoder so runs and tests need no network.
    """

    def __init__(self, dimension: int = 512) -> None:
        if dimension <= 0:
            raise ValueError("dimension must be positive")
        self.dimension = dimension
        self.name = f"trigram-{dimension}"

    def embed(self, text: str) -> np.ndarray:
        s = text.lower()
        if len(s) < 3:
            s = s + " " * (3 - len(s))
        vector = np.zeros(self.dimension, dtype=np.float64)
        for i in range(len(s) - 2):
            gram = s[i : i + 3]
            vector[zlib.crc32(gram.encode("utf-8")) % self.dimension] += 1.0
        return vector / float(np.linalg.norm(vector))


class RemoteEmbedding(EmbeddingProvider):
    """Client for an HTTP embedding endpoint (OpenAI-style request shape).

    POSTs {"model": ..., "input": [text]} and reads the vector at
    response_vector_path; transient failures are retried with backoff.
    """

    def __init__(
        self,
        endpoint: str,
        model: str,
        dimension: int,
        *,
        auth_env: str = "EMBEDDING_API_KEY",
        auth_header: str = "Authorization",
        auth_scheme: str = "Bearer",
        response_vector_path: str = "data.0.embedding",
        max_retries: int = 5,
        backoff_base_seconds: float = 1.0,
        timeout_seconds: float = 60.0,
        transport=None,
    ) -> None:
        self.endpoint = endpoint
        self.model = model
        self.dimension = dimension
        self.name = f"remote-{model}"
        self.auth_env = auth_env
        self.auth_header = auth_header
        self.auth_scheme = auth_scheme
        self.response_vector_path = response_vector_path
        self.max_retries = max_retries
        self.backoff_base_seconds = backoff_base_seconds
        self.timeout_seconds = timeout_seconds
        self._transport = transport or _requests_transport

    def _headers(self) -> dict[str, str]:
        key = os.environ.get(self.auth_env)
        if not key:
            raise ProviderConfigError(f"environment variable {self.auth_env} is not set")
        value = f"{self.auth_scheme} {key}".strip()
        return {self.auth_header: value, "Content-Type": "application/json"}

    def embed(self, text: str) -> np.ndarray:
        body = {"model": self.model, "input": [text]}

        def attempt(_index: int) -> np.ndarray:
            status, payload = self._transport(
                self.endpoint, self._headers(), body, self.timeout_seconds
            )
            if status in (401, 403):
                raise AuthenticationError(f"embedding endpoint returned {status}")
            if status == 429 or status >= 500:
                raise RetryableError(f"embedding endpoint returned {status}")
            if status != 200:
                raise MalformedResponseError(f"embedding endpoint returned {status}")
            vector = np.asarray(json_path(payload, self.response_vector_path), dtype=np.float64)
            if vector.shape != (self.dimension,):
                raise MalformedResponseError(
                    f"expected dimension {self.dimension}, got {vector.shape}"
                )
            norm = float(np.linalg.norm(vector))
            if norm == 0.0:
                raise MalformedResponseError("embedding endpoint returned a zero vector")
            return vector / norm

        return retry_with_backoff(
            attempt, max_retries=self.max_retries, base_delay=self.backoff_base_seconds
        )


class SentenceTransformerEmbedding(EmbeddingProvider):
    """In-process sentence encoder; requires the optional 'st' extra."""

    def __init__(self, model_name: str = "sentence-transformers/all-MiniLM-L6-v2") -> None:
        try:
            from sentence_transformers import SentenceTransformer
        except ImportError as exc:  # pragma: no cover - optional dependency
            raise ProviderConfigError(
                "sentence-transformers is not installed; install the 'st' extra"
            ) from exc
        self._model = SentenceTransformer(model_name)
        self.dimension = int(self._model.get_sentence_embedding_dimension())
        self.name = f"st-{model_name.rsplit('/', 1)[-1]}"

    def embed(self, text: str) -> np.ndarray:
        vector = self._model.encode([text], normalize_embeddings=True)[0]
        return np.asarray(vector, dtype=np.float64)

    def embed_batch(self, texts: Sequence[str]) -> list[np.ndarray]:
        vectors = self._model.encode(list(texts), normalize_embeddings=True)
        return [np.asarray(v, dtype=np.float64) for v in vectors]


def _requests_transport(url, headers, body, timeout):
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


@dataclass
class ExampleIndex:
    provider_name: str
    dimension: int
    entries: list[tuple[TurnPair, np.ndarray]]

    def __len__(self) -> int:
        return len(self.entries)


class EmbeddingCache:
    """JSONL vector cache keyed by (provider name, text hash)."""

    def __init__(self, path: str | Path) -> None:
        self.path = Path(path)
        self._vectors: dict[str, list[float]] = {}
        if self.path.exists():
            with open(self.path, encoding="utf-8") as handle:
                for line in handle:
                    if line.strip():
                        record = json.loads(line)
                        self._vectors[record["key"]] = record["vector"]

    @staticmethod
    def key(provider_name: str, text: str) -> str:
        return hashlib.sha256(f"{provider_name}\n{text}".encode("utf-8")).hexdigest()

    def get(self, provider_name: str, text: str) -> np.ndarray | None:
        vector = self._vectors.get(self.key(provider_name, text))
        return None if vector is None else np.asarray(vector, dtype=np.float64)

    def put(self, provider_name: str, text: str, vector: np.ndarray) -> None:
        key = self.key(provider_name, text)
        if key in self._vectors:
            return
        self._vectors[key] = vector.tolist()
        self.path.parent.mkdir(parents=True, exist_ok=True)
        with open(self.path, "a", encoding="utf-8", newline="\n") as handle:
            handle.write(json.dumps({"key": key, "vector": vector.tolist()}))
            handle.write("\n")


def build_index(
    provider: EmbeddingProvider,
    train_pairs: Sequence[TurnPair],
    *,
    parallelism: int = 1,
    cache: EmbeddingCache | None = None,
) -> ExampleIndex:
    """Embed every training pair's instruction, one entry per pair."""
    texts = [pair.instruction for pair in train_pairs]
    vectors: list[np.ndarray | None] = [None] * len(texts)
    to_compute: list[int] = []
    for i, text in enumerate(texts):
        cached = cache.get(provider.name, text) if cache is not None else None
        if cached is not None:
            vectors[i] = cached
        else:
            to_compute.append(i)

    if to_compute:
        if parallelism > 1:
            with ThreadPoolExecutor(max_workers=parallelism) as pool:
                computed = list(pool.map(lambda i: provider.embed(texts[i]), to_compute))
        else:
            computed = provider.embed_batch([texts[i] for i in to_compute])
        for i, vector in zip(to_compute, computed):
            vectors[i] = vector
            if cache is not None:
                cache.put(provider.name, texts[i], vector)

    entries = [(pair, vectors[i]) for i, pair in enumerate(train_pairs)]
    return ExampleIndex(provider_name=provider.name, dimension=provider.dimension, entries=entries)


def top_k(
    index: ExampleIndex,
    instruction: str,
    k: int,
    provider: EmbeddingProvider,
) -> list[TurnPair]:
    """The k most cosine-similar training turns, best first.

    Ties break on (game_id, turn_index) ascending so results do not depend
    on the order the index was built in.
    """
    if k < 0:
        raise ValueError("k must be non-negative")
    if provider.name != index.provider_name:
        raise ValueError(
            f"index was built with provider {index.provider_name!r}, got {provider.name!r}"
        )
    if k == 0 or not index.entries:
        return []
    query = provider.embed(instruction)
    scored = [
        (float(np.dot(query, vector)), pair.game_id, pair.turn_index, pair)
        for pair, vector in index.entries
    ]
    scored.sort(key=lambda item: (-item[0], item[1], item[2]))
    return [item[3] for item in scored[:k]]


def similarity(provider: EmbeddingProvider, a: str, b: str) -> float:
    return float(np.dot(provider.embed(a), provider.embed(b)))


class IndexIntegrityError(ValueError):
    """The persisted index file failed its content-hash check."""


_INDEX_FORMAT = "voxeval-index"
_INDEX_VERSION = 1


def _canonical(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def save_index(index: ExampleIndex, path: str | Path) -> None:
    """Persist the index deterministically.

    Layout: a JSON header line ({format, version, provider, dimension,
    count}), one JSON line per entry ({game_id, turn_index, instruction,
    gold, vector}, gold in canonical call form), then a footer line with the
    sha256 of every preceding byte. Identical inputs produce identical bytes.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [
        _canonical(
            {
                "format": _INDEX_FORMAT,
                "version": _INDEX_VERSION,
                "provider": index.provider_name,
                "dimension": index.dimension,
                "count": len(index.entries),
            }
        )
    ]
    for pair, vector in index.entries:
        lines.append(
            _canonical(
                {
                    "game_id": pair.game_id,
                    "turn_index": pair.turn_index,
                    "instruction": pair.instruction,
                    "gold": [serialize_action(a) for a in pair.gold_actions],
                    "vector": vector.tolist(),
                }
            )
        )
    body = "".join(line + "\n" for line in lines).encode("utf-8")
    footer = _canonical({"sha256": hashlib.sha256(body).hexdigest()}) + "\n"
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as handle:
        handle.write(body)
        handle.write(footer.encode("utf-8"))
    tmp.replace(path)


def load_index(path: str | Path) -> ExampleIndex:
    """Reload a persisted index; loaded pairs carry no derived world state."""
    with open(path, "rb") as handle:
        raw = handle.read()
    lines = raw.decode("utf-8").splitlines()
    if len(lines) < 2:
        raise IndexIntegrityError(f"index file {path} is truncated")
    body = "".join(line + "\n" for line in lines[:-1]).encode("utf-8")
    footer = json.loads(lines[-1])
    if footer.get("sha256") != hashlib.sha256(body).hexdigest():
        raise IndexIntegrityError(f"index file {path} failed its integrity check")
    header = json.loads(lines[0])
    if header.get("format") != _INDEX_FORMAT:
        raise IndexIntegrityError(f"not an index file: {path}")
    entries: list[tuple[TurnPair, np.ndarray]] = []
    for line in lines[1:-1]:
        record = json.loads(line)
        pair = TurnPair(
            game_id=record["game_id"],
            turn_index=record["turn_index"],
            instruction=record["instruction"],
            gold_actions=tuple(parse_action_call(call) for call in record["gold"]),
        )
        entries.append((pair, np.asarray(record["vector"], dtype=np.float64)))
    if len(entries) != header.get("count"):
        raise IndexIntegrityError(
            f"index file {path} claims {header.get('count')} entries, found {len(entries)}"
        )
    return ExampleIndex(
        provider_name=header["provider"], dimension=header["dimension"], entries=entries
    )
