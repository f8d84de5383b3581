"""Embedding providers, similarity math, exhaustive top-k search, and a disk cache.

Vectors are 1-D float64 numpy arrays.  An :class:`EmbeddingSpec` names the
embedding space: a provider plus one of three heads (two retrieval heads and
a dedicated evaluation space).  Vectors from different specs are never
compared.

The cache is content-addressed: one JSON record per (provider, head,
whitespace-normalized text hash).  Warm reruns are served without any
provider request, byte-identically.
"""

from __future__ import annotations

import enum
import hashlib
import json
import logging
import os
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Optional, Protocol, Sequence

import numpy as np
import requests

logger = logging.getLogger(__name__)


class Head(str, enum.Enum):
    RETRIEVAL_HYPOTHESIS = "retrieval_hypothesis"
    RETRIEVAL_EVIDENCE = "retrieval_evidence"
    EVALUATION = "evaluation"


@dataclass(frozen=True)
class EmbeddingSpec:
    """Names one embedding space: (provider_id, head) plus an optional task hint."""

    provider_id: str
    head: Head
    task_hint: Optional[str] = None


class EmbeddingError(Exception):
    pass


class ProviderUnavailableError(EmbeddingError):
    """Provider could not be reached after retries; the batch fails."""


class CachePoisonedError(EmbeddingError):
    """A cached record's dimension disagrees with fresh provider output."""


class EmbeddingProvider(Protocol):
    def embed_batch(self, texts: Sequence[str], spec: EmbeddingSpec) -> list[np.ndarray]:
        """One vector per text, order-preserving."""
        ...


def _as_vector(values: Sequence[float]) -> np.ndarray:
    vec = np.asarray(values, dtype=np.float64)
    if vec.ndim != 1 or vec.size == 0:
        raise EmbeddingError(f"expected a non-empty 1-D vector, got shape {vec.shape}")
    if not np.all(np.isfinite(vec)):
        raise EmbeddingError("vector contains NaN or inf")
    return vec


def normalize_for_hash(text: str) -> str:
    """Whitespace-collapsed form used for cache keys (case-preserving)."""
    return " ".join(text.split())


def text_hash(text: str) -> str:
    return hashlib.sha256(normalize_for_hash(text).encode("utf-8")).hexdigest()


def cosine_similarity(u: np.ndarray, v: np.ndarray) -> float:
    """Cosine of two vectors in double precision, clamped to [-1, 1].

    Identical inputs return exactly 1.0 so threshold comparisons never flip
    on the identity case.
    """
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape:
        raise EmbeddingError(f"dimension mismatch: {u.shape} vs {v.shape}")
    nu = float(np.linalg.norm(u))
    nv = float(np.linalg.norm(v))
    if nu == 0.0 or nv == 0.0:
        raise EmbeddingError("cosine similarity undefined for zero-norm vector")
    if np.array_equal(u, v):
        return 1.0
    return float(np.clip(np.dot(u, v) / (nu * nv), -1.0, 1.0))


def top_k(query: np.ndarray, candidates: Sequence[np.ndarray], k: int) -> list[int]:
    """Indices of the min(k, n) highest-cosine candidates, descending score.

    Ties break toward the lower index.  Exhaustive scan; documents have at
    most a few hundred paragraphs.
    """
    if k < 1:
        raise ValueError("k must be positive")
    if not candidates:
        raise ValueError("candidates must be non-empty")
    scores = [cosine_similarity(query, c) for c in candidates]
    order = sorted(range(len(candidates)), key=lambda i: (-scores[i], i))
    return order[: min(k, len(candidates))]


class MockEmbeddingProvider:
    """Deterministic offline provider: seeded hash of the normalized text.

    ``overrides`` maps normalized text to a planted vector (all override
    vectors must share ``dim``); anything else gets a unit vector drawn from
    an RNG seeded by (provider_id, text).  Both retrieval heads and the
    evaluation head map to the same space, like a base encoder without
    projection heads.
    """

    def __init__(
        self,
        dim: int = 32,
        provider_id: str = "mock",
        overrides: Mapping[str, Sequence[float]] | None = None,
    ):
        self.dim = dim
        self.provider_id = provider_id
        self.calls = 0
        self._overrides: dict[str, np.ndarray] = {}
        for key, values in (overrides or {}).items():
            vec = _as_vector(values)
            if vec.size != dim:
                raise EmbeddingError(
                    f"override for {key!r} has dim {vec.size}, provider dim is {dim}"
                )
            self._overrides[normalize_for_hash(key)] = vec

    def plant(self, text: str, values: Sequence[float]) -> None:
        vec = _as_vector(values)
        if vec.size != self.dim:
            raise EmbeddingError(f"planted vector has dim {vec.size}, provider dim is {self.dim}")
        self._overrides[normalize_for_hash(text)] = vec

    def _vector_for(self, text: str) -> np.ndarray:
        key = normalize_for_hash(text)
        override = self._overrides.get(key)
        if override is not None:
            return override.copy()
        seed_material = f"{self.provider_id}\x1f{key}".encode("utf-8")
        seed = int.from_bytes(hashlib.sha256(seed_material).digest()[:8], "big")
        rng = np.random.default_rng(seed)
        vec = rng.standard_normal(self.dim)
        return vec / np.linalg.norm(vec)

    def embed_batch(self, texts: Sequence[str], spec: EmbeddingSpec) -> list[np.ndarray]:
        self.calls += 1
        return [self._vector_for(t) for t in texts]


class HttpEmbeddingProvider:
    """Minimal hosted-provider client: POST texts, receive vectors.

    Expects a JSON endpoint taking ``{"model": ..., "texts": [...],
    "task_type": ...}`` and returning ``{"vectors": [[...], ...]}``.  The API
    key is read from ``api_key_env``.  Transient failures retry with
    exponential backoff before failing the batch.
    """

    def __init__(
        self,
        endpoint: str,
        model: str,
        api_key_env: str = "EMBEDDING_API_KEY",
        max_retries: int = 3,
        backoff_s: float = 1.0,
        session: requests.Session | None = None,
    ):
        self.endpoint = endpoint
        self.model = model
        self.api_key_env = api_key_env
        self.max_retries = max_retries
        self.backoff_s = backoff_s
        self._session = session or requests.Session()

    def embed_batch(self, texts: Sequence[str], spec: EmbeddingSpec) -> list[np.ndarray]:
        api_key = os.environ.get(self.api_key_env, "")
        payload = {"model": self.model, "texts": list(texts)}
        if spec.task_hint:
            payload["task_type"] = spec.task_hint
        last_error: Exception | None = None
        for attempt in range(self.max_retries):
            try:
                response = self._session.post(
                    self.endpoint,
                    json=payload,
                    headers={"Authorization": f"Bearer {api_key}"},
                    timeout=60,
                )
                response.raise_for_status()
                vectors = response.json()["vectors"]
                if len(vectors) != len(texts):
                    raise EmbeddingError(
                        f"provider returned {len(vectors)} vectors for {len(texts)} texts"
                    )
                return [_as_vector(v) for v in vectors]
            except (requests.RequestException, KeyError, ValueError) as exc:
                last_error = exc
                if attempt + 1 < self.max_retries:
                    time.sleep(self.backoff_s * (2**attempt))
        raise ProviderUnavailableError(f"embedding provider failed: {last_error}") from last_error


class EmbeddingCache:
    """Content-addressed vector store: one JSON record per (spec, text hash).

    Reads are lock-free; writes are serialized and atomic (tmp + rename), so
    concurrent workers can share one cache directory.
    """

    def __init__(self, cache_dir: str | Path):
        self.cache_dir = Path(cache_dir)
        self._write_lock = threading.Lock()

    def path_for(self, spec: EmbeddingSpec, text: str) -> Path:
        return self.cache_dir / spec.provider_id / spec.head.value / f"{text_hash(text)}.json"

    def get(self, spec: EmbeddingSpec, text: str) -> Optional[np.ndarray]:
        path = self.path_for(spec, text)
        if not path.exists():
            return None
        record = json.loads(path.read_text(encoding="utf-8"))
        vec = _as_vector(record["values"])
        if record.get("dim") != vec.size:
            raise CachePoisonedError(f"cache record {path} dim field disagrees with values")
        return vec

    def put(self, spec: EmbeddingSpec, text: str, vector: np.ndarray) -> None:
        vector = _as_vector(vector)
        path = self.path_for(spec, text)
        record = {
            "provider_id": spec.provider_id,
            "head": spec.head.value,
            "text_hash": text_hash(text),
            "dim": int(vector.size),
            "values": vector.tolist(),
        }
        with self._write_lock:
            path.parent.mkdir(parents=True, exist_ok=True)
            tmp = path.with_suffix(".tmp")
            tmp.write_text(json.dumps(record), encoding="utf-8")
            os.replace(tmp, path)

    def evict(self, spec: EmbeddingSpec, text: str) -> None:
        path = self.path_for(spec, text)
        if path.exists():
            path.unlink()


class EmbeddingService:
    """Facade over providers plus the cache; the one entry point for embeddings.

    Providers are looked up lazily, so a fully cached space (for example a
    sidecar exported by an external training run) can be served without any
    provider registered for it.
    """

    def __init__(
        self,
        providers: Mapping[str, EmbeddingProvider] | None = None,
        cache: EmbeddingCache | None = None,
    ):
        self._providers = dict(providers or {})
        self._cache = cache
        self._memory: dict[tuple[str, str, str], np.ndarray] = {}
        self.provider_requests = 0

    def register(self, provider_id: str, provider: EmbeddingProvider) -> None:
        self._providers[provider_id] = provider

    def _cache_get(self, spec: EmbeddingSpec, text: str) -> Optional[np.ndarray]:
        if self._cache is not None:
            return self._cache.get(spec, text)
        return self._memory.get((spec.provider_id, spec.head.value, text_hash(text)))

    def _cache_put(self, spec: EmbeddingSpec, text: str, vec: np.ndarray) -> None:
        if self._cache is not None:
            self._cache.put(spec, text, vec)
        else:
            self._memory[(spec.provider_id, spec.head.value, text_hash(text))] = vec

    def embed(self, texts: Sequence[str], spec: EmbeddingSpec) -> list[np.ndarray]:
        """One vector per input, order-preserving; cache hits cost nothing."""
        for t in texts:
            if not t or not t.strip():
                raise EmbeddingError("cannot embed empty text")
        results: list[Optional[np.ndarray]] = [self._cache_get(spec, t) for t in texts]
        missing = [i for i, r in enumerate(results) if r is None]
        if missing:
            provider = self._providers.get(spec.provider_id)
            if provider is None:
                raise EmbeddingError(
                    f"no provider registered for {spec.provider_id!r} and "
                    f"{len(missing)} texts are not cached"
                )
            batch = [texts[i] for i in missing]
            fresh = provider.embed_batch(batch, spec)
            self.provider_requests += 1
            if len(fresh) != len(batch):
                raise EmbeddingError("provider returned wrong batch size")
            cached_dims = {r.size for r in results if r is not None}
            for i, vec in zip(missing, fresh):
                vec = _as_vector(vec)
                if cached_dims and vec.size not in cached_dims:
                    raise CachePoisonedError(
                        f"provider dim {vec.size} disagrees with cached dim "
                        f"{sorted(cached_dims)} for spec {spec}"
                    )
                self._cache_put(spec, texts[i], vec)
                results[i] = vec
        return [r for r in results if r is not None]

    def embed_one(self, text: str, spec: EmbeddingSpec) -> np.ndarray:
        return self.embed([text], spec)[0]

    def similarity(self, a: str, b: str, spec: EmbeddingSpec) -> float:
        va, vb = self.embed([a, b], spec)
        return cosine_similarity(va, vb)
