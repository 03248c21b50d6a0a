"""
PR 03 — Embedding Provider

Fixed-dimension sentence embeddings for tool-call text.

Backends:
- deterministic_test: hash-seeded PCG64 stream, unit norm, no network
- remote_service:     POST {"model_id", "texts"} -> {"embeddings"} over httpx

Any backend can be wrapped in CachedProvider, an append-only JSONL cache keyed
by sha256(model_id, truncated text). Every text is truncated to 512
characters (Unicode code points) before it is embedded or keyed.

Environment (loaded with python-dotenv):
- SESSIONGUARD_EMBED_ENDPOINT: overrides the configured endpoint
- SESSIONGUARD_EMBED_API_KEY:  bearer token for the remote backend
- SESSIONGUARD_EMBED_CACHE:    cache file used when the config names none
"""

import asyncio
import hashlib
import json
import logging
import os
import threading
from abc import ABC, abstractmethod
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence

import httpx
import numpy as np
from dotenv import load_dotenv


logger = logging.getLogger("sessionguard.embedding_provider")


class EmbeddingProviderError(Exception):
    """Raised when embeddings cannot be produced"""
    pass


class ProviderConfigError(EmbeddingProviderError):
    """Raised for an invalid provider configuration"""
    pass


class EmbeddingTransportError(EmbeddingProviderError):
    """Raised when the remote backend stays unreachable after retries (retriable)"""
    pass


class EmbeddingIntegrityError(EmbeddingProviderError):
    """Raised when a backend returns vectors of the wrong shape or non-finite values"""
    pass


DEFAULT_MODEL_ID = "all-MiniLM-L6-v2"
DEFAULT_DIM = 384
MAX_TEXT_CHARS = 512

BACKEND_DETERMINISTIC = "deterministic_test"
BACKEND_REMOTE = "remote_service"
VALID_BACKENDS = [BACKEND_DETERMINISTIC, BACKEND_REMOTE]

ENV_ENDPOINT = "SESSIONGUARD_EMBED_ENDPOINT"
ENV_API_KEY = "SESSIONGUARD_EMBED_API_KEY"
ENV_CACHE = "SESSIONGUARD_EMBED_CACHE"


@dataclass
class ProviderConfig:
    backend: str = BACKEND_DETERMINISTIC
    model_id: str = DEFAULT_MODEL_ID
    dim: int = DEFAULT_DIM
    endpoint: Optional[str] = None
    cache_path: Optional[str] = None
    timeout: float = 60.0
    max_retries: int = 3
    retry_backoff: float = 1.0
    batch_size: int = 64
    max_concurrency: int = 4

    def __post_init__(self):
        if self.backend not in VALID_BACKENDS:
            raise ProviderConfigError(
                f"backend must be one of {VALID_BACKENDS}, got: {self.backend}"
            )
        if not isinstance(self.dim, int) or self.dim < 1:
            raise ProviderConfigError(f"dim must be a positive integer, got: {self.dim}")
        if not self.model_id:
            raise ProviderConfigError("model_id cannot be empty")
        if self.max_retries < 1 or self.batch_size < 1 or self.max_concurrency < 1:
            raise ProviderConfigError("max_retries, batch_size and max_concurrency must be >= 1")

    def to_dict(self) -> Dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Mapping) -> "ProviderConfig":
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ProviderConfigError(f"unknown provider keys: {sorted(unknown)}")
        return cls(**dict(data))


def truncate_text(text: str) -> str:
    """First 512 Unicode code points."""
    return text[:MAX_TEXT_CHARS]


def embed_deterministic(text: str, dim: int) -> np.ndarray:
    """
    Test embedder: unit vector from a PCG64 normal stream seeded with the
    first 8 bytes (big-endian) of sha256(truncated text).
    """
    if dim < 1:
        raise ProviderConfigError(f"dim must be >= 1, got {dim}")
    digest = hashlib.sha256(truncate_text(text).encode("utf-8")).digest()
    seed = int.from_bytes(digest[:8], "big")
    values = np.random.Generator(np.random.PCG64(seed)).standard_normal(dim)
    return values / np.linalg.norm(values)


class EmbeddingProvider(ABC):
    """Interchangeable embedding backend. embed() returns an (m, dim) float64 array."""

    def __init__(self, model_id: str, dim: int):
        self.model_id = model_id
        self.dim = dim
        self.backend_calls = 0

    @abstractmethod
    def _embed_batch(self, texts: List[str]) -> np.ndarray:
        ...

    def embed(self, texts: Sequence[str]) -> np.ndarray:
        truncated = [truncate_text(t) for t in texts]
        if not truncated:
            return np.zeros((0, self.dim), dtype=np.float64)
        self.backend_calls += 1
        vectors = np.asarray(self._embed_batch(truncated), dtype=np.float64)
        _check_vectors(vectors, len(truncated), self.dim)
        return vectors


def _check_vectors(vectors: np.ndarray, count: int, dim: int) -> None:
    if vectors.ndim != 2 or vectors.shape != (count, dim):
        raise EmbeddingIntegrityError(
            f"expected {count} vectors of dim {dim}, got shape {tuple(vectors.shape)}"
        )
    if not np.all(np.isfinite(vectors)):
        raise EmbeddingIntegrityError("backend returned non-finite values")


class DeterministicProvider(EmbeddingProvider):
    def __init__(self, model_id: str = DEFAULT_MODEL_ID, dim: int = DEFAULT_DIM):
        super().__init__(model_id, dim)

    def _embed_batch(self, texts: List[str]) -> np.ndarray:
        return np.stack([embed_deterministic(t, self.dim) for t in texts])


class RemoteProvider(EmbeddingProvider):
    """
    HTTP embedding service client.

    Requests are split into batches of `batch_size` and sent concurrently
    (bounded by `max_concurrency`). Timeouts, 429 and 5xx responses are
    retried with exponential backoff; 401/403 fail immediately.

    The synchronous embed() also works when called from inside a running
    event loop (the requests then run on a worker thread); async callers
    should prefer aembed().
    """

    def __init__(self, config: ProviderConfig, transport: Optional[httpx.AsyncBaseTransport] = None):
        if not config.endpoint:
            raise ProviderConfigError("remote_service backend requires an endpoint")
        super().__init__(config.model_id, config.dim)
        self.config = config
        self._transport = transport

    def _headers(self) -> Dict[str, str]:
        headers = {"Content-Type": "application/json"}
        api_key = os.getenv(ENV_API_KEY)
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"
        return headers

    async def _post_batch(self, client: httpx.AsyncClient, semaphore: asyncio.Semaphore, texts: List[str]) -> np.ndarray:
        cfg = self.config
        payload = {"model_id": cfg.model_id, "texts": texts}
        last_error = "no attempt made"

        for attempt in range(cfg.max_retries):
            try:
                async with semaphore:
                    response = await client.post(cfg.endpoint, json=payload, headers=self._headers())

                if response.status_code in (401, 403):
                    raise ProviderConfigError(
                        f"embedding endpoint rejected credentials ({response.status_code})"
                    )
                if response.status_code == 429 or response.status_code >= 500:
                    last_error = f"HTTP {response.status_code}"
                    if attempt < cfg.max_retries - 1:
                        retry_after = response.headers.get("Retry-After", "")
                        delay = float(retry_after) if retry_after.isdigit() else cfg.retry_backoff * (2 ** attempt)
                        await asyncio.sleep(delay)
                        continue
                    break

                response.raise_for_status()
                try:
                    body = response.json()
                except ValueError:
                    raise EmbeddingIntegrityError("response body is not JSON")
                if not isinstance(body, dict) or "embeddings" not in body:
                    raise EmbeddingIntegrityError("response body lacks 'embeddings'")
                try:
                    vectors = np.asarray(body["embeddings"], dtype=np.float64)
                except (TypeError, ValueError):
                    raise EmbeddingIntegrityError("embeddings are not a numeric matrix")
                _check_vectors(vectors, len(texts), cfg.dim)
                return vectors

            except (httpx.TimeoutException, httpx.TransportError) as e:
                last_error = f"{type(e).__name__}: {e}"
                if attempt < cfg.max_retries - 1:
                    await asyncio.sleep(cfg.retry_backoff * (2 ** attempt))
                    continue
            except httpx.HTTPStatusError as e:
                raise EmbeddingProviderError(
                    f"embedding endpoint error: {e.response.status_code} - {e.response.text[:200]}"
                )

        raise EmbeddingTransportError(
            f"embedding endpoint unavailable after {cfg.max_retries} attempts ({last_error})"
        )

    async def aembed(self, texts: Sequence[str]) -> np.ndarray:
        truncated = [truncate_text(t) for t in texts]
        if not truncated:
            return np.zeros((0, self.dim), dtype=np.float64)
        self.backend_calls += 1
        return await self._aembed_truncated(truncated)

    async def _aembed_truncated(self, truncated: List[str]) -> np.ndarray:
        cfg = self.config
        semaphore = asyncio.Semaphore(cfg.max_concurrency)
        batches = [truncated[i:i + cfg.batch_size] for i in range(0, len(truncated), cfg.batch_size)]
        async with httpx.AsyncClient(
            transport=self._transport,
            timeout=httpx.Timeout(cfg.timeout, connect=min(10.0, cfg.timeout)),
            limits=httpx.Limits(max_connections=cfg.max_concurrency),
        ) as client:
            parts = await asyncio.gather(*(self._post_batch(client, semaphore, b) for b in batches))
        return np.concatenate(parts, axis=0)

    def _embed_batch(self, texts: List[str]) -> np.ndarray:
        try:
            asyncio.get_running_loop()
        except RuntimeError:
            return asyncio.run(self._aembed_truncated(texts))
        # Inside a running loop asyncio.run is refused: use a private loop on a worker thread
        with ThreadPoolExecutor(max_workers=1) as pool:
            return pool.submit(asyncio.run, self._aembed_truncated(texts)).result()


def cache_key(model_id: str, text: str) -> str:
    return hashlib.sha256(f"{model_id}\x00{truncate_text(text)}".encode("utf-8")).hexdigest()


class CachedProvider(EmbeddingProvider):
    """
    Persistent cache in front of another provider.

    File format, one record per line: {"key": hex digest, "dim": int, "values": [...]}.
    Corrupt lines are skipped with a warning and recomputed on demand. The file
    is the cache: if it disappears between calls the in-memory view is dropped.
    """

    def __init__(self, backend: EmbeddingProvider, cache_path: Path):
        super().__init__(backend.model_id, backend.dim)
        self.backend = backend
        self.cache_path = Path(cache_path)
        self._entries: Dict[str, np.ndarray] = {}
        self._lock = threading.Lock()
        self.corrupt_entries = 0
        self._load()

    def _load(self) -> None:
        self._entries.clear()
        if not self.cache_path.exists():
            return
        with open(self.cache_path, "r", encoding="utf-8") as f:
            for line_no, line in enumerate(f, start=1):
                if not line.strip():
                    continue
                try:
                    record = json.loads(line)
                    key = record["key"]
                    values = np.asarray(record["values"], dtype=np.float64)
                    if (
                        not isinstance(key, str)
                        or record["dim"] != self.dim
                        or values.shape != (self.dim,)
                        or not np.all(np.isfinite(values))
                    ):
                        raise ValueError("shape or type mismatch")
                except (ValueError, KeyError, TypeError) as e:
                    self.corrupt_entries += 1
                    logger.warning(
                        "skipping corrupt cache entry at %s:%d (%s)", self.cache_path, line_no, e
                    )
                    continue
                self._entries[key] = values

    def _append(self, items: Dict[str, np.ndarray]) -> None:
        self.cache_path.parent.mkdir(parents=True, exist_ok=True)
        with open(self.cache_path, "a", encoding="utf-8") as f:
            for key, values in items.items():
                f.write(json.dumps({"key": key, "dim": self.dim, "values": values.tolist()}) + "\n")

    def _embed_batch(self, texts: List[str]) -> np.ndarray:
        return self.backend.embed(texts)

    def embed(self, texts: Sequence[str]) -> np.ndarray:
        truncated = [truncate_text(t) for t in texts]
        if not truncated:
            return np.zeros((0, self.dim), dtype=np.float64)
        keys = [cache_key(self.model_id, t) for t in truncated]

        with self._lock:
            if not self.cache_path.exists() and self._entries:
                self._entries.clear()
            missing: Dict[str, str] = {}
            for key, text in zip(keys, truncated):
                if key not in self._entries and key not in missing:
                    missing[key] = text

        if missing:
            vectors = self._embed_batch(list(missing.values()))
            fresh = dict(zip(missing.keys(), vectors))
            with self._lock:
                self._append(fresh)
                self._entries.update(fresh)

        with self._lock:
            return np.stack([self._entries[k] for k in keys])

    def __len__(self) -> int:
        return len(self._entries)


def build_provider(config: ProviderConfig) -> EmbeddingProvider:
    """
    Instantiate the configured backend, applying environment overrides and
    wrapping it in a CachedProvider when a cache path is known.
    """
    load_dotenv()
    if config.backend == BACKEND_DETERMINISTIC:
        provider: EmbeddingProvider = DeterministicProvider(config.model_id, config.dim)
    else:
        endpoint = os.getenv(ENV_ENDPOINT) or config.endpoint
        if not endpoint:
            raise ProviderConfigError(
                f"remote_service backend requires an endpoint (config or {ENV_ENDPOINT})"
            )
        provider = RemoteProvider(ProviderConfig(**{**config.to_dict(), "endpoint": endpoint}))

    cache_path = config.cache_path or os.getenv(ENV_CACHE)
    if cache_path:
        provider = CachedProvider(provider, Path(cache_path))
    return provider


def check_provider_readiness(provider: EmbeddingProvider) -> Dict:
    """Embed one probe text and confirm the backend answers with the configured dimension."""
    vectors = provider.embed(["sessionguard readiness probe"])
    if vectors.shape != (1, provider.dim):
        raise EmbeddingIntegrityError(f"probe returned shape {tuple(vectors.shape)}")
    return {
        "status": "READY",
        "model_id": provider.model_id,
        "dim": provider.dim,
        "backend": type(provider).__name__,
        "probe_norm": float(np.linalg.norm(vectors[0])),
    }


__all__ = [
    "EmbeddingProviderError",
    "ProviderConfigError",
    "EmbeddingTransportError",
    "EmbeddingIntegrityError",
    "DEFAULT_MODEL_ID",
    "DEFAULT_DIM",
    "MAX_TEXT_CHARS",
    "VALID_BACKENDS",
    "ProviderConfig",
    "truncate_text",
    "embed_deterministic",
    "EmbeddingProvider",
    "DeterministicProvider",
    "RemoteProvider",
    "CachedProvider",
    "cache_key",
    "build_provider",
    "check_provider_readiness",
]
