"""
PR 03 — Embedding Provider Tests

The deterministic backend and the cache run for real. The remote backend is
driven through httpx.MockTransport, so no network is touched.

Testing Endpoints:
1. deterministic embeddings are stable, unit-norm and truncation-aware
2. the on-disk cache answers repeats without calling the backend
3. the remote client batches, retries and rejects bad responses
4. build_provider honors config and environment
"""

import json
import os

import httpx
import numpy as np
import pytest

from sessionguard.embedding_provider import (
    ENV_API_KEY,
    ENV_CACHE,
    ENV_ENDPOINT,
    MAX_TEXT_CHARS,
    CachedProvider,
    DeterministicProvider,
    EmbeddingIntegrityError,
    EmbeddingTransportError,
    ProviderConfig,
    ProviderConfigError,
    RemoteProvider,
    build_provider,
    check_provider_readiness,
    embed_deterministic,
)


DIM = 8


def _remote_config(**overrides):
    values = dict(
        backend="remote_service",
        endpoint="http://embed.test/v1/embed",
        dim=DIM,
        retry_backoff=0.0,
        batch_size=2,
    )
    values.update(overrides)
    return ProviderConfig(**values)


def _echo_handler(seen):
    """Answers with deterministic vectors so order can be checked."""
    def handler(request):
        body = json.loads(request.content)
        seen.append(body)
        vectors = [embed_deterministic(t, DIM).tolist() for t in body["texts"]]
        return httpx.Response(200, json={"embeddings": vectors})
    return handler


@pytest.mark.pr03
def test_deterministic_embedding_stable_and_unit_norm():
    """
    Testing Endpoint 1: same text, same vector

    REAL TEST - Vectors are unit norm and differ across texts.
    """
    provider = DeterministicProvider(dim=DIM)
    first = provider.embed(["search weather", "send email"])
    second = provider.embed(["search weather", "send email"])

    assert first.shape == (2, DIM)
    np.testing.assert_array_equal(first, second)
    np.testing.assert_allclose(np.linalg.norm(first, axis=1), 1.0)
    assert not np.allclose(first[0], first[1])


@pytest.mark.pr03
def test_texts_truncated_before_embedding():
    provider = DeterministicProvider(dim=DIM)
    long_text = "é" * (MAX_TEXT_CHARS + 100)
    vectors = provider.embed([long_text, long_text[:MAX_TEXT_CHARS]])
    np.testing.assert_array_equal(vectors[0], vectors[1])


@pytest.mark.pr03
def test_empty_input_gives_empty_matrix():
    vectors = DeterministicProvider(dim=DIM).embed([])
    assert vectors.shape == (0, DIM)


@pytest.mark.pr03
def test_provider_config_validation():
    with pytest.raises(ProviderConfigError):
        ProviderConfig.from_dict({"backend": "deterministic_test", "colour": "red"})
    with pytest.raises(ProviderConfigError):
        ProviderConfig(backend="carrier_pigeon")
    with pytest.raises(ProviderConfigError):
        ProviderConfig(dim=0)


@pytest.mark.pr03
def test_cache_serves_repeats_without_backend(tmp_path):
    """
    Testing Endpoint 2: cached texts never reach the backend again

    REAL TEST - A second provider over the same file sees every entry.
    """
    backend = DeterministicProvider(dim=DIM)
    cache_file = tmp_path / "cache" / "embeddings.jsonl"
    cached = CachedProvider(backend, cache_file)

    first = cached.embed(["a", "b", "a"])
    assert backend.backend_calls == 1
    assert len(cached) == 2
    np.testing.assert_array_equal(first[0], first[2])

    again = cached.embed(["b", "a"])
    assert backend.backend_calls == 1
    np.testing.assert_array_equal(again, first[[1, 0]])

    reopened = CachedProvider(DeterministicProvider(dim=DIM), cache_file)
    assert len(reopened) == 2
    assert reopened.corrupt_entries == 0


@pytest.mark.pr03
def test_corrupt_cache_lines_are_skipped(tmp_path):
    cache_file = tmp_path / "embeddings.jsonl"
    CachedProvider(DeterministicProvider(dim=DIM), cache_file).embed(["kept"])
    with open(cache_file, "a", encoding="utf-8") as f:
        f.write("{not json\n")
        f.write(json.dumps({"key": "abc", "dim": DIM, "values": [1.0]}) + "\n")

    backend = DeterministicProvider(dim=DIM)
    reopened = CachedProvider(backend, cache_file)
    assert reopened.corrupt_entries == 2
    assert len(reopened) == 1

    reopened.embed(["kept"])
    assert backend.backend_calls == 0


@pytest.mark.pr03
def test_deleted_cache_file_drops_entries(tmp_path):
    backend = DeterministicProvider(dim=DIM)
    cache_file = tmp_path / "embeddings.jsonl"
    cached = CachedProvider(backend, cache_file)
    cached.embed(["x"])
    cache_file.unlink()

    cached.embed(["x"])
    assert backend.backend_calls == 2
    assert cache_file.exists()


@pytest.mark.pr03
@pytest.mark.asyncio
async def test_remote_batches_preserve_order(monkeypatch):
    """
    Testing Endpoint 3: batched requests come back in input order

    REAL TEST - Five texts with batch_size 2 make three requests.
    """
    monkeypatch.delenv(ENV_API_KEY, raising=False)
    seen = []
    provider = RemoteProvider(_remote_config(), transport=httpx.MockTransport(_echo_handler(seen)))
    texts = ["one", "two", "three", "four", "five"]

    vectors = await provider.aembed(texts)

    assert len(seen) == 3
    assert all(body["model_id"] == provider.model_id for body in seen)
    expected = np.stack([embed_deterministic(t, DIM) for t in texts])
    np.testing.assert_allclose(vectors, expected)


@pytest.mark.pr03
@pytest.mark.asyncio
async def test_remote_retries_rate_limit():
    attempts = []
    echo = _echo_handler([])

    def handler(request):
        attempts.append(1)
        if len(attempts) == 1:
            return httpx.Response(429)
        return echo(request)

    provider = RemoteProvider(_remote_config(), transport=httpx.MockTransport(handler))
    vectors = await provider.aembed(["retry me"])
    assert vectors.shape == (1, DIM)
    assert len(attempts) == 2


@pytest.mark.pr03
@pytest.mark.asyncio
async def test_remote_gives_up_after_retries():
    attempts = []

    def handler(request):
        attempts.append(1)
        return httpx.Response(503)

    provider = RemoteProvider(_remote_config(max_retries=3), transport=httpx.MockTransport(handler))
    with pytest.raises(EmbeddingTransportError):
        await provider.aembed(["down"])
    assert len(attempts) == 3


@pytest.mark.pr03
@pytest.mark.asyncio
async def test_remote_rejected_credentials_fail_fast():
    attempts = []

    def handler(request):
        attempts.append(1)
        return httpx.Response(401)

    provider = RemoteProvider(_remote_config(), transport=httpx.MockTransport(handler))
    with pytest.raises(ProviderConfigError):
        await provider.aembed(["secret"])
    assert len(attempts) == 1


@pytest.mark.pr03
@pytest.mark.asyncio
async def test_remote_wrong_dimension_rejected():
    def handler(request):
        return httpx.Response(200, json={"embeddings": [[0.1, 0.2]]})

    provider = RemoteProvider(_remote_config(batch_size=8), transport=httpx.MockTransport(handler))
    with pytest.raises(EmbeddingIntegrityError):
        await provider.aembed(["short"])


@pytest.mark.pr03
def test_remote_sync_embed_sends_bearer_token(monkeypatch):
    monkeypatch.setenv(ENV_API_KEY, "token-123")
    headers = []
    echo = _echo_handler([])

    def handler(request):
        headers.append(request.headers.get("Authorization"))
        return echo(request)

    provider = RemoteProvider(_remote_config(), transport=httpx.MockTransport(handler))
    vectors = provider.embed(["sync path"])
    assert vectors.shape == (1, DIM)
    assert headers == ["Bearer token-123"]


@pytest.mark.pr03
@pytest.mark.asyncio
async def test_remote_sync_embed_inside_running_loop(monkeypatch):
    """
    REAL TEST - Featurization code calls the synchronous embed(); it must not
    fail when an event loop is already running in the caller's thread.
    """
    monkeypatch.delenv(ENV_API_KEY, raising=False)
    seen = []
    provider = RemoteProvider(_remote_config(), transport=httpx.MockTransport(_echo_handler(seen)))

    vectors = provider.embed(["inside", "a", "loop"])

    np.testing.assert_allclose(vectors, np.stack([embed_deterministic(t, DIM) for t in ["inside", "a", "loop"]]))
    assert len(seen) == 2


@pytest.mark.pr03
def test_remote_requires_endpoint():
    with pytest.raises(ProviderConfigError):
        RemoteProvider(ProviderConfig(backend="remote_service", dim=DIM))


@pytest.mark.pr03
def test_build_provider_wraps_cache(tmp_path, monkeypatch):
    """
    Testing Endpoint 4: configuration and environment select the backend
    """
    monkeypatch.delenv(ENV_CACHE, raising=False)
    plain = build_provider(ProviderConfig(dim=DIM))
    assert isinstance(plain, DeterministicProvider)

    cached = build_provider(ProviderConfig(dim=DIM, cache_path=str(tmp_path / "c.jsonl")))
    assert isinstance(cached, CachedProvider)

    monkeypatch.setenv(ENV_CACHE, str(tmp_path / "env.jsonl"))
    assert isinstance(build_provider(ProviderConfig(dim=DIM)), CachedProvider)


@pytest.mark.pr03
def test_build_remote_without_endpoint_fails(monkeypatch):
    monkeypatch.delenv(ENV_ENDPOINT, raising=False)
    with pytest.raises(ProviderConfigError):
        build_provider(ProviderConfig(backend="remote_service", dim=DIM))


@pytest.mark.pr03
def test_readiness_probe():
    status = check_provider_readiness(DeterministicProvider(dim=DIM))
    assert status["status"] == "READY"
    assert status["dim"] == DIM
    assert status["probe_norm"] == pytest.approx(1.0)


skip_if_no_endpoint = pytest.mark.skipif(
    not os.getenv(ENV_ENDPOINT),
    reason=f"{ENV_ENDPOINT} not set",
)


@skip_if_no_endpoint
@pytest.mark.remote_embedding
@pytest.mark.pr03
def test_live_endpoint_readiness():
    """
    REAL TEST - Probes the configured embedding service with the default model.
    """
    provider = build_provider(ProviderConfig(backend="remote_service"))
    status = check_provider_readiness(provider)
    assert status["status"] == "READY"
    assert status["probe_norm"] > 0
