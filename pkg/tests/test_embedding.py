import numpy as np
import pytest

from logadapt.embedding import (
    HashedTokenBackend,
    LMAdapterBackend,
    embed_corpus,
    embed_template,
    load_embedding_cache,
)
from logadapt.errors import EmbeddingBackendError
from logadapt.parsing import WILDCARD, LogTemplate


def template(tid, text):
    return LogTemplate(tid, text.split(), text)


def cosine(a, b):
    return float(a @ b / (np.linalg.norm(a) * np.linalg.norm(b)))


def test_identical_templates_identical_vectors():
    backend = HashedTokenBackend(32, seed=3)
    a = embed_template(template(0, "read file failed"), backend)
    b = embed_template(template(1, "read file failed"), backend)
    np.testing.assert_array_equal(a.vector, b.vector)
    assert a.backend_id == backend.backend_id


def test_fresh_backend_reproduces_vectors():
    a = HashedTokenBackend(32, seed=3).encode_tokens(["disk", "error"])
    b = HashedTokenBackend(32, seed=3).encode_tokens(["disk", "error"])
    np.testing.assert_array_equal(a, b)


def test_shared_tokens_dominate_cosine():
    backend = HashedTokenBackend(64, seed=0)
    v1 = backend.encode_tokens(["read", "file", WILDCARD])
    v2 = backend.encode_tokens(["read", "file", WILDCARD, "failed"])
    v3 = backend.encode_tokens(["network", "timeout", WILDCARD])
    assert cosine(v1, v2) > cosine(v1, v3)


def test_default_dimension_is_512():
    backend = HashedTokenBackend()
    v = backend.encode_tokens(["boot", "sequence"])
    assert v.shape == (512,)


def test_mean_pooling_linearity():
    backend = HashedTokenBackend(48, seed=9)
    tokens = ["alpha", WILDCARD, "gamma", "alpha"]
    pooled = backend.encode_tokens(tokens)
    manual = np.mean([backend.token_vector(t) for t in tokens], axis=0)
    np.testing.assert_array_equal(pooled, manual)


def test_wildcard_contributes_reserved_zero_vector():
    backend = HashedTokenBackend(16, seed=1)
    np.testing.assert_array_equal(backend.token_vector(WILDCARD), np.zeros(16))


def test_token_vectors_are_unit_norm():
    backend = HashedTokenBackend(128, seed=4)
    for token in ("alpha", "beta", "0x1f"):
        assert np.linalg.norm(backend.token_vector(token)) == pytest.approx(1.0)


def test_embed_corpus_sizes_and_cache(tmp_path):
    backend = HashedTokenBackend(16, seed=2)
    assert embed_corpus([], backend) == {}
    templates = [template(i, f"event kind {i} happened") for i in range(3)]
    cache = tmp_path / "cache.json"
    first = embed_corpus(templates, backend, cache_path=cache)
    assert len(first) == 3
    assert len(load_embedding_cache(cache)) == 3
    again = embed_corpus(templates, backend, cache_path=cache)
    for tid in first:
        np.testing.assert_array_equal(first[tid].vector, again[tid].vector)


def test_lm_adapter_unavailable_raises_not_falls_back():
    with pytest.raises(EmbeddingBackendError, match="no-such-model"):
        LMAdapterBackend("no-such-model/definitely-missing", 32, seed=0)


def test_lm_adapter_projects_to_working_dimension():
    # injected encoder stands in for the real language model
    def fake_encode(text):
        rng = np.random.Generator(np.random.PCG64(abs(hash(text)) % 2**32))
        return rng.standard_normal(96)

    backend = LMAdapterBackend("fake", 24, seed=5, encode_fn=fake_encode)
    v = backend.encode_tokens(["read", "file", "failed"])
    assert v.shape == (24,)
    np.testing.assert_array_equal(v, backend.encode_tokens(["read", "file", "failed"]))


def test_lm_adapter_passthrough_when_dimensions_match():
    backend = LMAdapterBackend("fake", 8, seed=5, encode_fn=lambda text: np.arange(8.0))
    np.testing.assert_array_equal(backend.encode_tokens(["x"]), np.arange(8.0))


def test_non_finite_backend_output_rejected():
    backend = LMAdapterBackend(
        "fake", 4, seed=0, encode_fn=lambda text: np.array([1.0, np.nan, 0.0, 0.0])
    )
    with pytest.raises(EmbeddingBackendError, match="non-finite"):
        embed_template(template(0, "boom"), backend)
