"""Template-to-vector embedding backends sharing one vector space.

Two backends are provided:

* ``HashedTokenBackend`` -- every non-wildcard token is hashed to a seeded
  pseudo-random unit vector; the template embedding is the mean over its
  token vectors. Fully deterministic and offline; the default everywhere.
* ``LMAdapterBackend`` -- adapter around an external pretrained language
  model. The model's pooled final-layer output is projected to the working
  dimension by a fixed seeded random projection. If the model cannot be
  loaded the backend raises; there is never a silent fallback.

The wildcard token contributes a fixed reserved embedding (the zero
vector): parameter positions carry no semantic content.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import EmbeddingBackendError
from .parsing import WILDCARD, LogTemplate

CACHE_FORMAT = "logadapt-embedding-cache"
CACHE_VERSION = 1


@dataclass(frozen=True)
class EventEmbedding:
    template_id: int
    vector: np.ndarray
    backend_id: str


def _token_seed(token: str, salt: int) -> int:
    digest = hashlib.blake2b(
        token.encode("utf-8"), digest_size=8, salt=salt.to_bytes(8, "little")
    ).digest()
    return int.from_bytes(digest, "little")


class HashedTokenBackend:
    def __init__(self, dimension: int = 512, seed: int = 0):
        if dimension < 1:
            raise ValueError(f"dimension must be positive, got {dimension}")
        self.dimension = dimension
        self.seed = seed
        self.backend_id = f"hashed-v1-d{dimension}-s{seed}"
        self._token_cache: dict[str, np.ndarray] = {}

    def token_vector(self, token: str) -> np.ndarray:
        if token == WILDCARD:
            return np.zeros(self.dimension)
        cached = self._token_cache.get(token)
        if cached is None:
            rng = np.random.Generator(np.random.PCG64(_token_seed(token, self.seed)))
            v = rng.standard_normal(self.dimension)
            cached = v / np.linalg.norm(v)
            self._token_cache[token] = cached
        return cached

    def encode_tokens(self, tokens: list[str]) -> np.ndarray:
        if not tokens:
            return np.zeros(self.dimension)
        return np.mean([self.token_vector(t) for t in tokens], axis=0)


class LMAdapterBackend:
    """Pretrained language-model adapter.

    ``encode_fn`` maps template text to a 1-D float vector and defaults to a
    mean-pooled transformers model loaded from ``model_name``; injecting it
    keeps tests independent of multi-gigabyte downloads.
    """

    def __init__(self, model_name: str, dimension: int = 512, seed: int = 0, encode_fn=None):
        self.dimension = dimension
        self.seed = seed
        self.model_name = model_name
        self.backend_id = f"lm-v1-{model_name}-d{dimension}-s{seed}"
        self._encode_fn = encode_fn or self._load_model()
        self._projections: dict[int, np.ndarray] = {}

    def _load_model(self):
        try:
            import torch
            from transformers import AutoModel, AutoTokenizer

            tokenizer = AutoTokenizer.from_pretrained(self.model_name)
            model = AutoModel.from_pretrained(self.model_name)
            model.eval()
        except Exception as exc:
            raise EmbeddingBackendError(
                f"language-model backend {self.model_name!r} unavailable: {exc}"
            ) from exc

        def encode(text: str) -> np.ndarray:
            with torch.no_grad():
                batch = tokenizer(text, return_tensors="pt", truncation=True)
                hidden = model(**batch).last_hidden_state[0]
            return hidden.mean(dim=0).numpy().astype(np.float64)

        return encode

    def _projection(self, source_dim: int) -> np.ndarray:
        if source_dim not in self._projections:
            rng = np.random.Generator(np.random.PCG64(_token_seed("projection", self.seed)))
            self._projections[source_dim] = rng.standard_normal(
                (source_dim, self.dimension)
            ) / np.sqrt(source_dim)
        return self._projections[source_dim]

    def encode_tokens(self, tokens: list[str]) -> np.ndarray:
        raw = np.asarray(self._encode_fn(" ".join(tokens)), dtype=np.float64).ravel()
        if raw.size != self.dimension:
            raw = raw @ self._projection(raw.size)
        return raw


def embed_template(template: LogTemplate, backend) -> EventEmbedding:
    try:
        vector = np.asarray(backend.encode_tokens(template.tokens), dtype=np.float64)
    except EmbeddingBackendError:
        raise
    except Exception as exc:
        raise EmbeddingBackendError(
            f"backend {backend.backend_id} failed on template {template.template_id}: {exc}"
        ) from exc
    if vector.shape != (backend.dimension,):
        raise EmbeddingBackendError(
            f"backend {backend.backend_id} produced shape {vector.shape} for template "
            f"{template.template_id}, expected ({backend.dimension},)"
        )
    if not np.all(np.isfinite(vector)):
        raise EmbeddingBackendError(
            f"backend {backend.backend_id} produced non-finite values for template "
            f"{template.template_id}"
        )
    return EventEmbedding(template.template_id, vector, backend.backend_id)


def _cache_key(backend_id: str, template: LogTemplate) -> str:
    return backend_id + "||" + " ".join(template.tokens)


def load_embedding_cache(path: str | Path) -> dict[str, list[float]]:
    p = Path(path)
    if not p.exists():
        return {}
    payload = json.loads(p.read_text(encoding="utf-8"))
    if payload.get("format") != CACHE_FORMAT or payload.get("version") != CACHE_VERSION:
        raise EmbeddingBackendError(f"{path} is not an embedding cache file")
    return payload["entries"]


def save_embedding_cache(path: str | Path, entries: dict[str, list[float]]) -> None:
    payload = {"format": CACHE_FORMAT, "version": CACHE_VERSION, "entries": entries}
    Path(path).write_text(json.dumps(payload), encoding="utf-8")


def embed_corpus(
    templates: list[LogTemplate],
    backend,
    cache_path: str | Path | None = None,
) -> dict[int, EventEmbedding]:
    """Embed every template, optionally through an on-disk cache.

    Cache entries are keyed by (backend id, template token string) so a hit
    is bit-identical to a fresh computation of the same template text.
    """
    entries = load_embedding_cache(cache_path) if cache_path else {}
    out: dict[int, EventEmbedding] = {}
    dirty = False
    for template in templates:
        key = _cache_key(backend.backend_id, template)
        if key in entries:
            vector = np.asarray(entries[key], dtype=np.float64)
            out[template.template_id] = EventEmbedding(
                template.template_id, vector, backend.backend_id
            )
            continue
        emb = embed_template(template, backend)
        out[template.template_id] = emb
        entries[key] = [float(x) for x in emb.vector]
        dirty = True
    if cache_path and dirty:
        save_embedding_cache(cache_path, entries)
    return out
