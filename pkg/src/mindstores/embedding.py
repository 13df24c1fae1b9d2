"""Text embeddings and cosine similarity.

The default embedder is deterministic signed feature hashing over lowercased
word n-grams: each n-gram is hashed with BLAKE2b (8-byte digest, read
little-endian), the low bits pick a bucket in ``[0, dim)`` and the top bit picks
the sign. Counts are accumulated and the vector is L2-normalised. Empty text
(no tokens) maps to the all-zero vector.

An ``external-service`` mode posts texts to an embeddings endpoint that speaks
the common ``{"input": [...]}`` / ``{"data": [{"embedding": [...]}]}`` shape.
"""

from __future__ import annotations

import functools
import hashlib
import math
import os
import re
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import httpx
import numpy as np

from .errors import EmbeddingError

HASHED_NGRAM = "hashed-ngram"
EXTERNAL_SERVICE = "external-service"
TOKEN_ENV = "MINDSTORES_EMBED_TOKEN"

_TOKEN_RE = re.compile(r"[a-z0-9]+")


@dataclass(frozen=True)
class EmbedderConfig:
    dim: int = 768
    mode: str = HASHED_NGRAM
    ngram_sizes: frozenset[int] = field(default_factory=lambda: frozenset({1, 2}))
    service_endpoint: str | None = None
    timeout: float = 30.0

    def __post_init__(self):
        if not isinstance(self.dim, int) or self.dim < 8:
            raise ValueError(f"embedding dim must be an integer >= 8, got {self.dim!r}")
        if self.mode not in (HASHED_NGRAM, EXTERNAL_SERVICE):
            raise ValueError(f"unknown embedder mode {self.mode!r}")
        if (self.service_endpoint is not None) != (self.mode == EXTERNAL_SERVICE):
            raise ValueError("service_endpoint must be set exactly when mode is external-service")
        sizes = frozenset(self.ngram_sizes)
        if not sizes or any(n < 1 for n in sizes):
            raise ValueError("ngram_sizes must be a non-empty set of positive integers")
        object.__setattr__(self, "ngram_sizes", sizes)


class EmbeddingVector:
    """A fixed-dimension real vector, unit length or all zero."""

    __slots__ = ("components",)

    def __init__(self, components):
        arr = np.array(components, dtype=np.float64)
        if arr.ndim != 1 or arr.size == 0:
            raise ValueError("embedding components must be a non-empty 1-d sequence")
        arr.setflags(write=False)
        self.components = arr

    @property
    def dim(self) -> int:
        return int(self.components.shape[0])

    @property
    def is_zero(self) -> bool:
        return not self.components.any()

    def norm(self) -> float:
        return float(np.linalg.norm(self.components))

    def tolist(self) -> list[float]:
        return self.components.tolist()

    def __eq__(self, other):
        if not isinstance(other, EmbeddingVector):
            return NotImplemented
        return np.array_equal(self.components, other.components)

    def __hash__(self):
        return hash(self.components.tobytes())

    def __repr__(self):
        return f"EmbeddingVector(dim={self.dim}, norm={self.norm():.6f})"

    @classmethod
    def zeros(cls, dim: int) -> "EmbeddingVector":
        return cls(np.zeros(dim))


def tokenize(text: str) -> list[str]:
    return _TOKEN_RE.findall(text.lower())


def ngrams(tokens: Sequence[str], sizes: Iterable[int]) -> list[str]:
    grams = []
    for n in sorted(sizes):
        grams.extend(" ".join(tokens[i:i + n]) for i in range(len(tokens) - n + 1))
    return grams


def _bucket(gram: str, dim: int) -> tuple[int, float]:
    h = int.from_bytes(hashlib.blake2b(gram.encode("utf-8"), digest_size=8).digest(), "little")
    sign = -1.0 if h >> 63 else 1.0
    return h % dim, sign


@functools.lru_cache(maxsize=65536)
def _hashed(text: str, dim: int, sizes: tuple[int, ...]) -> np.ndarray:
    vec = np.zeros(dim)
    for gram in ngrams(tokenize(text), sizes):
        idx, sign = _bucket(gram, dim)
        vec[idx] += sign
    norm = np.linalg.norm(vec)
    if norm > 0:
        vec /= norm
    vec.setflags(write=False)
    return vec


def embed_text(text: str, config: EmbedderConfig) -> EmbeddingVector:
    """Embed one text. Hashed mode is a pure function of (text, config)."""
    if config.mode == HASHED_NGRAM:
        return EmbeddingVector(_hashed(text, config.dim, tuple(sorted(config.ngram_sizes))))
    return embed_texts([text], config)[0]


def embed_texts(texts: Sequence[str], config: EmbedderConfig, client: httpx.Client | None = None,
                token: str | None = None) -> list[EmbeddingVector]:
    if config.mode == HASHED_NGRAM:
        return [embed_text(t, config) for t in texts]
    return _service_embed(list(texts), config, client, token)


def _service_embed(texts, config, client, token):
    # empty fields never go over the wire; they are the zero sentinel
    wanted = [i for i, t in enumerate(texts) if tokenize(t)]
    out = [EmbeddingVector.zeros(config.dim) for _ in texts]
    if not wanted:
        return out
    token = token if token is not None else os.environ.get(TOKEN_ENV)
    headers = {"Authorization": f"Bearer {token}"} if token else {}
    payload = {"input": [texts[i] for i in wanted]}
    own = client is None
    client = client or httpx.Client(timeout=config.timeout)
    try:
        resp = client.post(config.service_endpoint, json=payload, headers=headers)
        resp.raise_for_status()
        data = resp.json()["data"]
        vectors = [row["embedding"] for row in data]
    except (httpx.HTTPError, ValueError, KeyError, TypeError) as exc:
        raise EmbeddingError(f"embedding service request failed: {exc}") from exc
    finally:
        if own:
            client.close()
    if len(vectors) != len(wanted):
        raise EmbeddingError(f"embedding service returned {len(vectors)} vectors for {len(wanted)} inputs")
    for i, raw in zip(wanted, vectors):
        arr = np.asarray(raw, dtype=np.float64)
        if arr.shape != (config.dim,) or not np.all(np.isfinite(arr)):
            raise EmbeddingError(f"embedding service returned a malformed vector of shape {arr.shape}")
        norm = np.linalg.norm(arr)
        out[i] = EmbeddingVector(arr / norm if norm > 0 else arr)
    return out


class Embedder:
    """Holds an embedder config plus a reusable HTTP client for service mode."""

    def __init__(self, config: EmbedderConfig | None = None, client: httpx.Client | None = None,
                 token: str | None = None):
        self.config = config or EmbedderConfig()
        self._client = client
        self._token = token

    @property
    def dim(self) -> int:
        return self.config.dim

    def embed(self, text: str) -> EmbeddingVector:
        return self.embed_many([text])[0]

    def embed_many(self, texts: Sequence[str]) -> list[EmbeddingVector]:
        return embed_texts(texts, self.config, client=self._client, token=self._token)


def _as_array(v) -> np.ndarray:
    if isinstance(v, EmbeddingVector):
        return v.components
    return np.asarray(v, dtype=np.float64)


def cosine_similarity(a, b) -> float:
    """Cosine of the angle between ``a`` and ``b``; 0 if either is all zero."""
    x, y = _as_array(a), _as_array(b)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError(f"dimension mismatch: {x.shape} vs {y.shape}")
    nx = math.sqrt(float(np.dot(x, x)))
    ny = math.sqrt(float(np.dot(y, y)))
    if nx == 0.0 or ny == 0.0:
        return 0.0
    sim = float(np.dot(x, y)) / (nx * ny)
    return min(1.0, max(-1.0, sim))
