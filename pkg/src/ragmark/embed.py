"""Embedding contract, cosine similarity, and two interchangeable embedders.

``RemoteEmbedder`` talks to an HTTP sentence-embedding service.
``LocalHashEmbedder`` is a deterministic hashed bag-of-words stand-in so the
whole pipeline runs and tests offline. Both satisfy the same contract and
the vector dimension always comes from the embedder, never from callers.
"""

from __future__ import annotations

import math
import re
import threading
from dataclasses import dataclass
from typing import Protocol, Sequence

import numpy as np
import requests

from .errors import (
    BadResponseError,
    DimMismatchError,
    EmbedderChangedError,
    TransportError,
    ZeroVectorError,
)

_WORD_RE = re.compile(r"\w+")

FNV64_OFFSET = 0xCBF29CE484222325
FNV64_PRIME = 0x100000001B3


def fnv1a64(data: bytes) -> int:
    """FNV-1a 64-bit hash; stable across platforms and processes."""
    h = FNV64_OFFSET
    for byte in data:
        h ^= byte
        h = (h * FNV64_PRIME) & 0xFFFFFFFFFFFFFFFF
    return h


@dataclass(frozen=True)
class EmbeddingVector:
    values: tuple[float, ...]

    def __post_init__(self):
        if not all(math.isfinite(v) for v in self.values):
            raise ValueError("embedding contains non-finite values")

    @property
    def dim(self) -> int:
        return len(self.values)

    def norm(self) -> float:
        return math.sqrt(math.fsum(v * v for v in self.values))


def cosine(x: EmbeddingVector, y: EmbeddingVector) -> float:
    """Dot product over the product of norms; symmetric and scale-invariant."""
    if x.dim != y.dim:
        raise DimMismatchError(f"dim mismatch: {x.dim} vs {y.dim}")
    xv = np.asarray(x.values, dtype=np.float64)
    yv = np.asarray(y.values, dtype=np.float64)
    nx = float(np.linalg.norm(xv))
    ny = float(np.linalg.norm(yv))
    if nx == 0.0 or ny == 0.0:
        raise ZeroVectorError("cosine is undefined for zero-norm vectors")
    return float(np.dot(xv, yv) / (nx * ny))


class Embedder(Protocol):
    """Deterministic text-to-vector mapping with a declared dimension."""

    name: str
    dim: int

    def embed_batch(self, texts: Sequence[str]) -> list[EmbeddingVector]: ...


class LocalHashEmbedder:
    """Hashed bag-of-words embedder: no model, no network, fully deterministic.

    Each lowercase word is hashed (FNV-1a 64) to one of ``dim`` buckets;
    bucket counts are L2-normalized, so identical texts map to identical
    unit vectors.
    """

    def __init__(self, dim: int = 64):
        if dim < 8:
            raise ValueError("dim must be at least 8")
        self.dim = dim
        self.name = f"local-hash-{dim}"

    def bucket(self, word: str) -> int:
        return fnv1a64(word.lower().encode("utf-8")) % self.dim

    def embed_batch(self, texts: Sequence[str]) -> list[EmbeddingVector]:
        out = []
        for text in texts:
            words = _WORD_RE.findall(text.lower())
            if not words:
                raise ZeroVectorError(f"no embeddable words in {text!r}")
            counts = np.zeros(self.dim, dtype=np.float64)
            for w in words:
                counts[fnv1a64(w.encode("utf-8")) % self.dim] += 1.0
            counts /= np.linalg.norm(counts)
            out.append(EmbeddingVector(tuple(float(v) for v in counts)))
        return out


def embed_local_test(texts: Sequence[str], dim: int = 64) -> list[EmbeddingVector]:
    """One-shot helper around LocalHashEmbedder."""
    return LocalHashEmbedder(dim=dim).embed_batch(list(texts))


class RemoteEmbedder:
    """Client for an HTTP embedding service (POST /embed).

    Requests are split at ``batch_size`` and results concatenated in input
    order. The declared dimension is learned from the first response; any
    later drift is an error, since mixed-dimension vectors poison an index.
    """

    def __init__(
        self,
        endpoint: str,
        batch_size: int = 64,
        timeout_ms: int = 10000,
        max_inflight: int = 4,
        session: requests.Session | None = None,
    ):
        if batch_size < 1:
            raise ValueError("batch_size must be positive")
        self.endpoint = endpoint.rstrip("/")
        self.batch_size = batch_size
        self.timeout = timeout_ms / 1000.0
        self.name = f"remote:{self.endpoint}"
        self.dim: int | None = None
        self._sem = threading.BoundedSemaphore(max_inflight)
        self._session = session or requests.Session()

    def embed_batch(self, texts: Sequence[str]) -> list[EmbeddingVector]:
        texts = list(texts)
        for t in texts:
            if not t or not t.strip():
                raise ZeroVectorError("cannot embed empty text")
        out: list[EmbeddingVector] = []
        for start in range(0, len(texts), self.batch_size):
            out.extend(self._embed_chunk(texts[start: start + self.batch_size]))
        return out

    def _embed_chunk(self, chunk: list[str]) -> list[EmbeddingVector]:
        with self._sem:
            try:
                resp = self._session.post(
                    self.endpoint + "/embed", json={"texts": chunk}, timeout=self.timeout
                )
            except requests.RequestException as exc:
                raise TransportError(f"embedding request failed: {exc}") from exc
        if resp.status_code != 200:
            raise TransportError(f"embedding endpoint returned HTTP {resp.status_code}")
        try:
            body = resp.json()
            vectors = body["vectors"]
            dim = int(body["dim"])
            model = str(body.get("model", "unknown"))
        except (ValueError, KeyError, TypeError) as exc:
            raise BadResponseError(f"malformed embedding response: {exc}") from exc
        if len(vectors) != len(chunk):
            raise BadResponseError(
                f"asked for {len(chunk)} vectors, got {len(vectors)}"
            )
        if self.dim is None:
            self.dim = dim
            self.name = model
        elif dim != self.dim:
            raise EmbedderChangedError(
                f"embedding dimension changed from {self.dim} to {dim} mid-run"
            )
        out = []
        for vec in vectors:
            if len(vec) != self.dim:
                raise BadResponseError("vector length disagrees with declared dim")
            out.append(EmbeddingVector(tuple(float(v) for v in vec)))
        return out


def embed_batch_remote(
    texts: Sequence[str],
    endpoint: str,
    *,
    batch_size: int = 64,
    timeout_ms: int = 10000,
    max_inflight: int = 4,
) -> list[EmbeddingVector]:
    """One-shot helper around RemoteEmbedder."""
    client = RemoteEmbedder(
        endpoint, batch_size=batch_size, timeout_ms=timeout_ms, max_inflight=max_inflight
    )
    return client.embed_batch(texts)


def make_embedder(
    spec: str,
    *,
    batch_size: int = 64,
    timeout_ms: int = 10000,
    max_inflight: int = 4,
) -> Embedder:
    """Build an embedder from a spec string.

    ``local:<dim>`` gives the hashing embedder; an http(s) URL gives the
    remote client.
    """
    if spec.startswith("local"):
        _, _, dim = spec.partition(":")
        return LocalHashEmbedder(dim=int(dim) if dim else 64)
    if spec.startswith("http://") or spec.startswith("https://"):
        return RemoteEmbedder(
            spec, batch_size=batch_size, timeout_ms=timeout_ms, max_inflight=max_inflight
        )
    raise ValueError(f"unrecognized embedder spec: {spec!r}")
