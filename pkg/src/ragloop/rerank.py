"""Dense second-stage reranking of sparse candidates by embedding cosine similarity.

The embedding model itself lives behind :class:`Embedder`; this module only
needs ``embed(texts) -> vectors``. A wire client for the common embeddings
endpoint shape is provided for live deployments.
"""

from __future__ import annotations

import logging
import math
from typing import Protocol

import requests

from .bm25 import Hit, Index, RetrievalResult, indexed_text

logger = logging.getLogger(__name__)


class Embedder(Protocol):
    def embed(self, texts: list[str]) -> list[list[float]]:
        """One vector per input text; all vectors of equal dimension."""
        ...


class RerankError(Exception):
    """Embedder failure. Carries the sparse result so callers can fall back."""

    def __init__(self, message: str, sparse_result: RetrievalResult):
        super().__init__(message)
        self.sparse_result = sparse_result


def cosine(u: list[float], v: list[float]) -> float:
    dot = sum(a * b for a, b in zip(u, v))
    nu = math.sqrt(sum(a * a for a in u))
    nv = math.sqrt(sum(b * b for b in v))
    if nu == 0.0 or nv == 0.0:
        return 0.0
    return dot / (nu * nv)


def rerank(index: Index, query: str, candidates: RetrievalResult,
           k_final: int, embedder: Embedder) -> RetrievalResult:
    """Reorder sparse candidates by cosine(query, passage) and truncate.

    Ties (and exactly-equal embeddings) preserve the incoming sparse order.
    Never introduces a passage absent from ``candidates``.
    """
    if k_final < 1:
        raise ValueError("k_final must be >= 1")
    if not candidates.hits:
        return RetrievalResult(hits=(), stage="reranked")

    texts = [indexed_text(index.passage(h.passage_id)) for h in candidates.hits]
    try:
        vectors = embedder.embed([query] + texts)
    except Exception as exc:
        raise RerankError(f"embedder failed: {exc}", candidates) from exc
    if len(vectors) != len(texts) + 1:
        raise RerankError(
            f"embedder returned {len(vectors)} vectors for {len(texts) + 1} inputs",
            candidates)
    dims = {len(v) for v in vectors}
    if len(dims) != 1:
        raise RerankError(f"embedder returned mixed dimensions {sorted(dims)}", candidates)

    query_vec = vectors[0]
    scored = [
        Hit(passage_id=h.passage_id, sparse_score=h.sparse_score,
            rerank_score=cosine(query_vec, vec))
        for h, vec in zip(candidates.hits, vectors[1:])
    ]
    # sorted() is stable, so equal rerank scores keep their sparse rank.
    ordered = sorted(scored, key=lambda h: -h.rerank_score)
    return RetrievalResult(hits=tuple(ordered[:k_final]), stage="reranked")


class HttpEmbedder:
    """Client for the common embeddings wire shape.

    POSTs ``{"input": [...]}`` to the endpoint and reads
    ``{"data": [{"embedding": [...]}, ...]}`` back. Large batches are split
    into sequential requests of ``batch_size``.
    """

    def __init__(self, endpoint: str, auth_token: str | None = None,
                 model: str | None = None, timeout: float = 60.0,
                 batch_size: int = 64):
        self.endpoint = endpoint
        self._auth_token = auth_token
        self.model = model
        self.timeout = timeout
        self.batch_size = batch_size

    def embed(self, texts: list[str]) -> list[list[float]]:
        headers = {"Content-Type": "application/json"}
        if self._auth_token:
            headers["Authorization"] = f"Bearer {self._auth_token}"
        out: list[list[float]] = []
        for start in range(0, len(texts), self.batch_size):
            batch = texts[start:start + self.batch_size]
            payload: dict = {"input": batch}
            if self.model:
                payload["model"] = self.model
            resp = requests.post(self.endpoint, json=payload, headers=headers,
                                 timeout=self.timeout)
            resp.raise_for_status()
            data = resp.json()["data"]
            out.extend([float(x) for x in item["embedding"]] for item in data)
        return out
