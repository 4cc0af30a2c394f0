"""Hybrid retrieval: BM25 keyword search, vector search, fusion, re-rank.

Both index scans are exhaustive and fully deterministic, so the whole
pipeline can be checked against a brute-force recomputation at desk scale.
Embedding and re-ranking are pluggable; the defaults are deterministic
local implementations, remote HTTP backends satisfy the same contracts.
"""

from __future__ import annotations

import hashlib
import json
import math
import re
import urllib.error
import urllib.request
from dataclasses import dataclass, field, replace
from typing import Iterable, Protocol, Sequence

from .corpus import Chunk, DocKind
from .errors import (
    BackendUnavailable,
    DimensionMismatch,
    DuplicateChunkId,
    EmptyQuery,
    EmptyText,
)

EMBED_DIM = 64
BM25_K1 = 1.2
BM25_B = 0.75

_TOKEN = re.compile(r"\w+", re.UNICODE)


def tokenize(text: str) -> list[str]:
    return _TOKEN.findall(text.casefold())


# --- embeddings -------------------------------------------------------------

@dataclass(frozen=True)
class Embedding:
    values: tuple[float, ...]

    @property
    def dim(self) -> int:
        return len(self.values)


def _bucket(token: str, dim: int) -> int:
    digest = hashlib.md5(token.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") % dim


def embed(text: str, dim: int = EMBED_DIM) -> Embedding:
    """Deterministic hashed bag-of-words embedding, unit L2 norm."""
    if not text.strip():
        raise EmptyText("cannot embed empty text")
    tokens = tokenize(text)
    if not tokens:
        # no word tokens (all punctuation): hash the raw text instead
        tokens = [text.casefold()]
    values = [0.0] * dim
    for token in tokens:
        values[_bucket(token, dim)] += 1.0
    norm = math.sqrt(sum(v * v for v in values))
    return Embedding(values=tuple(v / norm for v in values))


class Embedder(Protocol):
    dim: int

    def embed_text(self, text: str) -> Embedding: ...


class HashEmbedder:
    """Default local embedder; identical input always yields identical vectors."""

    def __init__(self, dim: int = EMBED_DIM):
        self.dim = dim

    def embed_text(self, text: str) -> Embedding:
        return embed(text, self.dim)


class RemoteEmbedder:
    """HTTP embedder: POST {"texts": [...]} -> {"vectors": [[...]]}."""

    def __init__(self, url: str, dim: int = EMBED_DIM, timeout: float = 10.0):
        self.url = url
        self.dim = dim
        self.timeout = timeout

    def embed_text(self, text: str) -> Embedding:
        if not text.strip():
            raise EmptyText("cannot embed empty text")
        payload = json.dumps({"texts": [text]}).encode("utf-8")
        req = urllib.request.Request(
            self.url, data=payload, headers={"Content-Type": "application/json"}
        )
        try:
            with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                body = json.loads(resp.read().decode("utf-8"))
        except (urllib.error.URLError, OSError, ValueError) as e:
            raise BackendUnavailable(f"embedder at {self.url}: {e}") from e
        vector = body["vectors"][0]
        if len(vector) != self.dim:
            raise DimensionMismatch(f"embedder returned dim {len(vector)}, expected {self.dim}")
        return Embedding(values=tuple(float(v) for v in vector))


# --- scored hits and config ---------------------------------------------------

@dataclass(frozen=True)
class ScoredHit:
    chunk_id: str
    keyword_score: float = 0.0
    vector_score: float = 0.0
    fused_score: float = 0.0
    rerank_score: float = 0.0
    provenance: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        return {
            "chunk_id": self.chunk_id,
            "keyword_score": self.keyword_score,
            "vector_score": self.vector_score,
            "fused_score": self.fused_score,
            "rerank_score": self.rerank_score,
            "provenance": list(self.provenance),
        }


@dataclass(frozen=True)
class RetrievalConfig:
    k_candidates: int = 20
    w_kw: float = 0.3
    w_vec: float = 0.7
    rerank_threshold: float = 0.7
    top_k: int = 2

    def __post_init__(self):
        if self.k_candidates < 1:
            raise ValueError("k_candidates must be >= 1")
        if self.w_kw < 0 or self.w_vec < 0 or abs(self.w_kw + self.w_vec - 1.0) > 1e-9:
            raise ValueError("fusion weights must be non-negative and sum to 1")
        if not (0.0 <= self.rerank_threshold <= 1.0):
            raise ValueError("rerank_threshold must be in [0, 1]")
        if self.top_k < 1:
            raise ValueError("top_k must be >= 1")


DEFAULT_RETRIEVAL_CONFIG = RetrievalConfig()


@dataclass
class RetrievalResult:
    query: str
    hits: list[ScoredHit]
    trace: dict[str, list[ScoredHit]] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "query": self.query,
            "hits": [h.to_dict() for h in self.hits],
            "trace": {k: [h.to_dict() for h in v] for k, v in self.trace.items()},
        }


# --- index snapshot -----------------------------------------------------------

class IndexSnapshot:
    """Immutable inverted + vector index over a chunk set."""

    def __init__(
        self,
        chunks: dict[str, Chunk],
        postings: dict[str, dict[str, int]],
        doc_len: dict[str, int],
        vectors: dict[str, tuple[float, ...]],
        embedder: Embedder,
        snapshot_id: str,
    ):
        self.chunks = chunks
        self.postings = postings
        self.doc_len = doc_len
        self.vectors = vectors
        self.embedder = embedder
        self.snapshot_id = snapshot_id
        self.n_docs = len(chunks)
        self.total_len = sum(doc_len.values())
        self._kind_views: dict[DocKind, IndexSnapshot] = {}

    @classmethod
    def build(cls, chunks: Iterable[Chunk], embedder: Embedder | None = None) -> "IndexSnapshot":
        embedder = embedder or HashEmbedder()
        by_id: dict[str, Chunk] = {}
        for chunk in chunks:
            if chunk.chunk_id in by_id:
                raise DuplicateChunkId(chunk.chunk_id)
            by_id[chunk.chunk_id] = chunk
        postings: dict[str, dict[str, int]] = {}
        doc_len: dict[str, int] = {}
        vectors: dict[str, tuple[float, ...]] = {}
        h = hashlib.sha256()
        for chunk_id in sorted(by_id):
            chunk = by_id[chunk_id]
            tokens = tokenize(chunk.text)
            doc_len[chunk_id] = len(tokens)
            for token in tokens:
                bag = postings.setdefault(token, {})
                bag[chunk_id] = bag.get(chunk_id, 0) + 1
            vectors[chunk_id] = embedder.embed_text(chunk.text).values
            h.update(chunk_id.encode("utf-8"))
            h.update(b"\x00")
            h.update(chunk.text.encode("utf-8"))
            h.update(b"\x00")
        return cls(
            chunks=by_id,
            postings=postings,
            doc_len=doc_len,
            vectors=vectors,
            embedder=embedder,
            snapshot_id=h.hexdigest()[:16],
        )

    def for_kind(self, kind: DocKind) -> "IndexSnapshot":
        """Sub-snapshot restricted to one corpus kind (cached, reuses vectors)."""
        view = self._kind_views.get(kind)
        if view is None:
            keep = {cid for cid, c in self.chunks.items() if c.kind == kind}
            postings: dict[str, dict[str, int]] = {}
            for term, bag in self.postings.items():
                sub = {cid: tf for cid, tf in bag.items() if cid in keep}
                if sub:
                    postings[term] = sub
            h = hashlib.sha256()
            for chunk_id in sorted(keep):
                h.update(chunk_id.encode("utf-8"))
                h.update(b"\x00")
                h.update(self.chunks[chunk_id].text.encode("utf-8"))
                h.update(b"\x00")
            view = IndexSnapshot(
                chunks={cid: self.chunks[cid] for cid in keep},
                postings=postings,
                doc_len={cid: self.doc_len[cid] for cid in keep},
                vectors={cid: self.vectors[cid] for cid in keep},
                embedder=self.embedder,
                snapshot_id=h.hexdigest()[:16],
            )
            self._kind_views[kind] = view
        return view

    def embed_query(self, query: str) -> Embedding:
        return self.embedder.embed_text(query)


def index_chunks(chunks: Iterable[Chunk], embedder: Embedder | None = None) -> IndexSnapshot:
    """Build an immutable snapshot over the given chunks."""
    return IndexSnapshot.build(chunks, embedder)


# --- search stages --------------------------------------------------------------

def keyword_search(snapshot: IndexSnapshot, query: str, k: int) -> list[ScoredHit]:
    """Top-k BM25 hits; only chunks containing at least one query term score."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if not query.strip():
        raise EmptyQuery("empty keyword query")
    terms = sorted(set(tokenize(query)))
    if not terms or snapshot.n_docs == 0:
        return []
    n = snapshot.n_docs
    avgdl = snapshot.total_len / n
    scores: dict[str, float] = {}
    for term in terms:
        bag = snapshot.postings.get(term)
        if not bag:
            continue
        df = len(bag)
        idf = math.log(1.0 + (n - df + 0.5) / (df + 0.5))
        for chunk_id, tf in bag.items():
            dl = snapshot.doc_len[chunk_id]
            part = (tf * (BM25_K1 + 1.0)) / (
                tf + BM25_K1 * (1.0 - BM25_B + BM25_B * dl / avgdl)
            )
            scores[chunk_id] = scores.get(chunk_id, 0.0) + idf * part
    ranked = sorted(scores.items(), key=lambda kv: (-kv[1], kv[0]))[:k]
    return [
        ScoredHit(chunk_id=cid, keyword_score=s, provenance=("keyword",))
        for cid, s in ranked
    ]


def vector_search(snapshot: IndexSnapshot, query_embedding: Embedding, k: int) -> list[ScoredHit]:
    """Top-k cosine similarity by exhaustive scan over every chunk."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if snapshot.n_docs == 0:
        return []
    dim = len(next(iter(snapshot.vectors.values())))
    if query_embedding.dim != dim:
        raise DimensionMismatch(f"query dim {query_embedding.dim}, index dim {dim}")
    qv = query_embedding.values
    scored = []
    for chunk_id in sorted(snapshot.vectors):
        v = snapshot.vectors[chunk_id]
        cos = 0.0
        for i in range(dim):
            cos += qv[i] * v[i]
        scored.append((chunk_id, cos))
    scored.sort(key=lambda kv: (-kv[1], kv[0]))
    return [
        ScoredHit(chunk_id=cid, vector_score=s, provenance=("vector",))
        for cid, s in scored[:k]
    ]


def _minmax(scores: dict[str, float]) -> dict[str, float]:
    if not scores:
        return {}
    lo = min(scores.values())
    hi = max(scores.values())
    if hi == lo:
        return {cid: 1.0 for cid in scores}
    return {cid: (s - lo) / (hi - lo) for cid, s in scores.items()}


def fuse(
    kw_hits: Sequence[ScoredHit],
    vec_hits: Sequence[ScoredHit],
    w_kw: float,
    w_vec: float,
) -> list[ScoredHit]:
    """Weighted sum of per-list min-max normalized scores; absence scores 0."""
    kw_raw = {h.chunk_id: h.keyword_score for h in kw_hits}
    vec_raw = {h.chunk_id: h.vector_score for h in vec_hits}
    kw_norm = _minmax(kw_raw)
    vec_norm = _minmax(vec_raw)
    fused = []
    for chunk_id in sorted(set(kw_raw) | set(vec_raw)):
        score = w_kw * kw_norm.get(chunk_id, 0.0) + w_vec * vec_norm.get(chunk_id, 0.0)
        provenance = ["fused"]
        if chunk_id in kw_raw:
            provenance.insert(0, "keyword")
        if chunk_id in vec_raw:
            provenance.insert(-1, "vector")
        fused.append(
            ScoredHit(
                chunk_id=chunk_id,
                keyword_score=kw_raw.get(chunk_id, 0.0),
                vector_score=vec_raw.get(chunk_id, 0.0),
                fused_score=score,
                provenance=tuple(provenance),
            )
        )
    fused.sort(key=lambda h: (-h.fused_score, h.chunk_id))
    return fused


class Reranker(Protocol):
    def score(self, query: str, texts: Sequence[str]) -> list[float]: ...


class TermOverlapReranker:
    """Share of unique query terms present in the candidate text."""

    def score(self, query: str, texts: Sequence[str]) -> list[float]:
        q_terms = set(tokenize(query))
        if not q_terms:
            return [0.0] * len(texts)
        return [len(q_terms & set(tokenize(t))) / len(q_terms) for t in texts]


class RemoteReranker:
    """HTTP re-ranker: POST {"query", "texts"} -> {"scores": [...]}."""

    def __init__(self, url: str, timeout: float = 10.0):
        self.url = url
        self.timeout = timeout

    def score(self, query: str, texts: Sequence[str]) -> list[float]:
        payload = json.dumps({"query": query, "texts": list(texts)}).encode("utf-8")
        req = urllib.request.Request(
            self.url, data=payload, headers={"Content-Type": "application/json"}
        )
        try:
            with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                body = json.loads(resp.read().decode("utf-8"))
        except (urllib.error.URLError, OSError, ValueError) as e:
            raise BackendUnavailable(f"re-ranker at {self.url}: {e}") from e
        return [float(s) for s in body["scores"]]


def rerank(
    query: str,
    hits: Sequence[ScoredHit],
    snapshot: IndexSnapshot,
    reranker: Reranker | None = None,
) -> list[ScoredHit]:
    """Assign rerank scores and re-sort; ties break on chunk id."""
    reranker = reranker or TermOverlapReranker()
    texts = [snapshot.chunks[h.chunk_id].text for h in hits]
    scores = reranker.score(query, texts)
    rescored = [
        replace(h, rerank_score=s, provenance=h.provenance + ("rerank",))
        for h, s in zip(hits, scores)
    ]
    rescored.sort(key=lambda h: (-h.rerank_score, h.chunk_id))
    return rescored


def retrieve(
    snapshot: IndexSnapshot,
    query: str,
    cfg: RetrievalConfig = DEFAULT_RETRIEVAL_CONFIG,
    reranker: Reranker | None = None,
) -> RetrievalResult:
    """Full pipeline: hybrid search, fuse, re-rank, threshold, top-k."""
    if not query.strip():
        raise EmptyQuery("empty retrieval query")
    kw = keyword_search(snapshot, query, cfg.k_candidates)
    if snapshot.n_docs > 0:
        vec = vector_search(snapshot, snapshot.embed_query(query), cfg.k_candidates)
    else:
        vec = []
    fused = fuse(kw, vec, cfg.w_kw, cfg.w_vec)
    reranked = rerank(query, fused, snapshot, reranker)
    survivors = [h for h in reranked if h.rerank_score >= cfg.rerank_threshold]
    return RetrievalResult(
        query=query,
        hits=survivors[: cfg.top_k],
        trace={
            "keyword": list(kw),
            "vector": list(vec),
            "fused": list(fused),
            "reranked": list(reranked),
        },
    )
