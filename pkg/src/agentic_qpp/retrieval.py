"""Corpus ingestion, lexical and dense retrieval, reranking, and pipeline composition.

Indices and stores are immutable after build; concurrent read-only searches
are safe.  Scorer and embedder clients are shareable across concurrent
episodes.
"""

from __future__ import annotations

import math
import re
import warnings
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Protocol, Sequence

import numpy as np

from . import wire
from .errors import (
    ConfigurationError,
    IngestError,
    PipelineError,
    RerankError,
    RetrievalWarning,
    TransportError,
)
from .types import Document, EmbeddingStore, RankedList, RetrieverKind, as_float_vector

_TOKEN_SPLIT = re.compile(r"[\W_]+", re.UNICODE)

DEFAULT_K1 = 1.2
DEFAULT_B = 0.75
DEFAULT_SEARCH_DEPTH = 100
DEFAULT_RERANK_DEPTH = 20


def tokenize(text: str) -> list[str]:
    """Lowercase and split on any non-alphanumeric character; no stemming or stopwords."""
    return [token for token in _TOKEN_SPLIT.split(text.lower()) if token]


@dataclass(frozen=True, eq=False)
class LexicalIndex:
    """Inverted index over title+text with per-document lengths."""

    postings: Mapping[str, tuple[tuple[str, int], ...]]
    doc_lengths: Mapping[str, int]
    avg_doc_length: float
    doc_count: int
    doc_store: Mapping[str, Document]


def _index_text(doc: Document) -> str:
    # Title and text are one indexed field, mirroring how information blocks
    # present them as a single unit.
    return f"{doc.title} {doc.text}"


def build_lexical_index(corpus: Iterable[Document]) -> LexicalIndex:
    """Ingest documents into a LexicalIndex; duplicate docnos are an error."""
    postings: dict[str, dict[str, int]] = {}
    doc_lengths: dict[str, int] = {}
    doc_store: dict[str, Document] = {}
    for doc in corpus:
        if doc.docno in doc_store:
            raise IngestError(f"duplicate docno {doc.docno!r}")
        doc_store[doc.docno] = doc
        tokens = tokenize(_index_text(doc))
        doc_lengths[doc.docno] = len(tokens)
        for token in tokens:
            term_postings = postings.setdefault(token, {})
            term_postings[doc.docno] = term_postings.get(doc.docno, 0) + 1
    frozen_postings = {
        term: tuple(sorted(freqs.items())) for term, freqs in postings.items()
    }
    count = len(doc_store)
    avg = sum(doc_lengths.values()) / count if count else 0.0
    return LexicalIndex(
        postings=frozen_postings,
        doc_lengths=doc_lengths,
        avg_doc_length=avg,
        doc_count=count,
        doc_store=doc_store,
    )


def search_lexical(
    index: LexicalIndex,
    query: str,
    k: int,
    k1: float = DEFAULT_K1,
    b: float = DEFAULT_B,
) -> RankedList:
    """BM25 top-k search with Robertson idf shifted by +1 inside the log.

    score(d) = sum over query tokens t of
        idf(t) * tf * (k1+1) / (tf + k1 * (1 - b + b * len(d)/avglen)),
    idf(t) = ln(1 + (N - n_t + 0.5) / (n_t + 0.5)).
    Ties break by ascending docno.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    scores: dict[str, float] = {}
    n_docs = index.doc_count
    avg_len = index.avg_doc_length
    for token in tokenize(query):
        term_postings = index.postings.get(token)
        if not term_postings:
            continue
        n_t = len(term_postings)
        idf = math.log(1.0 + (n_docs - n_t + 0.5) / (n_t + 0.5))
        for docno, tf in term_postings:
            length_norm = 1.0 - b + b * index.doc_lengths[docno] / avg_len
            contribution = idf * tf * (k1 + 1.0) / (tf + k1 * length_norm)
            scores[docno] = scores.get(docno, 0.0) + contribution
    return RankedList.from_scores(query, scores.items()).top(k)


class Embedder(Protocol):
    """Turns text into a fixed-dimension vector."""

    dim: int

    def embed(self, text: str) -> np.ndarray: ...


class LookupEmbedder:
    """Table-backed embedder for tests and offline runs."""

    def __init__(self, table: Mapping[str, Sequence[float]], dim: int | None = None):
        if not table and dim is None:
            raise ConfigurationError("empty lookup table requires an explicit dim")
        vectors = {text: np.asarray(vec, dtype=np.float64) for text, vec in table.items()}
        if dim is None:
            dim = len(next(iter(vectors.values())))
        self.dim = dim
        self._table = vectors

    def embed(self, text: str) -> np.ndarray:
        try:
            return self._table[text]
        except KeyError:
            raise ConfigurationError(f"no embedding for text {text!r} in lookup table") from None


class HttpEmbedder:
    """Client for the {"texts": [...]} -> {"vectors": [[...]]} endpoint."""

    def __init__(self, url: str, dim: int, timeout: float = wire.DEFAULT_TIMEOUT_S):
        self.url = url
        self.dim = dim
        self.timeout = timeout

    def embed(self, text: str) -> np.ndarray:
        return self.embed_many([text])[0]

    def embed_many(self, texts: Sequence[str]) -> list[np.ndarray]:
        body = wire.post_json_with_retries(self.url, {"texts": list(texts)}, timeout=self.timeout)
        vectors = body.get("vectors")
        if not isinstance(vectors, list) or len(vectors) != len(texts):
            raise TransportError(f"embedder returned {type(vectors).__name__} instead of {len(texts)} vectors")
        return [np.asarray(vec, dtype=np.float64) for vec in vectors]


def embed_query(embedder: Embedder, text: str) -> np.ndarray:
    """Embed text and enforce the embedder's declared dimension and finiteness."""
    vec = embedder.embed(text)
    try:
        return as_float_vector(vec, dim=embedder.dim)
    except ValueError as exc:
        raise ConfigurationError(f"embedding for {text!r}: {exc}") from exc


def search_dense(store: EmbeddingStore, query_vec: Sequence[float], k: int) -> RankedList:
    """Exact brute-force top-k by cosine similarity, ties by ascending docno.

    Zero-norm vectors (query or document) score -inf and rank last; a
    RetrievalWarning is emitted when this happens.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    query = as_float_vector(query_vec, dim=store.dim)
    query_norm = float(np.linalg.norm(query))
    docnos = sorted(store.doc_vectors)
    scored: list[tuple[str, float]] = []
    degenerate: list[str] = []
    if query_norm == 0.0:
        warnings.warn("zero-norm query vector; all documents score -inf", RetrievalWarning)
        scored = [(docno, float("-inf")) for docno in docnos]
    else:
        for docno in docnos:
            vec = store.doc_vectors[docno]
            norm = float(np.linalg.norm(vec))
            if norm == 0.0:
                degenerate.append(docno)
                scored.append((docno, float("-inf")))
            else:
                scored.append((docno, float(np.dot(query, vec) / (query_norm * norm))))
        if degenerate:
            warnings.warn(
                f"zero-norm document vectors scored -inf: {', '.join(degenerate)}",
                RetrievalWarning,
            )
    return RankedList.from_scores("", scored).top(k)


class Scorer(Protocol):
    """Scores every document of a list against a query, aligned by position."""

    def score_all(self, query_text: str, docs: Sequence[Document]) -> list[float]: ...


class TableScorer:
    """Fixed score lookup keyed by docno or by (query_text, docno); for tests."""

    def __init__(self, table: Mapping):
        self._table = dict(table)

    def score_all(self, query_text: str, docs: Sequence[Document]) -> list[float]:
        scores = []
        for doc in docs:
            if (query_text, doc.docno) in self._table:
                scores.append(float(self._table[(query_text, doc.docno)]))
            elif doc.docno in self._table:
                scores.append(float(self._table[doc.docno]))
            else:
                raise RerankError(f"no table score for docno {doc.docno!r}")
        return scores


class CosineScorer:
    """Embedding-cosine fallback scorer backed by a store and a query embedder."""

    def __init__(self, store: EmbeddingStore, embedder: Embedder):
        self.store = store
        self.embedder = embedder

    def score_all(self, query_text: str, docs: Sequence[Document]) -> list[float]:
        query = embed_query(self.embedder, query_text)
        query_norm = float(np.linalg.norm(query))
        scores = []
        for doc in docs:
            if doc.docno not in self.store:
                raise RerankError(f"no embedding for docno {doc.docno!r}")
            vec = self.store.vector(doc.docno)
            norm = float(np.linalg.norm(vec))
            if query_norm == 0.0 or norm == 0.0:
                scores.append(float("-inf"))
            else:
                scores.append(float(np.dot(query, vec) / (query_norm * norm)))
        return scores


class HttpScorer:
    """Client for the {"query", "documents"} -> {"scores"} scoring endpoint."""

    def __init__(self, url: str, timeout: float = wire.DEFAULT_TIMEOUT_S):
        self.url = url
        self.timeout = timeout

    def score_all(self, query_text: str, docs: Sequence[Document]) -> list[float]:
        payload = {
            "query": query_text,
            "documents": [
                {"docno": doc.docno, "title": doc.title, "text": doc.text} for doc in docs
            ],
        }
        body = wire.post_json_with_retries(self.url, payload, timeout=self.timeout)
        scores = body.get("scores")
        if not isinstance(scores, list) or len(scores) != len(docs):
            raise RerankError(
                f"scoring service returned {len(scores) if isinstance(scores, list) else 'no'} "
                f"scores for {len(docs)} documents"
            )
        return [float(s) for s in scores]


def rerank(
    scorer: Scorer,
    ranked: RankedList,
    depth: int,
    docs: Mapping[str, Document],
) -> RankedList:
    """Rescore and resort the first min(depth, len) entries; the rest are dropped.

    Any scorer failure fails the whole list; there are no partial results.
    """
    if depth < 1:
        raise ValueError("depth must be >= 1")
    head = ranked.entries[:depth]
    documents = []
    for entry in head:
        if entry.docno not in docs:
            raise RerankError(f"docno {entry.docno!r} missing from document store")
        documents.append(docs[entry.docno])
    try:
        scores = scorer.score_all(ranked.query_text, documents)
    except RerankError:
        raise
    except (TransportError, ConfigurationError, ValueError, KeyError) as exc:
        raise RerankError(f"scorer failed: {exc}") from exc
    if len(scores) != len(documents):
        raise RerankError(f"scorer returned {len(scores)} scores for {len(documents)} documents")
    pairs = [(doc.docno, float(score)) for doc, score in zip(documents, scores)]
    return RankedList.from_scores(ranked.query_text, pairs)


@dataclass(frozen=True)
class LexicalSearch:
    """BM25 search stage; depth is how deep the stage retrieves."""

    k1: float = DEFAULT_K1
    b: float = DEFAULT_B
    depth: int = DEFAULT_SEARCH_DEPTH


@dataclass(frozen=True)
class Cutoff:
    """Rank cutoff stage: keep the top k entries."""

    k: int


@dataclass(frozen=True)
class Reranker:
    """Rerank stage over the top `depth` entries of the incoming list."""

    scorer: Scorer
    depth: int = DEFAULT_RERANK_DEPTH


@dataclass(frozen=True)
class DenseSearch:
    """Brute-force dense search stage over the pipeline's embedding store."""

    depth: int = DEFAULT_SEARCH_DEPTH


Stage = LexicalSearch | Cutoff | Reranker | DenseSearch

_SEARCH_STAGES = (LexicalSearch, DenseSearch)


@dataclass(frozen=True, eq=False)
class Pipeline:
    """Ordered retrieval stages plus the resources they draw on.

    ``context_k`` is how many top documents enter the reasoning context; the
    full final list (to the QPP depth) is what predictors see.
    """

    stages: tuple[Stage, ...]
    context_k: int = 3
    index: LexicalIndex | None = None
    store: EmbeddingStore | None = None
    embedder: Embedder | None = None
    docs: Mapping[str, Document] = field(default_factory=dict)

    def __post_init__(self):
        if not self.stages:
            raise ValueError("pipeline needs at least one stage")
        first, rest = self.stages[0], self.stages[1:]
        if not isinstance(first, _SEARCH_STAGES):
            raise ValueError("first pipeline stage must be a search stage")
        for stage in rest:
            if isinstance(stage, _SEARCH_STAGES):
                raise ValueError("search stages are only allowed first")
            if isinstance(stage, Cutoff) and stage.k < 1:
                raise ValueError("cutoff k must be >= 1")
            if isinstance(stage, Reranker) and stage.depth < 1:
                raise ValueError("reranker depth must be >= 1")
        if first.depth < 1:
            raise ValueError("search depth must be >= 1")
        if isinstance(first, LexicalSearch) and self.index is None:
            raise ValueError("lexical pipeline requires an index")
        if isinstance(first, DenseSearch) and (self.store is None or self.embedder is None):
            raise ValueError("dense pipeline requires an embedding store and an embedder")
        if self.context_k < 1:
            raise ValueError("context_k must be >= 1")
        if self.context_k > self.output_depth:
            raise ValueError(
                f"context_k {self.context_k} exceeds final stage depth {self.output_depth}"
            )
        if not self.docs:
            docs: Mapping[str, Document] = self.index.doc_store if self.index else {}
            object.__setattr__(self, "docs", docs)

    @property
    def output_depth(self) -> int:
        """Upper bound on the length of the final stage's output."""
        depth = self.stages[0].depth
        for stage in self.stages[1:]:
            if isinstance(stage, Cutoff):
                depth = min(depth, stage.k)
            elif isinstance(stage, Reranker):
                depth = min(depth, stage.depth)
        return depth

    @property
    def retriever_kind(self) -> RetrieverKind:
        kind = (
            RetrieverKind.DENSE
            if isinstance(self.stages[0], DenseSearch)
            else RetrieverKind.LEXICAL
        )
        for stage in self.stages[1:]:
            if isinstance(stage, Reranker):
                kind = RetrieverKind.RERANKED
        return kind


def run_pipeline(pipeline: Pipeline, query: str, query_vec=None) -> RankedList:
    """Apply stages left to right; stage failures carry the stage index.

    ``query_vec`` lets callers that already embedded the query (for QPP)
    share the vector with the dense search stage.
    """
    ranked: RankedList | None = None
    for stage_index, stage in enumerate(pipeline.stages):
        try:
            if isinstance(stage, LexicalSearch):
                ranked = search_lexical(pipeline.index, query, stage.depth, stage.k1, stage.b)
            elif isinstance(stage, DenseSearch):
                vec = query_vec if query_vec is not None else embed_query(pipeline.embedder, query)
                ranked = search_dense(pipeline.store, vec, stage.depth)
                ranked = RankedList(query, ranked.entries)
            elif isinstance(stage, Cutoff):
                ranked = ranked.top(stage.k)
            elif isinstance(stage, Reranker):
                ranked = rerank(stage.scorer, ranked, stage.depth, pipeline.docs)
            else:
                raise ValueError(f"unknown stage type {type(stage).__name__}")
        except PipelineError:
            raise
        except Exception as exc:
            raise PipelineError(stage_index, str(exc)) from exc
    return ranked


def preset_stages(
    name: str,
    scorer: Scorer | None = None,
    search_depth: int = DEFAULT_SEARCH_DEPTH,
) -> tuple[Stage, ...]:
    """Stages for the named preset: lexical, lexical%20>>rerank, or dense."""
    if name == "lexical":
        return (LexicalSearch(depth=search_depth),)
    if name in ("rerank", "lexical%20>>rerank"):
        if scorer is None:
            raise ConfigurationError(f"preset {name!r} requires a scorer")
        return (
            LexicalSearch(depth=DEFAULT_RERANK_DEPTH),
            Cutoff(DEFAULT_RERANK_DEPTH),
            Reranker(scorer, DEFAULT_RERANK_DEPTH),
        )
    if name == "dense":
        return (DenseSearch(depth=search_depth),)
    raise ConfigurationError(f"unknown pipeline preset {name!r}")


def read_vector_table(path) -> tuple[int, dict[str, np.ndarray]]:
    """Parse the TSV vector format: header `dim=<D>`, then `key<TAB>v1,v2,...`.

    Dimension mismatches and malformed lines are rejected with the offending
    line number.
    """
    with open(path, "r", encoding="utf-8") as handle:
        lines = handle.read().splitlines()
    if not lines or not lines[0].startswith("dim="):
        raise IngestError(f"{path}: line 1: expected a 'dim=<D>' header")
    try:
        dim = int(lines[0][4:])
    except ValueError:
        raise IngestError(f"{path}: line 1: malformed dimension {lines[0][4:]!r}") from None
    if dim < 1:
        raise IngestError(f"{path}: line 1: dimension must be >= 1")
    table: dict[str, np.ndarray] = {}
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        key, sep, payload = line.partition("\t")
        if not sep or not key:
            raise IngestError(f"{path}: line {lineno}: expected key<TAB>values")
        if key in table:
            raise IngestError(f"{path}: line {lineno}: duplicate key {key!r}")
        try:
            values = [float(part) for part in payload.split(",")]
        except ValueError:
            raise IngestError(f"{path}: line {lineno}: non-numeric vector component") from None
        if len(values) != dim:
            raise IngestError(
                f"{path}: line {lineno}: vector has {len(values)} components, expected {dim}"
            )
        vec = np.asarray(values, dtype=np.float64)
        if not np.all(np.isfinite(vec)):
            raise IngestError(f"{path}: line {lineno}: non-finite vector component")
        table[key] = vec
    return dim, table


def read_embeddings_tsv(path) -> EmbeddingStore:
    """Load document embeddings from the TSV vector format."""
    dim, table = read_vector_table(path)
    return EmbeddingStore(dim=dim, doc_vectors=table)
