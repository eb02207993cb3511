"""Core domain types: documents, ranked lists, embedding stores, reasoning traces.

Everything here is immutable after construction and safe to share across
workers.  Constructors enforce the structural invariants; richer validation
of ranked lists is available as :func:`validate_ranked_list`, which reports
violations as values instead of raising.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np


class Termination(str, enum.Enum):
    """How a reasoning episode ended."""

    ANSWERED = "answered"
    BUDGET_EXHAUSTED = "budget_exhausted"
    MALFORMED_OUTPUT = "malformed_output"


class RetrieverKind(str, enum.Enum):
    """Score semantics of a pipeline's final scoring stage.

    Used to decide which predictors apply: lexical scores support only
    score-dispersion predictors, neural (reranked) scores additionally
    support the top-score predictor, and dense retrieval adds the
    embedding-based predictors.
    """

    LEXICAL = "lexical"
    RERANKED = "reranked"
    DENSE = "dense"


@dataclass(frozen=True)
class Document:
    """One corpus passage."""

    docno: str
    title: str
    text: str

    def __post_init__(self):
        if not self.docno:
            raise ValueError("document docno must be non-empty")
        if not self.text:
            raise ValueError(f"document {self.docno!r} has empty text")


@dataclass(frozen=True)
class ScoredDoc:
    """One entry of a ranked list."""

    docno: str
    rank: int
    score: float


@dataclass(frozen=True)
class RankedList:
    """Scored, rank-ordered retrieval result for one query.

    Build lists with :meth:`from_scores`, which sorts by descending score
    with ties broken by ascending docno, so list order is deterministic.
    """

    query_text: str
    entries: tuple[ScoredDoc, ...] = ()

    @classmethod
    def from_scores(cls, query_text: str, scored: Iterable[tuple[str, float]]) -> "RankedList":
        ordered = sorted(scored, key=lambda item: (-item[1], item[0]))
        entries = tuple(
            ScoredDoc(docno, rank, float(score))
            for rank, (docno, score) in enumerate(ordered, start=1)
        )
        return cls(query_text=query_text, entries=entries)

    def top(self, k: int) -> "RankedList":
        """Prefix of the list; ranks are already 1..k so no reassignment."""
        return RankedList(self.query_text, self.entries[: max(k, 0)])

    @property
    def docnos(self) -> tuple[str, ...]:
        return tuple(entry.docno for entry in self.entries)

    @property
    def scores(self) -> tuple[float, ...]:
        return tuple(entry.score for entry in self.entries)

    def __len__(self) -> int:
        return len(self.entries)


def validate_ranked_list(ranked: RankedList) -> str | None:
    """Return a description of the first violated invariant, or None if valid.

    Violations are values, not faults: checks rank contiguity (1..n), score
    monotonicity, and docno distinctness, in that order per entry.
    """
    seen: set[str] = set()
    for position, entry in enumerate(ranked.entries):
        expected_rank = position + 1
        if entry.rank != expected_rank:
            return f"rank gap at position {expected_rank} (expected {expected_rank}, got {entry.rank})"
        if position > 0 and entry.score > ranked.entries[position - 1].score:
            return f"score inversion at rank {entry.rank}"
        if entry.docno in seen:
            return f"duplicate docno {entry.docno}"
        seen.add(entry.docno)
    return None


@dataclass(frozen=True, eq=False)
class EmbeddingStore:
    """Fixed-dimension vectors for documents; query vectors come from embedders."""

    dim: int
    doc_vectors: Mapping[str, np.ndarray]

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError("embedding dimension must be >= 1")
        vectors = {}
        for docno, vec in self.doc_vectors.items():
            arr = np.asarray(vec, dtype=np.float64)
            if arr.shape != (self.dim,):
                raise ValueError(
                    f"vector for {docno!r} has length {arr.shape}, expected ({self.dim},)"
                )
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"vector for {docno!r} has non-finite entries")
            vectors[docno] = arr
        object.__setattr__(self, "doc_vectors", vectors)

    def __contains__(self, docno: str) -> bool:
        return docno in self.doc_vectors

    def vector(self, docno: str) -> np.ndarray:
        return self.doc_vectors[docno]


@dataclass(frozen=True)
class IterationRecord:
    """One completed search-retrieval round inside an episode.

    ``raw_text`` and ``information_text`` hold the exact segments appended to
    the transcript, which makes the transcript reconstructible from the trace
    alone (replay property).
    """

    index: int
    think_text: str
    generated_query: str
    context_docs: RankedList
    deep_list: RankedList
    qpp_estimates: Mapping[str, float] = field(default_factory=dict)
    raw_text: str = ""
    information_text: str = ""

    def __post_init__(self):
        if self.index < 1:
            raise ValueError("iteration index must be >= 1")
        prefix = self.deep_list.docnos[: len(self.context_docs)]
        if self.context_docs.docnos != prefix:
            raise ValueError("context_docs must be a prefix of deep_list")
        object.__setattr__(self, "qpp_estimates", dict(self.qpp_estimates))


@dataclass(frozen=True)
class ReasoningTrace:
    """Full record of one reasoning episode.

    ``iter_count`` counts completed search-retrieval rounds; an episode that
    answers without searching has iter_count 0.
    """

    question_id: str
    input_question: str
    iterations: tuple[IterationRecord, ...]
    final_answer: str | None
    termination: Termination
    iter_count: int
    final_raw_text: str | None = None
    note: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "iterations", tuple(self.iterations))
        object.__setattr__(self, "termination", Termination(self.termination))
        if self.iter_count != len(self.iterations):
            raise ValueError(
                f"iter_count {self.iter_count} != {len(self.iterations)} iterations"
            )
        for position, record in enumerate(self.iterations, start=1):
            if record.index != position:
                raise ValueError(f"iteration at position {position} has index {record.index}")
        answered = self.termination is Termination.ANSWERED
        if answered and not (self.final_answer or "").strip():
            raise ValueError("answered trace requires a non-empty final_answer")
        if not answered and self.final_answer is not None:
            raise ValueError(f"termination {self.termination.value} forbids a final_answer")


@dataclass(frozen=True)
class EvalRecord:
    """Per-question answer quality joined with first-iteration QPP estimates."""

    question_id: str
    em: int
    f1: float
    iter_count: int
    first_iter_qpp: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if self.em not in (0, 1):
            raise ValueError("em must be 0 or 1")
        if not (0.0 <= self.f1 <= 1.0) or not math.isfinite(self.f1):
            raise ValueError("f1 must lie in [0, 1]")
        if self.em == 1 and self.f1 != 1.0:
            raise ValueError("exact match implies f1 == 1.0")
        if self.iter_count < 0:
            raise ValueError("iter_count must be >= 0")
        if self.iter_count == 0 and self.first_iter_qpp:
            raise ValueError("first_iter_qpp must be empty when iter_count == 0")
        object.__setattr__(self, "first_iter_qpp", dict(self.first_iter_qpp))


@dataclass(frozen=True)
class GoldAnswers:
    """Ground-truth answer strings for one question."""

    question_id: str
    answers: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "answers", tuple(self.answers))
        if not self.answers:
            raise ValueError(f"question {self.question_id!r} has no gold answers")
        for answer in self.answers:
            if not answer.strip():
                raise ValueError(f"question {self.question_id!r} has a blank gold answer")


def as_float_vector(values: Sequence[float], dim: int | None = None) -> np.ndarray:
    """Coerce to a finite 1-d float64 vector, optionally checking its length."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 1:
        raise ValueError(f"expected a 1-d vector, got shape {arr.shape}")
    if dim is not None and arr.shape != (dim,):
        raise ValueError(f"expected a vector of length {dim}, got {arr.shape[0]}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("vector has non-finite entries")
    return arr
