"""Post-retrieval query performance predictors and z-score normalization.

All predictors are pure functions over immutable inputs.  Which predictors
apply depends on the retriever kind: score dispersion works everywhere,
the top-score predictor needs neural (reranked or dense) scores, and the
embedding-based predictors need a dense retriever with an embedding store.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import MutableMapping, Sequence

import numpy as np

from .errors import PredictorError, PredictorInputError, PredictorUndefined, QppWarning
from .types import EmbeddingStore, RankedList, RetrieverKind, as_float_vector

NQC = "nqc"
MAX_SCORE = "max_score"
DENSE_QPP = "dense_qpp"
A_PAIR_RATIO = "a_pair_ratio"

PREDICTOR_ORDER = (NQC, MAX_SCORE, DENSE_QPP, A_PAIR_RATIO)

APPLICABLE_PREDICTORS = {
    RetrieverKind.LEXICAL: (NQC,),
    RetrieverKind.RERANKED: (NQC, MAX_SCORE),
    RetrieverKind.DENSE: (NQC, MAX_SCORE, DENSE_QPP, A_PAIR_RATIO),
}


@dataclass(frozen=True)
class PredictorConfig:
    """Depths and the shared clamp constant for all predictors."""

    nqc_depth: int = 100
    apr_head: int = 5
    apr_tail: int = 5
    apr_depth: int = 50
    dense_qpp_k: int = 3
    epsilon: float = 1e-9

    def __post_init__(self):
        for name in ("nqc_depth", "apr_head", "apr_tail", "apr_depth", "dense_qpp_k"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.apr_head + self.apr_tail > self.apr_depth:
            raise ValueError("apr_head + apr_tail must not exceed apr_depth")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")


def nqc(ranked: RankedList, depth: int) -> float:
    """Population standard deviation of the top min(depth, len) scores."""
    if not ranked.entries:
        raise PredictorUndefined("nqc is undefined on an empty list")
    if depth < 1:
        raise ValueError("depth must be >= 1")
    prefix = np.asarray(ranked.scores[:depth], dtype=np.float64)
    return float(np.std(prefix))


def max_score(ranked: RankedList) -> float:
    """Score of the rank-1 document."""
    if not ranked.entries:
        raise PredictorUndefined("max_score is undefined on an empty list")
    return ranked.entries[0].score


def _coherence(vectors: np.ndarray) -> float:
    """Mean pairwise cosine over unordered pairs; a singleton group is 1.0.

    Zero-norm vectors contribute cosine 0 to their pairs.
    """
    count = vectors.shape[0]
    if count == 1:
        return 1.0
    norms = np.linalg.norm(vectors, axis=1)
    safe = np.where(norms == 0.0, 1.0, norms)
    unit = vectors / safe[:, None]
    unit[norms == 0.0] = 0.0
    grid = unit @ unit.T
    pair_sum = (grid.sum() - np.trace(grid)) / 2.0
    return float(pair_sum / (count * (count - 1) / 2.0))


def _lookup_vectors(docnos: Sequence[str], store: EmbeddingStore) -> np.ndarray:
    rows = []
    for docno in docnos:
        if docno not in store:
            raise PredictorInputError(f"no embedding for docno {docno!r}")
        rows.append(store.vector(docno))
    return np.stack(rows)


def a_pair_ratio(ranked: RankedList, store: EmbeddingStore, cfg: PredictorConfig) -> float:
    """Head-to-tail pairwise coherence ratio over the top-`apr_depth` view.

    Head is the first `apr_head` documents, tail the last `apr_tail` of the
    view.  Short lists fall back to a half split and the result is flagged
    degraded; a tail coherence below epsilon clamps the denominator.
    """
    if len(ranked) < 2:
        raise PredictorUndefined("a_pair_ratio needs at least two documents")
    view = ranked.docnos[: cfg.apr_depth]
    if len(view) < cfg.apr_head + cfg.apr_tail:
        split = math.ceil(len(view) / 2)
        warnings.warn(
            f"a_pair_ratio degraded: {len(view)} documents < "
            f"head {cfg.apr_head} + tail {cfg.apr_tail}; splitting {split}/{len(view) - split}",
            QppWarning,
        )
        head, tail = view[:split], view[split:]
    else:
        head, tail = view[: cfg.apr_head], view[-cfg.apr_tail :]
    head_coherence = _coherence(_lookup_vectors(head, store))
    tail_coherence = _coherence(_lookup_vectors(tail, store))
    if tail_coherence < cfg.epsilon:
        warnings.warn(
            f"a_pair_ratio tail coherence {tail_coherence:.3g} clamped to epsilon",
            QppWarning,
        )
    return float(head_coherence / max(tail_coherence, cfg.epsilon))


def dense_qpp(
    query_vec: Sequence[float],
    ranked: RankedList,
    store: EmbeddingStore,
    cfg: PredictorConfig,
) -> float:
    """Concentration of the query and top-k document embeddings.

    side is the largest per-dimension extent of the point set; the result is
    -ln(side + epsilon), a fixed-dimension monotone transform of the minimal
    enclosing hypercube volume, so higher means tighter concentration.
    """
    if not ranked.entries:
        raise PredictorUndefined("dense_qpp is undefined on an empty list")
    try:
        query = as_float_vector(query_vec, dim=store.dim)
    except ValueError as exc:
        raise PredictorInputError(str(exc)) from exc
    doc_vectors = _lookup_vectors(ranked.docnos[: cfg.dense_qpp_k], store)
    points = np.vstack([query[None, :], doc_vectors])
    side = float(np.max(points.max(axis=0) - points.min(axis=0)))
    return float(-math.log(side + cfg.epsilon))


def zscore(values: Sequence[float]) -> list[float]:
    """Elementwise (x - mean) / population-std; all zeros when the std is 0."""
    if len(values) < 1:
        raise ValueError("zscore needs at least one value")
    arr = np.asarray(values, dtype=np.float64)
    sigma = float(np.std(arr))
    if sigma == 0.0:
        return [0.0] * len(values)
    mu = float(np.mean(arr))
    return [float((x - mu) / sigma) for x in arr]


def estimate_all(
    ranked: RankedList,
    cfg: PredictorConfig,
    kind: RetrieverKind,
    query_vec: Sequence[float] | None = None,
    store: EmbeddingStore | None = None,
    errors: MutableMapping[str, str] | None = None,
) -> dict[str, float]:
    """Run every predictor applicable to the retriever kind.

    Inapplicable predictors are absent from the result, not zero.  A failing
    predictor is recorded in `errors` under its name (and warned about);
    the others are still computed.
    """
    if not ranked.entries:
        raise PredictorUndefined("cannot estimate predictors on an empty list")
    applicable = APPLICABLE_PREDICTORS[kind]
    estimates: dict[str, float] = {}

    def attempt(name, compute):
        try:
            estimates[name] = compute()
        except PredictorError as exc:
            if errors is not None:
                errors[name] = str(exc)
            warnings.warn(f"predictor {name} failed: {exc}", QppWarning)

    attempt(NQC, lambda: nqc(ranked, cfg.nqc_depth))
    if MAX_SCORE in applicable:
        attempt(MAX_SCORE, lambda: max_score(ranked))
    if DENSE_QPP in applicable and store is not None and query_vec is not None:
        attempt(DENSE_QPP, lambda: dense_qpp(query_vec, ranked, store, cfg))
    if A_PAIR_RATIO in applicable and store is not None and len(ranked) >= 2:
        attempt(A_PAIR_RATIO, lambda: a_pair_ratio(ranked, store, cfg))
    return estimates
