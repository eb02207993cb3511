"""Answer-quality metrics, rank statistics, and aggregate run analyses."""

from __future__ import annotations

import re
import string
from collections import Counter
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .qpp import PREDICTOR_ORDER, zscore
from .types import EvalRecord, GoldAnswers, ReasoningTrace

_PUNCTUATION = frozenset(string.punctuation)
_ARTICLES_RE = re.compile(r"\b(a|an|the)\b")


def normalize_answer(text: str) -> str:
    """Lowercase, drop punctuation, drop standalone articles, collapse whitespace."""
    text = text.lower()
    text = "".join(ch for ch in text if ch not in _PUNCTUATION)
    text = _ARTICLES_RE.sub(" ", text)
    return " ".join(text.split())


def _gold_strings(golds: GoldAnswers | Sequence[str]) -> tuple[str, ...]:
    answers = tuple(golds.answers if isinstance(golds, GoldAnswers) else golds)
    if not answers:
        raise ValueError("gold answers must be non-empty")
    return answers


def exact_match(pred: str, golds: GoldAnswers | Sequence[str]) -> int:
    """1 iff the normalized prediction equals some normalized gold answer."""
    normalized = normalize_answer(pred)
    return int(any(normalized == normalize_answer(gold) for gold in _gold_strings(golds)))


def _f1_single(pred_tokens: list[str], gold_tokens: list[str]) -> float:
    if not pred_tokens and not gold_tokens:
        return 1.0
    overlap = sum((Counter(pred_tokens) & Counter(gold_tokens)).values())
    if overlap == 0:
        return 0.0
    precision = overlap / len(pred_tokens)
    recall = overlap / len(gold_tokens)
    return 2 * precision * recall / (precision + recall)


def token_f1(pred: str, golds: GoldAnswers | Sequence[str]) -> float:
    """Best token-multiset F1 of the prediction over all gold answers."""
    pred_tokens = normalize_answer(pred).split()
    return max(
        _f1_single(pred_tokens, normalize_answer(gold).split())
        for gold in _gold_strings(golds)
    )


def _average_ranks(values: Sequence[float]) -> np.ndarray:
    """Ranks 1..n with ties assigned the average of their positions."""
    arr = np.asarray(values, dtype=np.float64)
    order = np.argsort(arr, kind="stable")
    ranks = np.empty(len(arr), dtype=np.float64)
    start = 0
    ordered = arr[order]
    while start < len(arr):
        end = start
        while end + 1 < len(arr) and ordered[end + 1] == ordered[start]:
            end += 1
        ranks[order[start : end + 1]] = (start + end + 2) / 2.0
        start = end + 1
    return ranks


def spearman(xs: Sequence[float], ys: Sequence[float]) -> float | None:
    """Rank correlation with average ranks for ties.

    Returns None (undefined, not 0) when either input is constant.
    """
    if len(xs) != len(ys):
        raise ValueError(f"length mismatch: {len(xs)} vs {len(ys)}")
    if len(xs) < 2:
        raise ValueError("spearman needs at least two pairs")
    rank_x = _average_ranks(xs)
    rank_y = _average_ranks(ys)
    dx = rank_x - rank_x.mean()
    dy = rank_y - rank_y.mean()
    sum_xx = float(np.sum(dx * dx))
    sum_yy = float(np.sum(dy * dy))
    if sum_xx == 0.0 or sum_yy == 0.0:
        return None
    rho = float(np.sum(dx * dy)) / float(np.sqrt(sum_xx * sum_yy))
    return max(-1.0, min(1.0, rho))


def _normalize_query(query: str) -> str:
    return " ".join(query.split()).casefold()


def repetition_report(traces: Sequence[ReasoningTrace]) -> dict:
    """Traces whose iterations repeat a generated query (whitespace/case folded)."""
    repeated_ids = []
    for trace in traces:
        queries = [_normalize_query(record.generated_query) for record in trace.iterations]
        if len(queries) != len(set(queries)):
            repeated_ids.append(trace.question_id)
    return {"count": len(repeated_ids), "question_ids": sorted(repeated_ids)}


def evaluate_trace(trace: ReasoningTrace, gold: GoldAnswers) -> EvalRecord:
    """EM/F1 of the trace's answer (empty when unanswered) plus first-iteration QPP."""
    answer = trace.final_answer or ""
    em = exact_match(answer, gold)
    f1 = token_f1(answer, gold)
    first = dict(trace.iterations[0].qpp_estimates) if trace.iterations else {}
    return EvalRecord(
        question_id=trace.question_id,
        em=em,
        f1=f1,
        iter_count=trace.iter_count,
        first_iter_qpp=first,
    )


@dataclass(frozen=True)
class RunAnalysis:
    """Aggregates over one run: answer quality, iteration behavior, QPP trends."""

    question_count: int
    mean_em: float
    mean_f1: float
    mean_iter: float
    iter_histogram: Mapping[int, tuple[int, int]]
    rho_iter_f1: float | None
    qpp_by_iteration: Mapping[str, Mapping[int, float]]
    qpp_iteration_counts: Mapping[str, Mapping[int, int]]
    rho_first_qpp_f1: Mapping[str, float | None]
    repetition: Mapping

    def __post_init__(self):
        for value in (self.mean_em, self.mean_f1):
            if not 0.0 <= value <= 1.0:
                raise ValueError("mean EM/F1 must lie in [0, 1]")
        correlations = [self.rho_iter_f1, *self.rho_first_qpp_f1.values()]
        for rho in correlations:
            if rho is not None and not -1.0 <= rho <= 1.0:
                raise ValueError("correlations must lie in [-1, 1]")


def analyze_run(
    traces: Sequence[ReasoningTrace],
    evals: Sequence[EvalRecord] | None = None,
    gold: Mapping[str, GoldAnswers] | None = None,
) -> RunAnalysis:
    """Compute every RunAnalysis field for one run.

    Pass precomputed eval records or a gold mapping to derive them; a trace
    without a gold entry is an error naming the question id.  First-iteration
    QPP correlations use only the estimates of the first generated query;
    per-iteration means z-score each predictor's pooled estimates first.
    """
    if not traces:
        raise ValueError("cannot analyze an empty run")
    if evals is None:
        if gold is None:
            raise ValueError("analyze_run needs eval records or gold answers")
        evals = []
        for trace in traces:
            if trace.question_id not in gold:
                raise ValueError(f"no gold answers for question {trace.question_id!r}")
            evals.append(evaluate_trace(trace, gold[trace.question_id]))
    by_id = {record.question_id: record for record in evals}
    missing = [t.question_id for t in traces if t.question_id not in by_id]
    if missing:
        raise ValueError(f"no eval record for question {missing[0]!r}")
    records = [by_id[trace.question_id] for trace in traces]

    count = len(records)
    mean_em = sum(r.em for r in records) / count
    mean_f1 = sum(r.f1 for r in records) / count
    mean_iter = sum(r.iter_count for r in records) / count

    histogram: dict[int, tuple[int, int]] = {}
    for record in records:
        correct, incorrect = histogram.get(record.iter_count, (0, 0))
        if record.em == 1:
            correct += 1
        else:
            incorrect += 1
        histogram[record.iter_count] = (correct, incorrect)

    iters = [float(r.iter_count) for r in records]
    f1s = [r.f1 for r in records]
    rho_iter_f1 = spearman(iters, f1s) if count >= 2 else None

    pooled: dict[str, list[tuple[int, float]]] = {}
    for trace in traces:
        for record in trace.iterations:
            for name, value in record.qpp_estimates.items():
                pooled.setdefault(name, []).append((record.index, value))
    qpp_by_iteration: dict[str, dict[int, float]] = {}
    qpp_counts: dict[str, dict[int, int]] = {}
    for name in sorted(pooled, key=_predictor_sort_key):
        pairs = pooled[name]
        normalized = zscore([value for _, value in pairs])
        sums: dict[int, float] = {}
        counts: dict[int, int] = {}
        for (iteration, _), z in zip(pairs, normalized):
            sums[iteration] = sums.get(iteration, 0.0) + z
            counts[iteration] = counts.get(iteration, 0) + 1
        qpp_by_iteration[name] = {i: sums[i] / counts[i] for i in sorted(sums)}
        qpp_counts[name] = {i: counts[i] for i in sorted(counts)}

    rho_first: dict[str, float | None] = {}
    first_names = sorted(
        {name for r in records for name in r.first_iter_qpp}, key=_predictor_sort_key
    )
    for name in first_names:
        pairs = [
            (r.first_iter_qpp[name], r.f1) for r in records if name in r.first_iter_qpp
        ]
        if len(pairs) >= 2:
            rho_first[name] = spearman([p for p, _ in pairs], [f for _, f in pairs])
        else:
            rho_first[name] = None

    repetition = dict(repetition_report(traces))
    repetition["total"] = count

    return RunAnalysis(
        question_count=count,
        mean_em=mean_em,
        mean_f1=mean_f1,
        mean_iter=mean_iter,
        iter_histogram=histogram,
        rho_iter_f1=rho_iter_f1,
        qpp_by_iteration=qpp_by_iteration,
        qpp_iteration_counts=qpp_counts,
        rho_first_qpp_f1=rho_first,
        repetition=repetition,
    )


def _predictor_sort_key(name: str):
    try:
        return (PREDICTOR_ORDER.index(name), name)
    except ValueError:
        return (len(PREDICTOR_ORDER), name)
