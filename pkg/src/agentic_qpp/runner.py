"""Batch orchestration: assemble resources from a RunConfig and run every episode.

Episodes fan out over a bounded worker pool; results are sorted by question
id before the single final write, so the worker count never changes the bytes
on disk.  Deterministic backends (scripted, rule-based) log timing_ms as 0 to
keep re-runs byte-identical; the HTTP backend logs wall-clock time.
"""

from __future__ import annotations

import json
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Callable

from .agent import run_episode
from .backends import (
    HttpCompletionBackend,
    RuleBasedReasoner,
    ScriptedBackend,
    load_script,
)
from .config import PipelineSpec, RunConfig
from .errors import ConfigurationError, IngestError
from .evaluation import evaluate_trace
from .retrieval import (
    CosineScorer,
    Cutoff,
    DenseSearch,
    HttpEmbedder,
    HttpScorer,
    LexicalSearch,
    LookupEmbedder,
    Pipeline,
    Reranker,
    TableScorer,
    build_lexical_index,
    preset_stages,
    read_embeddings_tsv,
    read_vector_table,
)
from .serialize import QaItem, TraceRow, read_corpus, read_qa, write_eval_log, write_trace_log


def _load_table_scorer(path: Path) -> TableScorer:
    try:
        with open(path, "r", encoding="utf-8") as handle:
            raw = json.load(handle)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigurationError(f"scorer table {path}: {exc}") from None
    table = {}
    for query, scores in raw.items():
        if not isinstance(scores, dict):
            raise ConfigurationError(f"scorer table {path}: entry {query!r} is not an object")
        for docno, score in scores.items():
            if query == "*":
                table[docno] = float(score)
            else:
                table[(query, docno)] = float(score)
    return TableScorer(table)


def build_pipeline(config: RunConfig) -> Pipeline:
    """Materialize the configured pipeline: indices, stores, embedder, scorer."""
    documents = read_corpus(config.corpus_path)
    index = build_lexical_index(documents)

    store = None
    if config.embeddings_path is not None:
        store = read_embeddings_tsv(config.embeddings_path)

    embedder = None
    if config.embedder is not None:
        if config.embedder.type == "lookup":
            dim, table = read_vector_table(config.embedder.path)
            embedder = LookupEmbedder(table, dim=dim)
        else:
            dim = config.embedder.dim or (store.dim if store else None)
            if dim is None:
                raise ConfigurationError("[embedder]: http embedder needs a dim")
            embedder = HttpEmbedder(config.embedder.url, dim=dim)
    if store is not None and embedder is not None and embedder.dim != store.dim:
        raise ConfigurationError(
            f"embedder dim {embedder.dim} != embedding store dim {store.dim}"
        )

    scorer = None
    spec = config.pipeline
    if spec.scorer == "http":
        scorer = HttpScorer(spec.scorer_url)
    elif spec.scorer == "cosine":
        scorer = CosineScorer(store, embedder)
    elif spec.scorer == "table":
        scorer = _load_table_scorer(spec.scorer_table)

    stages = _build_stages(spec, scorer)
    try:
        return Pipeline(
            stages=stages,
            context_k=config.context_k,
            index=index,
            store=store,
            embedder=embedder,
            docs=index.doc_store,
        )
    except ValueError as exc:
        raise ConfigurationError(f"invalid pipeline: {exc}") from None


def _build_stages(spec: PipelineSpec, scorer):
    if spec.preset is not None:
        return preset_stages(spec.preset, scorer=scorer, search_depth=spec.search_depth)
    stages = []
    for stage in spec.stages:
        if stage.type == "lexical":
            stages.append(
                LexicalSearch(
                    k1=stage.k1 if stage.k1 is not None else 1.2,
                    b=stage.b if stage.b is not None else 0.75,
                    depth=stage.depth or spec.search_depth,
                )
            )
        elif stage.type == "dense":
            stages.append(DenseSearch(depth=stage.depth or spec.search_depth))
        elif stage.type == "cutoff":
            if stage.k is None:
                raise ConfigurationError("[pipeline]: cutoff stage requires k")
            stages.append(Cutoff(k=stage.k))
        elif stage.type == "rerank":
            if scorer is None:
                raise ConfigurationError("[pipeline]: rerank stage requires a scorer")
            stages.append(Reranker(scorer=scorer, depth=stage.depth or 20))
    return tuple(stages)


def make_backend_factory(config: RunConfig) -> Callable[[QaItem], object]:
    """Per-episode completion backend builder.

    Scripted backends replay the script from the first step for every
    episode; rule-based backends get the episode's own gold answers and
    reformulations expanded from the configured templates.
    """
    spec = config.backend
    if spec.type == "http":
        shared = HttpCompletionBackend(spec.url)
        return lambda item: shared
    if spec.type == "scripted":
        steps = load_script(spec.path)
        return lambda item: ScriptedBackend(steps)

    templates = spec.reformulations

    def build_rule_backend(item: QaItem) -> RuleBasedReasoner:
        reformulations = [t.replace("{question}", item.question) for t in templates]
        return RuleBasedReasoner(item.gold.answers, reformulations)

    return build_rule_backend


def run_batch(config: RunConfig) -> tuple[Path, Path]:
    """Run every QA item through an episode; write traces.jsonl and evals.jsonl."""
    pipeline = build_pipeline(config)
    items = read_qa(config.qa_path)
    if not items:
        raise IngestError(f"{config.qa_path}: no QA items")
    backend_for = make_backend_factory(config)
    record_timing = config.backend.type == "http"

    def one_episode(item: QaItem) -> tuple[TraceRow, object]:
        backend = backend_for(item)
        started = time.perf_counter()
        trace = run_episode(
            backend,
            pipeline,
            config.predictors,
            item.question_id,
            item.question,
            config.budget,
        )
        elapsed_ms = int((time.perf_counter() - started) * 1000) if record_timing else 0
        evaluation = evaluate_trace(trace, item.gold)
        row = TraceRow(trace=trace, em=evaluation.em, f1=evaluation.f1, timing_ms=elapsed_ms)
        return row, evaluation

    if config.worker_count == 1:
        results = [one_episode(item) for item in items]
    else:
        with ThreadPoolExecutor(max_workers=config.worker_count) as pool:
            results = list(pool.map(one_episode, items))

    results.sort(key=lambda pair: pair[0].trace.question_id)
    config.output_dir.mkdir(parents=True, exist_ok=True)
    traces_path = config.output_dir / "traces.jsonl"
    evals_path = config.output_dir / "evals.jsonl"
    write_trace_log(traces_path, [row for row, _ in results])
    write_eval_log(evals_path, [evaluation for _, evaluation in results])
    return traces_path, evals_path
