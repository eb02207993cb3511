"""Search-enhanced reasoning episodes with query performance prediction.

A library and CLI that drives reasoning-retrieval episodes against pluggable
retrieval pipelines (BM25, rank cutoffs, reranking, dense retrieval),
estimates the quality of every intermediate retrieval with post-retrieval
predictors, and computes answer-quality and correlation analyses over runs.
"""

from .agent import (
    CompletionRequest,
    CompletionResult,
    EpisodeBudget,
    format_information,
    parse_model_output,
    reconstruct_transcript,
    render_prompt,
    run_episode,
)
from .backends import (
    HttpCompletionBackend,
    RuleBasedReasoner,
    ScriptedBackend,
    rule_based_reasoner,
)
from .errors import AgenticQppError, ConfigurationError, IngestError
from .evaluation import (
    RunAnalysis,
    analyze_run,
    evaluate_trace,
    exact_match,
    normalize_answer,
    repetition_report,
    spearman,
    token_f1,
)
from .qpp import PredictorConfig, a_pair_ratio, dense_qpp, estimate_all, max_score, nqc, zscore
from .retrieval import (
    Cutoff,
    DenseSearch,
    LexicalSearch,
    Pipeline,
    Reranker,
    build_lexical_index,
    embed_query,
    rerank,
    run_pipeline,
    search_dense,
    search_lexical,
    tokenize,
)
from .types import (
    Document,
    EmbeddingStore,
    EvalRecord,
    GoldAnswers,
    IterationRecord,
    RankedList,
    ReasoningTrace,
    RetrieverKind,
    ScoredDoc,
    Termination,
    validate_ranked_list,
)

__version__ = "0.1.0"
