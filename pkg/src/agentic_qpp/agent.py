"""One reasoning-retrieval episode: prompt, tag protocol, retrieval, QPP, budgets.

The transcript grammar is fixed: the prompt, then for every iteration a
newline, the generation segment (with its closing tag reinstated when the
backend halted on a stop sequence), a newline, and the information block;
a final generation segment ends the episode.  Traces store the exact
appended segments, so the transcript is reconstructible from a trace alone.
"""

from __future__ import annotations

import re
import time
import warnings
from dataclasses import dataclass
from typing import Protocol

from .errors import BackendError, PromptWarning, TransportError
from .qpp import PredictorConfig, estimate_all
from .retrieval import Pipeline, embed_query, run_pipeline
from .types import (
    Document,
    IterationRecord,
    RankedList,
    ReasoningTrace,
    RetrieverKind,
    Termination,
)

PROMPT_TEMPLATE = (
    "Answer the given question. You must conduct reasoning inside <think> and "
    "</think> first every time you get new information. After reasoning, if you "
    "find you lack some knowledge, you can call a search engine by <search> query "
    "</search> and it will return the top searched results between <information> "
    "and </information>. You can search as many times as your want. If you find "
    "no further external knowledge needed, you can directly provide the answer "
    "inside <answer> and </answer>, without detailed illustrations. For example, "
    "<answer> Beijing </answer>.\n\nQuestion: "
)

SEARCH_OPEN, SEARCH_CLOSE = "<search>", "</search>"
ANSWER_OPEN, ANSWER_CLOSE = "<answer>", "</answer>"
STOP_SEQUENCES = (SEARCH_CLOSE, ANSWER_CLOSE)

NO_RESULTS_BLOCK = "<information>No results found.</information>"

MAX_COMPLETION_ATTEMPTS = 3
INITIAL_RETRY_BACKOFF_S = 0.5

_THINK_RE = re.compile(r"<think>(.*?)</think>", re.DOTALL)
_PROTOCOL_TAGS = (
    "<think>", "</think>", SEARCH_OPEN, SEARCH_CLOSE,
    ANSWER_OPEN, ANSWER_CLOSE, "<information>", "</information>",
)


@dataclass(frozen=True)
class CompletionRequest:
    """What the generator sees: the accumulated transcript plus sampling limits."""

    context: str
    stop_sequences: tuple[str, ...]
    max_tokens: int

    def __post_init__(self):
        if not self.context:
            raise ValueError("completion context must be non-empty")
        if self.max_tokens < 1:
            raise ValueError("max_tokens must be >= 1")
        object.__setattr__(self, "stop_sequences", tuple(self.stop_sequences))


@dataclass(frozen=True)
class CompletionResult:
    """Generated text plus why generation halted.

    ``finish_reason`` is one of "stop", "length", "end_of_text"; when it is
    "stop", ``stop_sequence`` names the sequence, which the text excludes.
    """

    text: str
    finish_reason: str
    stop_sequence: str | None = None

    def __post_init__(self):
        if self.finish_reason not in ("stop", "length", "end_of_text"):
            raise ValueError(f"unknown finish_reason {self.finish_reason!r}")
        if self.finish_reason == "stop":
            if not self.stop_sequence:
                raise ValueError("stop finish requires the stop sequence")
            if self.stop_sequence in self.text:
                raise ValueError("text must not contain the stop sequence that halted it")
        elif self.stop_sequence is not None:
            raise ValueError("stop_sequence is only valid with finish_reason 'stop'")


class CompletionBackend(Protocol):
    """Anything that can continue a transcript."""

    def complete(self, request: CompletionRequest) -> CompletionResult: ...


@dataclass(frozen=True)
class SearchAction:
    query: str


@dataclass(frozen=True)
class AnswerAction:
    text: str


@dataclass(frozen=True)
class MalformedAction:
    reason: str


@dataclass(frozen=True)
class ParsedAction:
    """First think block plus the single action a completion is honored for."""

    think_text: str
    action: SearchAction | AnswerAction | MalformedAction


@dataclass(frozen=True)
class EpisodeBudget:
    max_iterations: int = 5
    max_total_tokens: int = 4096

    def __post_init__(self):
        if self.max_iterations < 1 or self.max_total_tokens < 1:
            raise ValueError("budget limits must be >= 1")


def render_prompt(question: str) -> str:
    """Instruction template with the question substituted verbatim after 'Question: '."""
    if not question.strip():
        raise ValueError("question must be non-empty")
    present = [tag for tag in _PROTOCOL_TAGS if tag in question]
    if present:
        warnings.warn(
            f"question contains protocol tags {present}; substituted verbatim",
            PromptWarning,
        )
    return PROMPT_TEMPLATE + question


def parse_model_output(
    text: str,
    finish_reason: str = "end_of_text",
    stop_sequence: str | None = None,
) -> ParsedAction:
    """Extract the think block and the earliest action tag from a completion.

    A tag left open is completed by the end of text only when generation
    halted on that tag's stop sequence; otherwise it is malformed.  Only one
    action per completion is honored (earliest opening tag wins).
    """
    think = _THINK_RE.search(text)
    think_text = think.group(1).strip() if think else ""

    candidates = [
        (text.find(SEARCH_OPEN), SEARCH_OPEN, SEARCH_CLOSE),
        (text.find(ANSWER_OPEN), ANSWER_OPEN, ANSWER_CLOSE),
    ]
    candidates = [c for c in candidates if c[0] >= 0]
    if not candidates:
        return ParsedAction(think_text, MalformedAction("no action tag"))
    position, open_tag, close_tag = min(candidates)

    body_start = position + len(open_tag)
    close_at = text.find(close_tag, body_start)
    if close_at >= 0:
        content = text[body_start:close_at]
    elif finish_reason == "stop" and stop_sequence == close_tag:
        content = text[body_start:]
    else:
        return ParsedAction(think_text, MalformedAction(f"unterminated {open_tag} tag"))

    if open_tag == SEARCH_OPEN:
        query = content.strip()
        if not query:
            return ParsedAction(think_text, MalformedAction("empty search query"))
        return ParsedAction(think_text, SearchAction(query))
    return ParsedAction(think_text, AnswerAction(content.strip()))


def format_information(docs: list[Document]) -> str:
    """Render retrieved documents as a single information block."""
    if not docs:
        return NO_RESULTS_BLOCK
    parts = [
        f'Doc {position}(Title: "{doc.title}") {doc.text}'
        for position, doc in enumerate(docs, start=1)
    ]
    return "<information>" + " ".join(parts) + "</information>"


def _complete_with_retries(
    backend: CompletionBackend,
    request: CompletionRequest,
    sleep=time.sleep,
) -> CompletionResult:
    """Retry transport failures up to 3 attempts with exponential backoff."""
    delay = INITIAL_RETRY_BACKOFF_S
    for attempt in range(1, MAX_COMPLETION_ATTEMPTS + 1):
        try:
            return backend.complete(request)
        except TransportError as exc:
            if attempt == MAX_COMPLETION_ATTEMPTS:
                raise BackendError(
                    f"transport failed after {MAX_COMPLETION_ATTEMPTS} attempts: {exc}"
                ) from exc
            sleep(delay)
            delay *= 2
    raise AssertionError("unreachable")


def run_episode(
    backend: CompletionBackend,
    pipeline: Pipeline,
    qpp_cfg: PredictorConfig,
    question_id: str,
    question: str,
    budget: EpisodeBudget | None = None,
    sleep=time.sleep,
) -> ReasoningTrace:
    """Drive one episode to completion.

    Search actions run the pipeline, compute applicable predictors on the
    deep list, and append the generation segment plus an information block
    built from the top context_k documents.  Answer actions finalize the
    trace; malformed output and budget breaches finalize with empty answers.
    """
    budget = budget or EpisodeBudget()
    transcript = render_prompt(question)
    iterations: list[IterationRecord] = []
    tokens_used = 0
    embed_cache: dict[str, object] = {}

    def finish(termination, answer=None, final_raw=None, note=None) -> ReasoningTrace:
        return ReasoningTrace(
            question_id=question_id,
            input_question=question,
            iterations=tuple(iterations),
            final_answer=answer,
            termination=termination,
            iter_count=len(iterations),
            final_raw_text=final_raw,
            note=note,
        )

    while True:
        remaining_tokens = budget.max_total_tokens - tokens_used
        if remaining_tokens < 1:
            return finish(Termination.BUDGET_EXHAUSTED, note="token budget exhausted")
        request = CompletionRequest(transcript, STOP_SEQUENCES, remaining_tokens)
        try:
            result = _complete_with_retries(backend, request, sleep=sleep)
        except BackendError as exc:
            return finish(Termination.MALFORMED_OUTPUT, note=f"backend failure: {exc}")

        tokens_used += len(result.text.split())
        segment = result.text + (result.stop_sequence if result.finish_reason == "stop" else "")
        parsed = parse_model_output(result.text, result.finish_reason, result.stop_sequence)
        action = parsed.action

        if isinstance(action, AnswerAction):
            answer = action.text.strip()
            if not answer:
                return finish(
                    Termination.MALFORMED_OUTPUT, final_raw=segment, note="empty answer text"
                )
            return finish(Termination.ANSWERED, answer=answer, final_raw=segment)

        if isinstance(action, MalformedAction):
            return finish(Termination.MALFORMED_OUTPUT, final_raw=segment, note=action.reason)

        if len(iterations) >= budget.max_iterations:
            return finish(
                Termination.BUDGET_EXHAUSTED, final_raw=segment, note="iteration budget exhausted"
            )
        if tokens_used > budget.max_total_tokens:
            return finish(
                Termination.BUDGET_EXHAUSTED, final_raw=segment, note="token budget exhausted"
            )

        query = action.query
        query_vec = None
        if pipeline.retriever_kind is RetrieverKind.DENSE:
            if query not in embed_cache:
                embed_cache[query] = embed_query(pipeline.embedder, query)
            query_vec = embed_cache[query]
        deep_list = run_pipeline(pipeline, query, query_vec=query_vec)
        estimates = (
            estimate_all(
                deep_list,
                qpp_cfg,
                pipeline.retriever_kind,
                query_vec=query_vec,
                store=pipeline.store,
            )
            if deep_list.entries
            else {}
        )
        context_list = deep_list.top(pipeline.context_k)
        context_docs = []
        for entry in context_list.entries:
            if entry.docno not in pipeline.docs:
                raise KeyError(f"docno {entry.docno!r} missing from the pipeline document store")
            context_docs.append(pipeline.docs[entry.docno])
        information = format_information(context_docs)
        iterations.append(
            IterationRecord(
                index=len(iterations) + 1,
                think_text=parsed.think_text,
                generated_query=query,
                context_docs=context_list,
                deep_list=deep_list,
                qpp_estimates=estimates,
                raw_text=segment,
                information_text=information,
            )
        )
        transcript += "\n" + segment + "\n" + information


def reconstruct_transcript(trace: ReasoningTrace) -> str:
    """Rebuild the exact transcript an episode produced, from the trace alone."""
    parts = [render_prompt(trace.input_question)]
    for record in trace.iterations:
        parts.append("\n" + record.raw_text + "\n" + record.information_text)
    if trace.final_raw_text is not None:
        parts.append("\n" + trace.final_raw_text)
    return "".join(parts)
