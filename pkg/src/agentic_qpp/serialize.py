"""File formats: corpus and QA JSONL, trace and eval logs, index persistence.

Trace log lines are append-only JSON objects, one per episode, carrying the
full reasoning trace plus its evaluation and timing.  Serialization round-trips
structurally: parsing a written line yields an equal trace.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Iterable, NamedTuple, Sequence

from .errors import IngestError
from .evaluation import normalize_answer
from .retrieval import LexicalIndex
from .types import (
    Document,
    EvalRecord,
    GoldAnswers,
    IterationRecord,
    RankedList,
    ReasoningTrace,
    ScoredDoc,
    Termination,
)

INDEX_FORMAT_VERSION = 1


class QaItem(NamedTuple):
    question_id: str
    question: str
    gold: GoldAnswers


class TraceRow(NamedTuple):
    """One trace log line: the trace joined with its evaluation and timing."""

    trace: ReasoningTrace
    em: int
    f1: float
    timing_ms: int


def _read_jsonl(path) -> Iterable[tuple[int, dict]]:
    with open(path, "r", encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise IngestError(f"{path}: line {lineno}: invalid JSON: {exc}") from None
            if not isinstance(record, dict):
                raise IngestError(f"{path}: line {lineno}: expected a JSON object")
            yield lineno, record


def read_corpus(path) -> list[Document]:
    """Load a JSONL corpus of {docno, title, text} objects."""
    documents = []
    for lineno, record in _read_jsonl(path):
        try:
            documents.append(
                Document(
                    docno=str(record["docno"]),
                    title=str(record.get("title", "")),
                    text=str(record["text"]),
                )
            )
        except KeyError as exc:
            raise IngestError(f"{path}: line {lineno}: missing field {exc.args[0]!r}") from None
        except ValueError as exc:
            raise IngestError(f"{path}: line {lineno}: {exc}") from None
    return documents


def read_qa(path) -> list[QaItem]:
    """Load QA items: JSONL of {"id", "question", "answers": [str, ...]}.

    Rejects answers that normalize to the empty string, since they could
    never be matched.
    """
    items = []
    seen: set[str] = set()
    for lineno, record in _read_jsonl(path):
        try:
            question_id = str(record["id"])
            question = str(record["question"])
            answers = [str(a) for a in record["answers"]]
        except KeyError as exc:
            raise IngestError(f"{path}: line {lineno}: missing field {exc.args[0]!r}") from None
        if question_id in seen:
            raise IngestError(f"{path}: line {lineno}: duplicate question id {question_id!r}")
        seen.add(question_id)
        if not question.strip():
            raise IngestError(f"{path}: line {lineno}: empty question")
        try:
            gold = GoldAnswers(question_id=question_id, answers=tuple(answers))
        except ValueError as exc:
            raise IngestError(f"{path}: line {lineno}: {exc}") from None
        for answer in gold.answers:
            if not normalize_answer(answer):
                raise IngestError(
                    f"{path}: line {lineno}: gold answer {answer!r} normalizes to nothing"
                )
        items.append(QaItem(question_id, question, gold))
    return items


def _ranked_to_dict(ranked: RankedList) -> dict:
    return {
        "query": ranked.query_text,
        "docnos": list(ranked.docnos),
        "scores": list(ranked.scores),
    }


def _ranked_from_dict(record: dict) -> RankedList:
    entries = tuple(
        ScoredDoc(docno, rank, float(score))
        for rank, (docno, score) in enumerate(
            zip(record["docnos"], record["scores"]), start=1
        )
    )
    return RankedList(query_text=record["query"], entries=entries)


def trace_row_to_dict(row: TraceRow) -> dict:
    trace = row.trace
    iterations = []
    for record in trace.iterations:
        iterations.append(
            {
                "index": record.index,
                "think": record.think_text,
                "query": record.generated_query,
                "raw": record.raw_text,
                "docnos": list(record.deep_list.docnos),
                "scores": list(record.deep_list.scores),
                "context_size": len(record.context_docs),
                "information": record.information_text,
                "qpp": dict(record.qpp_estimates),
            }
        )
    return {
        "question_id": trace.question_id,
        "question": trace.input_question,
        "iterations": iterations,
        "answer": trace.final_answer,
        "final_raw": trace.final_raw_text,
        "termination": trace.termination.value,
        "note": trace.note,
        "iter_count": trace.iter_count,
        "em": row.em,
        "f1": row.f1,
        "timing_ms": row.timing_ms,
    }


def trace_row_from_dict(record: dict) -> TraceRow:
    iterations = []
    for entry in record["iterations"]:
        deep = _ranked_from_dict(
            {"query": entry["query"], "docnos": entry["docnos"], "scores": entry["scores"]}
        )
        iterations.append(
            IterationRecord(
                index=int(entry["index"]),
                think_text=entry["think"],
                generated_query=entry["query"],
                context_docs=deep.top(int(entry["context_size"])),
                deep_list=deep,
                qpp_estimates={k: float(v) for k, v in entry["qpp"].items()},
                raw_text=entry["raw"],
                information_text=entry["information"],
            )
        )
    trace = ReasoningTrace(
        question_id=record["question_id"],
        input_question=record["question"],
        iterations=tuple(iterations),
        final_answer=record["answer"],
        termination=Termination(record["termination"]),
        iter_count=int(record["iter_count"]),
        final_raw_text=record.get("final_raw"),
        note=record.get("note"),
    )
    return TraceRow(
        trace=trace,
        em=int(record["em"]),
        f1=float(record["f1"]),
        timing_ms=int(record["timing_ms"]),
    )


def eval_to_dict(record: EvalRecord) -> dict:
    return {
        "question_id": record.question_id,
        "em": record.em,
        "f1": record.f1,
        "iter_count": record.iter_count,
        "first_iter_qpp": dict(record.first_iter_qpp),
    }


def eval_from_dict(record: dict) -> EvalRecord:
    return EvalRecord(
        question_id=record["question_id"],
        em=int(record["em"]),
        f1=float(record["f1"]),
        iter_count=int(record["iter_count"]),
        first_iter_qpp={k: float(v) for k, v in record["first_iter_qpp"].items()},
    )


def write_jsonl(path, records: Iterable[dict]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as handle:
        for record in records:
            handle.write(json.dumps(record, ensure_ascii=True))
            handle.write("\n")


def write_trace_log(path, rows: Sequence[TraceRow]) -> None:
    write_jsonl(path, (trace_row_to_dict(row) for row in rows))


def read_trace_log(path) -> list[TraceRow]:
    return [trace_row_from_dict(record) for _, record in _read_jsonl(path)]


def write_eval_log(path, records: Sequence[EvalRecord]) -> None:
    write_jsonl(path, (eval_to_dict(record) for record in records))


def read_eval_log(path) -> list[EvalRecord]:
    return [eval_from_dict(record) for _, record in _read_jsonl(path)]


def save_lexical_index(index: LexicalIndex, path) -> None:
    """Persist an index as deterministic JSON (sorted keys, exact floats)."""
    payload = {
        "format_version": INDEX_FORMAT_VERSION,
        "doc_count": index.doc_count,
        "avg_doc_length": index.avg_doc_length,
        "doc_lengths": dict(index.doc_lengths),
        "postings": {term: [[d, tf] for d, tf in entries] for term, entries in index.postings.items()},
        "docs": {
            docno: {"title": doc.title, "text": doc.text}
            for docno, doc in index.doc_store.items()
        },
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as handle:
        json.dump(payload, handle, ensure_ascii=True, sort_keys=True)


def load_lexical_index(path) -> LexicalIndex:
    with open(path, "r", encoding="utf-8") as handle:
        payload = json.load(handle)
    if payload.get("format_version") != INDEX_FORMAT_VERSION:
        raise IngestError(f"{path}: unsupported index format {payload.get('format_version')!r}")
    doc_store = {
        docno: Document(docno=docno, title=entry["title"], text=entry["text"])
        for docno, entry in payload["docs"].items()
    }
    postings = {
        term: tuple((d, int(tf)) for d, tf in entries)
        for term, entries in payload["postings"].items()
    }
    return LexicalIndex(
        postings=postings,
        doc_lengths={d: int(n) for d, n in payload["doc_lengths"].items()},
        avg_doc_length=float(payload["avg_doc_length"]),
        doc_count=int(payload["doc_count"]),
        doc_store=doc_store,
    )
