"""Completion backends: HTTP endpoint client, scripted replay, rule-based reasoner.

Every backend honors stop sequences the way a completion-serving endpoint
would: the returned text never contains the stop sequence that halted it.
Backends expose ``deterministic`` so the runner can zero out wall-clock
timings where byte-identical re-runs are part of the contract.
"""

from __future__ import annotations

import json
import re
from typing import Sequence

from . import wire
from .agent import CompletionRequest, CompletionResult
from .errors import BackendError, IngestError, TransportError

_INFORMATION_RE = re.compile(r"<information>(.*?)</information>", re.DOTALL)
_QUESTION_RE = re.compile(r"Question: (.*?)(?:\n|$)", re.DOTALL)


def apply_stop_sequences(text: str, stops: Sequence[str]) -> CompletionResult:
    """Truncate text at the earliest stop sequence, as a serving endpoint would."""
    earliest: tuple[int, str] | None = None
    for stop in stops:
        position = text.find(stop)
        if position >= 0 and (earliest is None or position < earliest[0]):
            earliest = (position, stop)
    if earliest is None:
        return CompletionResult(text=text, finish_reason="end_of_text")
    position, stop = earliest
    return CompletionResult(text=text[:position], finish_reason="stop", stop_sequence=stop)


class ScriptedBackend:
    """Replays a fixed sequence of generation texts, one per completion call.

    Each episode should get its own instance; running out of steps is a
    non-retryable failure (replaying a deterministic script cannot succeed).
    """

    deterministic = True

    def __init__(self, steps: Sequence[str]):
        self._steps = list(steps)
        self._cursor = 0

    def complete(self, request: CompletionRequest) -> CompletionResult:
        if self._cursor >= len(self._steps):
            raise BackendError(f"script exhausted after {len(self._steps)} steps")
        text = self._steps[self._cursor]
        self._cursor += 1
        return apply_stop_sequences(text, request.stop_sequences)


def load_script(path) -> list[str]:
    """Read a script file: JSONL objects {"step": int, "text": str}, ordered by step."""
    steps: list[tuple[int, str]] = []
    with open(path, "r", encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise IngestError(f"{path}: line {lineno}: invalid JSON: {exc}") from None
            if not isinstance(record, dict) or "step" not in record or "text" not in record:
                raise IngestError(f"{path}: line {lineno}: expected {{'step', 'text'}}")
            steps.append((int(record["step"]), str(record["text"])))
    if not steps:
        raise IngestError(f"{path}: script has no steps")
    steps.sort(key=lambda pair: pair[0])
    return [text for _, text in steps]


class RuleBasedReasoner:
    """Deterministic generator: answer once a gold substring shows up, else search.

    Scans the information blocks accumulated in the transcript for any of the
    gold substrings (case-insensitive).  On a hit it answers with the first
    matching gold string; otherwise it emits the next reformulation, cycling
    through the list.  A desk-scale stand-in for a trained search reasoner.
    """

    deterministic = True

    def __init__(self, gold_substrings: Sequence[str], reformulations: Sequence[str]):
        if not reformulations:
            raise ValueError("reformulation list must be non-empty")
        self._golds = tuple(gold_substrings)
        self._reformulations = tuple(reformulations)
        self._cursor = 0

    def complete(self, request: CompletionRequest) -> CompletionResult:
        seen = " ".join(_INFORMATION_RE.findall(request.context)).lower()
        for gold in self._golds:
            if gold.lower() in seen:
                text = f"<think>found</think> <answer> {gold} </answer>"
                return apply_stop_sequences(text, request.stop_sequences)
        query = self._reformulations[self._cursor % len(self._reformulations)]
        self._cursor += 1
        text = f"<think>searching</think> <search> {query} </search>"
        return apply_stop_sequences(text, request.stop_sequences)


def rule_based_reasoner(
    gold_substrings: Sequence[str], reformulation_list: Sequence[str]
) -> RuleBasedReasoner:
    """Build the rule-based completion backend."""
    return RuleBasedReasoner(gold_substrings, reformulation_list)


def extract_question(context: str) -> str:
    """Pull the substituted question back out of a rendered transcript."""
    match = _QUESTION_RE.search(context)
    return match.group(1).strip() if match else ""


class HttpCompletionBackend:
    """Client for a completion endpoint speaking the plain prompt/stop contract.

    POST {"prompt", "stop", "max_tokens", "temperature"} and expects
    {"text", "finish_reason": "stop"|"length"}.  Which stop sequence fired is
    inferred from the earliest action tag left open in the text.
    """

    deterministic = False

    def __init__(
        self,
        url: str,
        temperature: float = 0.0,
        timeout: float = wire.DEFAULT_TIMEOUT_S,
    ):
        self.url = url
        self.temperature = temperature
        self.timeout = timeout

    def complete(self, request: CompletionRequest) -> CompletionResult:
        payload = {
            "prompt": request.context,
            "stop": list(request.stop_sequences),
            "max_tokens": request.max_tokens,
            "temperature": self.temperature,
        }
        body = wire.post_json(self.url, payload, timeout=self.timeout)
        if "text" not in body or "finish_reason" not in body:
            raise TransportError("completion endpoint response lacks text/finish_reason")
        text = str(body["text"])
        reason = str(body["finish_reason"])
        if reason == "stop":
            stop = self._infer_stop_sequence(text, request.stop_sequences)
            if stop is not None:
                return CompletionResult(text=text, finish_reason="stop", stop_sequence=stop)
            return CompletionResult(text=text, finish_reason="end_of_text")
        if reason == "length":
            return CompletionResult(text=text, finish_reason="length")
        return CompletionResult(text=text, finish_reason="end_of_text")

    @staticmethod
    def _infer_stop_sequence(text: str, stops: Sequence[str]) -> str | None:
        candidates = []
        for stop in stops:
            open_tag = stop.replace("</", "<")
            position = text.find(open_tag)
            if position >= 0 and stop not in text[position:]:
                candidates.append((position, stop))
        if not candidates:
            return None
        return min(candidates)[1]
