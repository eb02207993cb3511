"""Exception and warning types shared across the package."""


class AgenticQppError(Exception):
    """Base class for all package errors."""


class ConfigurationError(AgenticQppError):
    """Inconsistent or incomplete configuration, detected before any work runs."""


class IngestError(AgenticQppError):
    """A corpus, embedding, QA, or script input file could not be ingested."""


class TransportError(AgenticQppError):
    """Retryable failure while talking to a remote backend."""


class BackendError(AgenticQppError):
    """Non-retryable completion backend failure (e.g. an exhausted script)."""


class PipelineError(AgenticQppError):
    """A retrieval pipeline stage failed; carries the failing stage index."""

    def __init__(self, stage_index: int, message: str):
        super().__init__(f"stage {stage_index}: {message}")
        self.stage_index = stage_index


class RerankError(AgenticQppError):
    """Whole-list rerank failure; no partial results are produced."""


class PredictorError(AgenticQppError):
    """Base class for QPP predictor failures."""


class PredictorUndefined(PredictorError):
    """The predictor has no defined value for this input (e.g. empty list)."""


class PredictorInputError(PredictorError):
    """Predictor input is malformed (missing embedding, dimension mismatch)."""


class RetrievalWarning(UserWarning):
    """Degenerate retrieval input, e.g. zero-norm vectors scored as -inf."""


class PromptWarning(UserWarning):
    """Questionable prompt content, e.g. protocol tags inside the question."""


class QppWarning(UserWarning):
    """Degraded or clamped predictor output, or a skipped predictor."""
