"""Exception hierarchy shared by all modules."""

from __future__ import annotations


class RecodeError(Exception):
    """Base class for every error raised by this package."""


class DecodeError(RecodeError):
    """Image bytes could not be decoded."""


class TemplateError(RecodeError):
    """A prompt template is missing a required slot or is unknown."""


class CodeExtractionError(RecodeError):
    """No usable fenced code block in a model response."""

    def __init__(self, message: str, response_text: str = ""):
        super().__init__(message)
        self.response_text = response_text


class AnswerParseError(RecodeError):
    """The answer marker is absent or unbalanced."""


class VerdictParseError(RecodeError):
    """A judge response does not follow the verdict format."""


class ReplayMissError(RecodeError):
    """Replay mode was asked for a request that was never recorded."""

    def __init__(self, key: str):
        super().__init__(f"replay miss: no cache entry for key {key}")
        self.key = key


class TransportError(RecodeError):
    """Provider HTTP failure after retries."""

    def __init__(self, message: str, retries: int = 0):
        super().__init__(message)
        self.retries = retries


class DimensionMismatchError(RecodeError):
    """A pixel metric was called on images of different dimensions."""


class CriticUnavailableError(RecodeError):
    """A gateway-backed critic could not produce a score."""


class AllCandidatesFailedError(RecodeError):
    """No candidate in the pool has a usable rendering."""


class GenerationError(RecodeError):
    """Every generation call in a round failed outright."""


class DatasetError(RecodeError):
    """A dataset file is malformed."""

    def __init__(self, message: str, line: int | None = None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line


class JudgmentError(RecodeError):
    """A model-judged answer could not be scored."""


class ConfigError(RecodeError):
    """A required configuration key is missing or invalid."""

    def __init__(self, message: str, key: str = ""):
        super().__init__(message)
        self.key = key


class PipelineError(RecodeError):
    """Wraps a failure with the pipeline stage it occurred in."""

    def __init__(self, stage: str, message: str):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage


class TrajectoryFormatError(RecodeError):
    """A persisted trajectory directory is inconsistent or unreadable."""
