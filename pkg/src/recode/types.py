"""Shared domain types for the derendering pipeline.

All types are immutable after construction and safe to share across threads.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping

from .images import RasterImage

# Rendering outcome variants.
OK = "ok"
EXEC_ERROR = "exec_error"
TIMEOUT = "timeout"
PROTOCOL_ERROR = "protocol_error"

# Score orientations.
LOWER_BETTER = "lower_better"
HIGHER_BETTER = "higher_better"

# QA conditioning modes.
QA_IMAGE_ONLY = "image_only"
QA_CODE_ONLY = "code_only"
QA_IMAGE_AND_CODE = "image_and_code"

# Text-extraction modes.
OCR_OFF = "off"
OCR_MODEL = "model_based"
OCR_TOOL = "external_tool"


@dataclass(frozen=True)
class ProgramSource:
    """Candidate program text with the fence language tag and lint flags.

    ``determinism_warnings`` holds (start, end, token) byte spans flagged by
    the randomness lint; purely advisory.
    """

    text: str
    language_tag: str = ""
    determinism_warnings: tuple[tuple[int, int, str], ...] = ()

    def __post_init__(self) -> None:
        if not self.text:
            raise ValueError("program text must be non-empty")
        if "```" in self.text:
            raise ValueError("program text still contains fence markers")


@dataclass(frozen=True)
class Rendering:
    """Outcome of executing one candidate program. Exactly one variant."""

    status: str
    wall_time_ms: int
    image: RasterImage | None = None
    message: str = ""
    exit_class: str = ""
    stderr_tail: str = ""

    def __post_init__(self) -> None:
        if self.status not in (OK, EXEC_ERROR, TIMEOUT, PROTOCOL_ERROR):
            raise ValueError(f"unknown rendering status {self.status!r}")
        if (self.status == OK) != (self.image is not None):
            raise ValueError("rendering carries an image exactly when status is ok")

    @property
    def is_ok(self) -> bool:
        return self.status == OK

    @classmethod
    def ok(cls, image: RasterImage, wall_time_ms: int, stderr_tail: str = "") -> "Rendering":
        return cls(status=OK, wall_time_ms=wall_time_ms, image=image, stderr_tail=stderr_tail)

    @classmethod
    def exec_error(cls, exit_class: str, message: str, wall_time_ms: int, stderr_tail: str = "") -> "Rendering":
        return cls(
            status=EXEC_ERROR,
            wall_time_ms=wall_time_ms,
            message=message,
            exit_class=exit_class,
            stderr_tail=stderr_tail,
        )

    @classmethod
    def timeout(cls, wall_time_ms: int, stderr_tail: str = "") -> "Rendering":
        return cls(status=TIMEOUT, wall_time_ms=wall_time_ms, message="timed out", stderr_tail=stderr_tail)

    @classmethod
    def protocol_error(cls, message: str, wall_time_ms: int = 0, stderr_tail: str = "") -> "Rendering":
        return cls(status=PROTOCOL_ERROR, wall_time_ms=wall_time_ms, message=message, stderr_tail=stderr_tail)


@dataclass(frozen=True)
class CriticScore:
    """One critic's verdict; ``normalized`` is always smaller-is-more-faithful."""

    kind: str
    raw: float
    orientation: str
    normalized: float

    def __post_init__(self) -> None:
        if self.orientation not in (LOWER_BETTER, HIGHER_BETTER):
            raise ValueError(f"unknown orientation {self.orientation!r}")
        expected = self.raw if self.orientation == LOWER_BETTER else -self.raw
        # +inf is the sentinel for unrenderable candidates and bypasses the rule.
        if not math.isinf(self.normalized) and self.normalized != expected:
            raise ValueError("normalized score does not match its orientation rule")


@dataclass(frozen=True)
class CandidateOrigin:
    """Where a candidate came from: the initial round or a refinement round."""

    kind: str
    round_index: int | None = None

    def __post_init__(self) -> None:
        if self.kind == "initial":
            if self.round_index is not None:
                raise ValueError("initial candidates carry no round index")
        elif self.kind == "refinement":
            if self.round_index is None or self.round_index < 1:
                raise ValueError("refinement origin requires a round index >= 1")
        else:
            raise ValueError(f"unknown origin kind {self.kind!r}")

    @classmethod
    def initial(cls) -> "CandidateOrigin":
        return cls(kind="initial")

    @classmethod
    def refinement(cls, round_index: int) -> "CandidateOrigin":
        return cls(kind="refinement", round_index=round_index)


@dataclass(frozen=True)
class Candidate:
    """One hypothesis: program, its rendering outcome, and any critic scores."""

    source: ProgramSource
    rendering: Rendering
    scores: Mapping[str, CriticScore] = field(default_factory=dict)
    origin: CandidateOrigin = field(default_factory=CandidateOrigin.initial)
    ordinal: int = 0

    def __post_init__(self) -> None:
        if self.ordinal < 0:
            raise ValueError("ordinal must be >= 0")

    def with_score(self, score: CriticScore) -> "Candidate":
        merged = dict(self.scores)
        merged[score.kind] = score
        return Candidate(
            source=self.source,
            rendering=self.rendering,
            scores=merged,
            origin=self.origin,
            ordinal=self.ordinal,
        )


@dataclass(frozen=True)
class RoundRecord:
    """One generation-or-refinement round: its pool, and which candidate won."""

    round_index: int
    candidates: tuple[Candidate, ...]
    critic_kind_used: str
    chosen: int | None = None
    seed_code: ProgramSource | None = None
    all_failed: bool = False

    def __post_init__(self) -> None:
        if self.round_index < 0:
            raise ValueError("round_index must be >= 0")
        if self.round_index == 0 and self.seed_code is not None:
            raise ValueError("round 0 has no seed code")
        if self.all_failed:
            if self.chosen is not None:
                raise ValueError("an all-failed round cannot have a chosen candidate")
        elif self.chosen is None:
            raise ValueError("a round must either choose a candidate or be marked all-failed")
        if self.chosen is not None:
            if not 0 <= self.chosen < len(self.candidates):
                raise ValueError("chosen index out of bounds")
            if not self.candidates[self.chosen].rendering.is_ok:
                raise ValueError("chosen candidate must have an ok rendering")

    @property
    def chosen_candidate(self) -> Candidate | None:
        return None if self.chosen is None else self.candidates[self.chosen]


@dataclass(frozen=True)
class Answer:
    """A parsed model answer: the bracketed payload plus surrounding reasoning."""

    raw_text: str
    extracted: str
    reasoning: str = ""

    def __post_init__(self) -> None:
        if "]]" in self.extracted:
            raise ValueError("extracted payload must not contain the closing bracket sequence")


@dataclass(frozen=True)
class OcrResult:
    """Extracted text and where it came from."""

    text: str
    source: str  # one of OCR_OFF-like values: "model_based", "external_tool", "none"

    def __post_init__(self) -> None:
        if self.source not in ("model_based", "external_tool", "none"):
            raise ValueError(f"unknown ocr source {self.source!r}")
        if self.source == "none" and self.text:
            raise ValueError("ocr source 'none' implies empty text")


@dataclass(frozen=True)
class AgentConfig:
    """Pipeline knobs. k candidates per round, T refinement rounds."""

    candidates_per_round: int = 5
    refinement_rounds: int = 2
    critic: str = "mse"
    qa_mode: str = QA_IMAGE_AND_CODE
    ocr: str = OCR_MODEL
    keep_seed_in_pool: bool = True
    sandbox_timeout_s: float = 60.0
    generation_model: str = "multimodal-default"
    judge_model: str = "multimodal-default"
    embedding_model: str = "embedding-default"
    generation_temperature: float = 1.0
    max_output_tokens: int = 8192

    def __post_init__(self) -> None:
        if self.candidates_per_round < 1:
            raise ValueError("candidates_per_round must be >= 1")
        if self.refinement_rounds < 0:
            raise ValueError("refinement_rounds must be >= 0")
        if self.qa_mode not in (QA_IMAGE_ONLY, QA_CODE_ONLY, QA_IMAGE_AND_CODE):
            raise ValueError(f"unknown qa_mode {self.qa_mode!r}")
        if self.ocr not in (OCR_OFF, OCR_MODEL, OCR_TOOL):
            raise ValueError(f"unknown ocr mode {self.ocr!r}")
        if self.sandbox_timeout_s <= 0:
            raise ValueError("sandbox_timeout_s must be positive")


@dataclass(frozen=True)
class Trajectory:
    """Persisted record of one task: every round, the final code, the answer."""

    task_id: str
    input_hash: str
    config_snapshot: AgentConfig
    rounds: tuple[RoundRecord, ...] = ()
    ocr_text: str | None = None
    final_code: ProgramSource | None = None
    final_answer: Answer | None = None
    question: str | None = None
    qa_mode_used: str | None = None
    all_failed: bool = False
    stats: Mapping[str, int] = field(default_factory=dict)

    @property
    def chosen_scores(self) -> list[float]:
        """Normalized score of the chosen candidate, per round (skips all-failed rounds)."""
        out: list[float] = []
        for rnd in self.rounds:
            cand = rnd.chosen_candidate
            if cand is not None and rnd.critic_kind_used in cand.scores:
                out.append(cand.scores[rnd.critic_kind_used].normalized)
        return out
