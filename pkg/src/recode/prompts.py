"""Prompt construction and model-output parsing.

Templates live as text assets under ``recode/templates`` and can be overridden
by pointing a prompt library at another directory. Parsing is lossless: any
normalization for judging happens downstream.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

from .errors import AnswerParseError, CodeExtractionError, TemplateError, VerdictParseError
from .types import Answer, ProgramSource

TEMPLATE_NAMES = (
    "derender",
    "refinement",
    "qa_image_only",
    "qa_code_only",
    "qa_image_code",
    "judge_pairwise",
    "judge_comparative",
    "ocr_extract",
)

_SLOT_RE = re.compile(r"\{(question|code|ocr_text|candidate_count)\}")

# Removed when the determinism clause is disabled via config.
_DETERMINISM_LINE = "- Do not use modules that involves randomness, such as np.random.\n"

_OCR_CONTEXT_BLOCK = (
    "\n\nAdditional context. An OCR pass extracted the following text from the image; "
    "use it to reproduce titles, labels, and data values exactly:\n{ocr_text}\n"
)

_RUBRIC_WORDS = {
    "excellent": 5,
    "none": 5,
    "good": 4,
    "minor": 4,
    "fair": 3,
    "some": 3,
    "bad": 2,
    "many": 2,
    "terrible": 1,
    "lots": 1,
}

_ANALYSIS_RE = re.compile(r"^Analysis\s*-\s*(.+?):\s*(\S+)\s*$", re.MULTILINE)
_VERDICT_RE = re.compile(r"Final verdict:\s*\[\[\s*([0-9]+(?:\.[0-9]+)?)\s*\]\]")
_FENCE_RE = re.compile(r"```([^\n`]*)\n(.*?)```", re.DOTALL)

ANSWER_MARKER = "Answer: [["


class PromptLibrary:
    """Loads template bodies and renders them with slot substitution."""

    def __init__(self, directory: str | Path | None = None, determinism_clause: bool = True):
        self.directory = Path(directory) if directory is not None else None
        self.determinism_clause = determinism_clause
        self._bodies: dict[str, str] = {}

    def body(self, name: str) -> str:
        if name not in TEMPLATE_NAMES:
            raise TemplateError(f"unknown template {name!r}")
        if name not in self._bodies:
            if self.directory is not None:
                path = self.directory / f"{name}.txt"
                if not path.is_file():
                    raise TemplateError(f"template file not found: {path}")
                text = path.read_text(encoding="utf-8")
            else:
                text = resources.files("recode.templates").joinpath(f"{name}.txt").read_text(encoding="utf-8")
            self._bodies[name] = text
        return self._bodies[name]

    def build(self, name: str, slots: dict[str, object] | None = None) -> str:
        slots = dict(slots or {})
        body = self.body(name)
        if name == "derender" and slots.get("ocr_text"):
            body = body.rstrip("\n") + "\n" + _OCR_CONTEXT_BLOCK
        if not self.determinism_clause:
            body = body.replace(_DETERMINISM_LINE, "")

        required = {m.group(1) for m in _SLOT_RE.finditer(body)}
        for slot in sorted(required):
            if slots.get(slot) is None:
                raise TemplateError(f"template {name!r} is missing required slot {slot!r}")

        # Single-pass substitution so slot values containing brace markers are
        # never rescanned.
        return _SLOT_RE.sub(lambda m: str(slots[m.group(1)]), body)


_DEFAULT_LIBRARY = PromptLibrary()


def build_prompt(
    name: str,
    slots: dict[str, object] | None = None,
    *,
    library: PromptLibrary | None = None,
) -> str:
    """Render a named template; raises TemplateError on a missing slot."""
    return (library or _DEFAULT_LIBRARY).build(name, slots)


def extract_code_block(response: str) -> ProgramSource:
    """Return the LAST fenced code block of a response, fences stripped.

    The derender template emits per-subfigure chunks and then a final combined
    chunk, so the last block is the executable one.
    """
    matches = _FENCE_RE.findall(response)
    if not matches:
        raise CodeExtractionError("no fenced code block in response", response_text=response)
    tag, text = matches[-1]
    text = text.rstrip("\n")
    if not text.strip():
        raise CodeExtractionError("fenced code block is empty", response_text=response)
    return ProgramSource(text=text, language_tag=tag.strip())


def parse_answer(response: str) -> Answer:
    """Parse the payload of the last ``Answer: [[...]]`` marker.

    The payload is whitespace-trimmed but otherwise verbatim, so quoted list
    answers survive untouched.
    """
    idx = response.rfind(ANSWER_MARKER)
    if idx < 0:
        raise AnswerParseError("no 'Answer: [[' marker in response")
    start = idx + len(ANSWER_MARKER)
    end = response.find("]]", start)
    if end < 0:
        raise AnswerParseError("unbalanced answer brackets: missing ']]'")
    line_start = response.rfind("\n", 0, idx) + 1
    return Answer(
        raw_text=response,
        extracted=response[start:end].strip(),
        reasoning=response[:line_start].rstrip(),
    )


@dataclass(frozen=True)
class JudgeVerdict:
    """Four rubric scores, their mean, and the authoritative final verdict."""

    rubric_scores: tuple[tuple[str, int], ...]
    average: float
    raw_final: str

    @property
    def final(self) -> float:
        return float(self.raw_final)


def parse_verdict(response: str) -> JudgeVerdict:
    """Parse a pairwise-judge response into rubric scores and the final verdict.

    The verdict line is authoritative for ranking; the recomputed rubric mean
    must agree with it within 0.05 or the response is rejected as malformed.
    """
    analysis = _ANALYSIS_RE.findall(response)
    if len(analysis) != 4:
        raise VerdictParseError(f"expected 4 'Analysis - ...' rubric lines, found {len(analysis)}")
    rubric: list[tuple[str, int]] = []
    for label, word in analysis:
        key = word.strip().lower().rstrip(".")
        if key not in _RUBRIC_WORDS:
            raise VerdictParseError(f"unknown qualitative word {word!r} in rubric line {label!r}")
        rubric.append((label.strip(), _RUBRIC_WORDS[key]))
    average = sum(score for _, score in rubric) / 4.0

    finals = _VERDICT_RE.findall(response)
    if not finals:
        raise VerdictParseError("no 'Final verdict: [[score]]' line in response")
    raw_final = finals[-1]
    if abs(average - float(raw_final)) > 0.05 + 1e-9:
        raise VerdictParseError(
            f"verdict {raw_final} disagrees with rubric mean {average:.2f} by more than 0.05"
        )
    return JudgeVerdict(rubric_scores=tuple(rubric), average=average, raw_final=raw_final)
