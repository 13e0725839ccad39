"""Dataset loading, answer judging, accuracy aggregation, and report emission.

Datasets are JSONL files with fields ``id, image_path, question, gold,
judge_policy?`` (judge_policy defaults to exact; image paths resolve relative
to the dataset file). Reports are written as ``report.json`` plus a
human-readable ``report.md``.
"""

from __future__ import annotations

import dataclasses
import json
import re
import time
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from .agent import AgentContext, run_task
from .errors import DatasetError, JudgmentError, RecodeError
from .gateway import ModelRequest, TextPart
from .types import Answer

POLICY_EXACT = "exact"
POLICY_RELAXED = "relaxed_numeric"
POLICY_MODEL = "model"

RELAXED_TOLERANCE = 0.05

_CORRECTNESS_PROMPT = """You will be given a question about a chart or diagram, the reference answer, and a model's predicted answer. Decide whether the predicted answer is correct: it must convey the same meaning as the reference answer; wording, capitalization, and formatting differences do not matter. Respond with exactly one word: "correct" or "incorrect".

Question: {question}
Reference answer: {gold}
Predicted answer: {predicted}"""

_VERDICT_WORD_RE = re.compile(r"\b(correct|incorrect)\b", re.IGNORECASE)


@dataclass(frozen=True)
class DatasetRecord:
    id: str
    image_path: Path
    question: str
    gold: str
    judge_policy: str = POLICY_EXACT

    def __post_init__(self) -> None:
        if self.judge_policy not in (POLICY_EXACT, POLICY_RELAXED, POLICY_MODEL):
            raise ValueError(f"unknown judge policy {self.judge_policy!r}")


@dataclass(frozen=True)
class RecordResult:
    id: str
    predicted: str | None
    gold: str
    policy: str
    correct: bool | None  # None = unscored (judge failure)
    qa_mode_used: str | None = None
    error: str | None = None


@dataclass
class Report:
    records: list[RecordResult]
    accuracy: float
    correct: int
    scored: int
    unscored: int
    config: dict
    call_counts: dict[str, int] = field(default_factory=dict)
    wall_time_s: float = 0.0


def load_dataset(path: str | Path) -> list[DatasetRecord]:
    """Parse and validate a JSONL dataset; errors carry the offending line number."""
    path = Path(path)
    if not path.is_file():
        raise DatasetError(f"dataset file not found: {path}")
    records: list[DatasetRecord] = []
    seen: set[str] = set()
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DatasetError(f"invalid JSON: {exc}", line=lineno) from exc
        for fieldname in ("id", "image_path", "question", "gold"):
            if fieldname not in obj:
                raise DatasetError(f"missing field {fieldname!r}", line=lineno)
        rid = str(obj["id"])
        if rid in seen:
            raise DatasetError(f"duplicate id {rid!r}", line=lineno)
        seen.add(rid)
        image_path = (path.parent / obj["image_path"]).resolve()
        if not image_path.is_file():
            raise DatasetError(f"image not found: {image_path}", line=lineno)
        try:
            records.append(
                DatasetRecord(
                    id=rid,
                    image_path=image_path,
                    question=str(obj["question"]),
                    gold=str(obj["gold"]),
                    judge_policy=obj.get("judge_policy", POLICY_EXACT),
                )
            )
        except ValueError as exc:
            raise DatasetError(str(exc), line=lineno) from exc
    return records


def _normalize(text: str) -> str:
    return " ".join(text.split()).lower()


def _to_number(text: str) -> float | None:
    cleaned = text.strip().rstrip("%").replace(",", "")
    try:
        return float(cleaned)
    except ValueError:
        return None


def judge_answer(
    pred: Answer | str,
    gold: str,
    policy: str = POLICY_EXACT,
    ctx: AgentContext | None = None,
    question: str = "",
    tolerance: float = RELAXED_TOLERANCE,
) -> bool:
    """Score one prediction against the gold answer under a judging policy.

    exact: case-insensitive, whitespace-collapsed equality.
    relaxed_numeric: both sides parse as numbers and the prediction is within
    5% relative tolerance (a gold of 0 demands an exact 0).
    model: one correctness call parsed for "correct"/"incorrect".
    """
    predicted = pred.extracted if isinstance(pred, Answer) else pred
    if policy == POLICY_EXACT:
        return _normalize(predicted) == _normalize(gold)
    if policy == POLICY_RELAXED:
        p = _to_number(predicted)
        g = _to_number(gold)
        if p is None or g is None:
            return _normalize(predicted) == _normalize(gold)
        if g == 0:
            return p == 0
        return abs(p - g) <= tolerance * abs(g)
    if policy == POLICY_MODEL:
        if ctx is None:
            raise JudgmentError("model judging requires a gateway context")
        prompt = _CORRECTNESS_PROMPT.format(question=question, gold=gold, predicted=predicted)
        req = ModelRequest(
            model_id=ctx.cfg.judge_model,
            parts=(TextPart(prompt),),
            temperature=0.0,
            max_output_tokens=256,
        )
        try:
            resp = ctx.gateway.complete(req)
        except RecodeError as exc:
            raise JudgmentError(f"judge call failed: {exc}") from exc
        matches = _VERDICT_WORD_RE.findall(resp.text or "")
        if not matches:
            raise JudgmentError(f"judge response has no correct/incorrect verdict: {resp.text[:200]!r}")
        return matches[-1].lower() == "correct"
    raise ValueError(f"unknown judge policy {policy!r}")


def accuracy(judgments: list[bool]) -> float:
    if not judgments:
        raise ValueError("cannot compute accuracy of an empty judgment list")
    return sum(judgments) / len(judgments)


def run_eval(
    records: list[DatasetRecord],
    ctx: AgentContext,
    out_dir: str | Path | None = None,
    parallelism: int = 1,
) -> Report:
    """Run the full pipeline per record, judge, and aggregate.

    Per-record failures are recorded as incorrect-with-error; judge failures
    leave the record unscored and out of the accuracy denominator. The sweep
    never aborts.
    """
    started = time.monotonic()
    out_root = Path(out_dir) if out_dir is not None else None
    call_counts: Counter = Counter()

    def evaluate(record: DatasetRecord) -> RecordResult:
        traj_dir = out_root / "trajectories" / record.id if out_root is not None else None
        try:
            image_bytes = record.image_path.read_bytes()
            traj, ans = run_task(ctx, image_bytes, record.question, out_dir=traj_dir, task_id=record.id)
            call_counts.update(traj.stats)
        except RecodeError as exc:
            return RecordResult(
                id=record.id,
                predicted=None,
                gold=record.gold,
                policy=record.judge_policy,
                correct=False,
                error=str(exc),
            )
        try:
            verdict = judge_answer(ans, record.gold, record.judge_policy, ctx, record.question)
        except JudgmentError as exc:
            return RecordResult(
                id=record.id,
                predicted=ans.extracted,
                gold=record.gold,
                policy=record.judge_policy,
                correct=None,
                qa_mode_used=traj.qa_mode_used,
                error=str(exc),
            )
        return RecordResult(
            id=record.id,
            predicted=ans.extracted,
            gold=record.gold,
            policy=record.judge_policy,
            correct=verdict,
            qa_mode_used=traj.qa_mode_used,
        )

    if parallelism > 1:
        with ThreadPoolExecutor(max_workers=parallelism) as pool:
            results = list(pool.map(evaluate, records))
    else:
        results = [evaluate(r) for r in records]

    scored = [r for r in results if r.correct is not None]
    correct = sum(1 for r in scored if r.correct)
    report = Report(
        records=results,
        accuracy=correct / len(scored) if scored else 0.0,
        correct=correct,
        scored=len(scored),
        unscored=len(results) - len(scored),
        config=dataclasses.asdict(ctx.cfg),
        call_counts=dict(call_counts),
        wall_time_s=round(time.monotonic() - started, 3),
    )
    if out_root is not None:
        write_report(report, out_root)
    return report


def write_report(report: Report, out_dir: str | Path) -> None:
    root = Path(out_dir)
    root.mkdir(parents=True, exist_ok=True)
    payload = {
        "accuracy": report.accuracy,
        "correct": report.correct,
        "scored": report.scored,
        "unscored": report.unscored,
        "config": report.config,
        "call_counts": report.call_counts,
        "wall_time_s": report.wall_time_s,
        "records": [dataclasses.asdict(r) for r in report.records],
    }
    (root / "report.json").write_text(json.dumps(payload, ensure_ascii=False, indent=1), encoding="utf-8")

    lines = [
        "# Evaluation report",
        "",
        f"- accuracy: **{report.accuracy:.4f}** ({report.correct}/{report.scored} scored, {report.unscored} unscored)",
        f"- critic: {report.config.get('critic')}, k={report.config.get('candidates_per_round')}, "
        f"T={report.config.get('refinement_rounds')}, qa_mode={report.config.get('qa_mode')}",
        f"- model calls: {report.call_counts}",
        f"- wall time: {report.wall_time_s}s",
        "",
        "| id | policy | gold | predicted | correct | mode |",
        "|----|--------|------|-----------|---------|------|",
    ]
    expected_mode = report.config.get("qa_mode")
    for rec in report.records:
        verdict = "unscored" if rec.correct is None else ("yes" if rec.correct else "no")
        mode = rec.qa_mode_used or "-"
        if rec.qa_mode_used and rec.qa_mode_used != expected_mode:
            mode += " (fallback)"
        lines.append(
            f"| {rec.id} | {rec.policy} | {rec.gold} | {rec.predicted} | {verdict} | {mode} |"
        )
    (root / "report.md").write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_sweep_summary(reports: dict[str, Report], out_dir: str | Path) -> None:
    """Critic-vs-accuracy comparison table across a sweep."""
    root = Path(out_dir)
    root.mkdir(parents=True, exist_ok=True)
    lines = [
        "# Critic sweep",
        "",
        "| critic | model calls | accuracy |",
        "|--------|-------------|----------|",
    ]
    for critic_kind, report in reports.items():
        total_calls = sum(report.call_counts.values())
        lines.append(f"| {critic_kind} | {total_calls} | {report.accuracy:.4f} |")
    (root / "sweep.md").write_text("\n".join(lines) + "\n", encoding="utf-8")
