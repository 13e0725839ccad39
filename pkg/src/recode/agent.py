"""The derendering loop: OCR, generate k candidates, render, critic-select,
refine for T rounds, then answer with the original image plus the final code.

Progress events go out as line-delimited JSON when an event sink is attached.
"""

from __future__ import annotations

import json
import logging
import subprocess
import tempfile
from collections import Counter
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence, TextIO

from . import critics, executor
from .errors import (
    AllCandidatesFailedError,
    CodeExtractionError,
    GenerationError,
    PipelineError,
    RecodeError,
    ReplayMissError,
)
from .gateway import Gateway, ImagePart, ModelRequest, TextPart
from .images import RasterImage, content_hash, decode_image, encode_png
from .prompts import PromptLibrary, parse_answer
from .trajectory import save_trajectory
from .types import (
    AgentConfig,
    Answer,
    Candidate,
    CandidateOrigin,
    OcrResult,
    ProgramSource,
    Rendering,
    RoundRecord,
    Trajectory,
    OCR_MODEL,
    OCR_OFF,
    QA_CODE_ONLY,
    QA_IMAGE_AND_CODE,
    QA_IMAGE_ONLY,
)

log = logging.getLogger(__name__)

_QA_TEMPLATES = {
    QA_IMAGE_ONLY: "qa_image_only",
    QA_CODE_ONLY: "qa_code_only",
    QA_IMAGE_AND_CODE: "qa_image_code",
}


@dataclass
class AgentContext:
    """Everything the loop needs: the gateway, the runner, and the knobs."""

    gateway: Gateway
    cfg: AgentConfig = field(default_factory=AgentConfig)
    runner_cmd: Sequence[str] = ()
    prompt_library: PromptLibrary = field(default_factory=PromptLibrary)
    ocr_cmd: Sequence[str] | None = None
    render_parallelism: int = 1
    event_sink: TextIO | None = None

    @property
    def exec_limits(self) -> executor.ExecLimits:
        return executor.ExecLimits(timeout_s=self.cfg.sandbox_timeout_s)

    def critic_context(self) -> critics.CriticContext:
        return critics.CriticContext(
            gateway=self.gateway,
            judge_model=self.cfg.judge_model,
            embedding_model=self.cfg.embedding_model,
            max_output_tokens=self.cfg.max_output_tokens,
            prompt_library=self.prompt_library,
        )


def _emit(ctx: AgentContext, event: str, **payload: object) -> None:
    if ctx.event_sink is not None:
        ctx.event_sink.write(json.dumps({"event": event, **payload}, ensure_ascii=False) + "\n")
        ctx.event_sink.flush()


def extract_text(ctx: AgentContext, image: RasterImage, stats: Counter | None = None) -> OcrResult:
    """Run the configured text-extraction mode; failures degrade to 'none'."""
    mode = ctx.cfg.ocr
    if mode == OCR_OFF:
        return OcrResult(text="", source="none")
    if mode == OCR_MODEL:
        prompt = ctx.prompt_library.build("ocr_extract")
        req = ModelRequest(
            model_id=ctx.cfg.generation_model,
            parts=(TextPart(prompt), ImagePart(encode_png(image))),
            temperature=0.0,
            max_output_tokens=ctx.cfg.max_output_tokens,
        )
        resp = ctx.gateway.complete(req)
        if stats is not None:
            stats["ocr"] += 1
        if not resp.text:
            log.warning("model OCR returned no text (finish=%s); continuing without it", resp.finish_class)
            return OcrResult(text="", source="none")
        return OcrResult(text=resp.text.strip(), source="model_based")

    # external_tool: `ocr.cmd <png_path>`, stdout is the extracted text.
    if not ctx.ocr_cmd:
        log.warning("ocr mode external_tool but ocr.cmd is not configured; continuing without OCR")
        return OcrResult(text="", source="none")
    with tempfile.NamedTemporaryFile(suffix=".png", delete=False) as handle:
        handle.write(encode_png(image))
        png_path = handle.name
    try:
        proc = subprocess.run(
            [*ctx.ocr_cmd, png_path],
            capture_output=True,
            timeout=ctx.cfg.sandbox_timeout_s,
        )
    except (OSError, subprocess.TimeoutExpired) as exc:
        log.warning("external OCR tool failed (%s); continuing without OCR", exc)
        return OcrResult(text="", source="none")
    finally:
        Path(png_path).unlink(missing_ok=True)
    if proc.returncode != 0:
        log.warning("external OCR tool exited %d; continuing without OCR", proc.returncode)
        return OcrResult(text="", source="none")
    return OcrResult(text=proc.stdout.decode("utf-8", errors="replace").strip(), source="external_tool")


def _completion_candidates(
    ctx: AgentContext,
    requests: list[ModelRequest],
    origin: CandidateOrigin,
    stats: Counter | None,
    stage: str,
) -> list[Candidate]:
    """Issue the per-candidate calls, extract code, render, and package.

    Gateway transport failures and extraction misses become protocol_error
    candidates; only a round where every call raised is a hard error. Replay
    misses always propagate (they mean the cache is incomplete).
    """
    sources: list[ProgramSource | None] = []
    placeholders: list[Rendering | None] = []
    raised = 0
    for req in requests:
        try:
            resp = ctx.gateway.complete(req)
            if stats is not None:
                stats[stage] += 1
            sources.append(_extract_source(resp.text))
            placeholders.append(None)
        except ReplayMissError:
            raise
        except CodeExtractionError as exc:
            sources.append(None)
            placeholders.append(Rendering.protocol_error(f"no code block in response: {exc}"))
        except RecodeError as exc:
            raised += 1
            sources.append(None)
            placeholders.append(Rendering.protocol_error(f"generation call failed: {exc}"))
    if raised == len(requests):
        raise GenerationError(f"all {len(requests)} generation calls failed in stage {stage}")

    renderings = executor.render_many(
        sources, ctx.exec_limits, ctx.runner_cmd, parallelism=ctx.render_parallelism
    )
    candidates: list[Candidate] = []
    for ordinal, (src, rendering, placeholder) in enumerate(zip(sources, renderings, placeholders)):
        if src is None:
            assert placeholder is not None
            candidates.append(
                Candidate(
                    source=ProgramSource(text="# extraction failed", language_tag=""),
                    rendering=placeholder,
                    origin=origin,
                    ordinal=ordinal,
                )
            )
            continue
        assert rendering is not None
        src = replace(src, determinism_warnings=tuple(executor.lint_determinism(src)))
        candidates.append(Candidate(source=src, rendering=rendering, origin=origin, ordinal=ordinal))
    return candidates


def _extract_source(text: str) -> ProgramSource:
    from .prompts import extract_code_block

    return extract_code_block(text)


def generate_candidates(
    ctx: AgentContext,
    image: RasterImage,
    ocr: OcrResult,
    k: int,
    stats: Counter | None = None,
) -> list[Candidate]:
    """Round-0 generation: k derender calls, each rendered and packaged."""
    if k < 1:
        raise ValueError("k must be >= 1")
    slots = {"ocr_text": ocr.text} if ocr.text else {}
    prompt = ctx.prompt_library.build("derender", slots)
    png = encode_png(image)
    requests = []
    for i in range(k):
        # The ordinal salt keeps the k sampled calls distinguishable in the
        # replay cache.
        requests.append(
            ModelRequest(
                model_id=ctx.cfg.generation_model,
                parts=(TextPart(prompt), ImagePart(png), TextPart(f"candidate_ordinal: {i}")),
                temperature=ctx.cfg.generation_temperature,
                max_output_tokens=ctx.cfg.max_output_tokens,
            )
        )
    return _completion_candidates(ctx, requests, CandidateOrigin.initial(), stats, "generate")


def refine_round(
    ctx: AgentContext,
    image: RasterImage,
    seed: Candidate,
    k: int,
    round_index: int,
    stats: Counter | None = None,
) -> list[Candidate]:
    """One refinement round seeded by the current best candidate.

    Each call carries the seed code, the original image, then the seed's
    re-rendered image (order is fixed: it feeds the cache key). When
    keep_seed_in_pool is set the seed joins the pool with ordinal k, so ties
    prefer fresh refinements and a regression can never win.
    """
    if not seed.rendering.is_ok or seed.rendering.image is None:
        raise ValueError("refinement needs a seed with an ok rendering")
    prompt = ctx.prompt_library.build("refinement", {"code": seed.source.text})
    original_png = encode_png(image)
    seed_png = encode_png(seed.rendering.image)
    requests = []
    for i in range(k):
        requests.append(
            ModelRequest(
                model_id=ctx.cfg.generation_model,
                parts=(
                    TextPart(prompt),
                    ImagePart(original_png),
                    ImagePart(seed_png),
                    TextPart(f"candidate_ordinal: {i}"),
                ),
                temperature=ctx.cfg.generation_temperature,
                max_output_tokens=ctx.cfg.max_output_tokens,
            )
        )
    pool = _completion_candidates(
        ctx, requests, CandidateOrigin.refinement(round_index), stats, "refine"
    )
    if ctx.cfg.keep_seed_in_pool:
        pool.append(replace(seed, ordinal=k))
    return pool


def answer(
    ctx: AgentContext,
    image: RasterImage,
    code: ProgramSource | None,
    question: str,
    mode: str,
    stats: Counter | None = None,
) -> Answer:
    """One QA call in the given conditioning mode; the parsed answer comes back."""
    if mode not in _QA_TEMPLATES:
        raise ValueError(f"unknown qa mode {mode!r}")
    if mode in (QA_CODE_ONLY, QA_IMAGE_AND_CODE) and code is None:
        raise ValueError(f"qa mode {mode!r} requires code")
    slots: dict[str, object] = {"question": question}
    if mode != QA_IMAGE_ONLY:
        assert code is not None
        slots["code"] = code.text
    prompt = ctx.prompt_library.build(_QA_TEMPLATES[mode], slots)
    parts: list[TextPart | ImagePart] = [TextPart(prompt)]
    if mode != QA_CODE_ONLY:
        parts.append(ImagePart(encode_png(image)))
    req = ModelRequest(
        model_id=ctx.cfg.generation_model,
        parts=tuple(parts),
        temperature=0.0,
        max_output_tokens=ctx.cfg.max_output_tokens,
    )
    resp = ctx.gateway.complete(req)
    if stats is not None:
        stats["answer"] += 1
    try:
        return parse_answer(resp.text)
    except RecodeError as exc:
        raise PipelineError("answer", f"{exc}; raw response: {resp.text[:500]}") from exc


def _select_round(
    ctx: AgentContext,
    image: RasterImage,
    pool: list[Candidate],
    round_index: int,
    seed: Candidate | None,
    stats: Counter | None,
) -> RoundRecord:
    kind = ctx.cfg.critic
    ctx_critic = ctx.critic_context() if kind in critics.GATEWAY_KINDS else None
    before = ctx.gateway.completions_served
    scored = critics.score_candidates(image, pool, kind, ctx_critic)
    if stats is not None and kind in (critics.JUDGE_PAIRWISE, critics.JUDGE_COMPARATIVE):
        stats["judge"] += ctx.gateway.completions_served - before
    try:
        chosen: int | None = critics.select_best(scored, kind)
        all_failed = False
    except AllCandidatesFailedError:
        chosen = None
        all_failed = True
    return RoundRecord(
        round_index=round_index,
        candidates=tuple(scored),
        critic_kind_used=kind,
        chosen=chosen,
        seed_code=None if seed is None else seed.source,
        all_failed=all_failed,
    )


def run_derender(
    ctx: AgentContext,
    image_bytes: bytes,
    out_dir: str | Path | None = None,
    task_id: str | None = None,
    question: str | None = None,
    stats: Counter | None = None,
) -> Trajectory:
    """Run OCR, round-0 generation, and T critic-selected refinement rounds.

    The trajectory directory is rewritten after every round so partial runs
    stay inspectable. If round 0 produces no renderable candidate the
    trajectory is flagged all-failed and refinement is skipped (there is no
    seed program to refine).
    """
    stats = stats if stats is not None else Counter()
    cfg = ctx.cfg
    image = decode_image(image_bytes)
    input_hash = content_hash(image_bytes)
    task_id = task_id or input_hash[:12]

    def snapshot(rounds: list[RoundRecord], **kwargs) -> Trajectory:
        return Trajectory(
            task_id=task_id,
            input_hash=input_hash,
            config_snapshot=cfg,
            rounds=tuple(rounds),
            question=question,
            stats=dict(stats),
            **kwargs,
        )

    def persist(traj: Trajectory) -> None:
        if out_dir is not None:
            save_trajectory(traj, out_dir, input_bytes=image_bytes)

    ocr = extract_text(ctx, image, stats)
    _emit(ctx, "ocr_done", source=ocr.source, chars=len(ocr.text))

    rounds: list[RoundRecord] = []
    pool = generate_candidates(ctx, image, ocr, cfg.candidates_per_round, stats)
    record = _select_round(ctx, image, pool, 0, seed=None, stats=stats)
    rounds.append(record)
    _emit(
        ctx,
        "round_done",
        round_index=0,
        chosen=record.chosen,
        all_failed=record.all_failed,
        candidates=len(record.candidates),
    )

    if record.all_failed:
        traj = snapshot(rounds, ocr_text=ocr.text or None, all_failed=True)
        persist(traj)
        _emit(ctx, "derender_done", all_failed=True)
        return traj
    persist(snapshot(rounds, ocr_text=ocr.text or None))

    seed = record.chosen_candidate
    assert seed is not None
    for t in range(1, cfg.refinement_rounds + 1):
        pool = refine_round(ctx, image, seed, cfg.candidates_per_round, t, stats)
        record = _select_round(ctx, image, pool, t, seed=seed, stats=stats)
        rounds.append(record)
        _emit(
            ctx,
            "round_done",
            round_index=t,
            chosen=record.chosen,
            all_failed=record.all_failed,
            candidates=len(record.candidates),
        )
        if record.chosen_candidate is not None:
            seed = record.chosen_candidate
        # An all-failed refinement round (possible when the seed is not kept
        # in the pool) carries the previous seed forward.
        persist(snapshot(rounds, ocr_text=ocr.text or None))

    traj = snapshot(rounds, ocr_text=ocr.text or None, final_code=seed.source)
    persist(traj)
    _emit(ctx, "derender_done", all_failed=False, rounds=len(rounds))
    return traj


def run_task(
    ctx: AgentContext,
    image_bytes: bytes,
    question: str,
    out_dir: str | Path | None = None,
    task_id: str | None = None,
) -> tuple[Trajectory, Answer]:
    """Full pipeline: derender, then answer in the configured QA mode.

    When derendering failed outright the answer falls back to image-only so a
    response is always produced.
    """
    stats: Counter = Counter()
    traj = run_derender(ctx, image_bytes, out_dir=out_dir, task_id=task_id, question=question, stats=stats)
    image = decode_image(image_bytes)

    mode = ctx.cfg.qa_mode
    if traj.final_code is None and mode != QA_IMAGE_ONLY:
        mode = QA_IMAGE_ONLY
    final_answer = answer(ctx, image, traj.final_code, question, mode, stats)
    _emit(ctx, "answer_done", mode=mode, extracted=final_answer.extracted)

    traj = replace(
        traj,
        final_answer=final_answer,
        qa_mode_used=mode,
        question=question,
        stats=dict(stats),
    )
    if out_dir is not None:
        save_trajectory(traj, out_dir, input_bytes=image_bytes)
    return traj, final_answer
