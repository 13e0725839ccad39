"""Trajectory persistence: one JSON manifest plus sibling PNG and code files.

Layout of a trajectory directory:

    trajectory.json          manifest (schema below)
    input.png                byte-identical copy of the input image
    round_<r>/cand_<i>.png   rendering of candidate i (ok candidates only)
    round_<r>/cand_<i>.code.txt  program text of candidate i

Images are referenced from the manifest by relative path and content hash so
logs stay diffable and inspectable. Infinite scores are serialized as the
strings "inf"/"-inf", never as floats.
"""

from __future__ import annotations

import dataclasses
import json
import math
from pathlib import Path
from typing import Any

from .errors import TrajectoryFormatError
from .images import content_hash, decode_image, encode_png
from .types import (
    AgentConfig,
    Answer,
    Candidate,
    CandidateOrigin,
    CriticScore,
    ProgramSource,
    Rendering,
    RoundRecord,
    Trajectory,
)

SCHEMA_VERSION = 1

MANIFEST_NAME = "trajectory.json"
INPUT_NAME = "input.png"


def _num_to_json(value: float) -> Any:
    if math.isinf(value):
        return "inf" if value > 0 else "-inf"
    return value


def _num_from_json(value: Any) -> float:
    if value == "inf":
        return math.inf
    if value == "-inf":
        return -math.inf
    return float(value)


def _score_to_json(score: CriticScore) -> dict:
    return {
        "kind": score.kind,
        "raw": _num_to_json(score.raw),
        "orientation": score.orientation,
        "normalized": _num_to_json(score.normalized),
    }


def _score_from_json(obj: dict) -> CriticScore:
    return CriticScore(
        kind=obj["kind"],
        raw=_num_from_json(obj["raw"]),
        orientation=obj["orientation"],
        normalized=_num_from_json(obj["normalized"]),
    )


def _source_to_json(src: ProgramSource) -> dict:
    return {
        "text": src.text,
        "language_tag": src.language_tag,
        "determinism_warnings": [list(w) for w in src.determinism_warnings],
    }


def _source_from_json(obj: dict) -> ProgramSource:
    return ProgramSource(
        text=obj["text"],
        language_tag=obj.get("language_tag", ""),
        determinism_warnings=tuple((int(s), int(e), t) for s, e, t in obj.get("determinism_warnings", [])),
    )


def _write_candidate_files(root: Path, round_index: int, cand: Candidate) -> dict:
    round_dir = root / f"round_{round_index}"
    round_dir.mkdir(parents=True, exist_ok=True)
    code_rel = f"round_{round_index}/cand_{cand.ordinal}.code.txt"
    (root / code_rel).write_text(cand.source.text, encoding="utf-8")

    rendering = cand.rendering
    entry: dict[str, Any] = {
        "ordinal": cand.ordinal,
        "origin": {"kind": cand.origin.kind, "round_index": cand.origin.round_index},
        "code_path": code_rel,
        "code_sha256": content_hash(cand.source.text.encode("utf-8")),
        "language_tag": cand.source.language_tag,
        "determinism_warnings": [list(w) for w in cand.source.determinism_warnings],
        "scores": {k: _score_to_json(v) for k, v in sorted(cand.scores.items())},
        "rendering": {
            "status": rendering.status,
            "wall_time_ms": rendering.wall_time_ms,
            "message": rendering.message,
            "exit_class": rendering.exit_class,
            "stderr_tail": rendering.stderr_tail,
        },
    }
    if rendering.is_ok and rendering.image is not None:
        png = encode_png(rendering.image)
        image_rel = f"round_{round_index}/cand_{cand.ordinal}.png"
        (root / image_rel).write_bytes(png)
        entry["rendering"].update(
            {
                "image_path": image_rel,
                "image_sha256": content_hash(png),
                "width": rendering.image.width,
                "height": rendering.image.height,
            }
        )
    return entry


def _round_to_json(root: Path, rnd: RoundRecord) -> dict:
    return {
        "round_index": rnd.round_index,
        "critic_kind_used": rnd.critic_kind_used,
        "chosen": rnd.chosen,
        "all_failed": rnd.all_failed,
        "seed_code": None if rnd.seed_code is None else _source_to_json(rnd.seed_code),
        "candidates": [_write_candidate_files(root, rnd.round_index, c) for c in rnd.candidates],
    }


def save_trajectory(traj: Trajectory, directory: str | Path, input_bytes: bytes | None = None) -> Path:
    """Write the whole trajectory directory; safe to call after every round."""
    root = Path(directory)
    root.mkdir(parents=True, exist_ok=True)
    if input_bytes is not None:
        (root / INPUT_NAME).write_bytes(input_bytes)
    manifest = {
        "schema_version": SCHEMA_VERSION,
        "task_id": traj.task_id,
        "input_hash": traj.input_hash,
        "question": traj.question,
        "ocr_text": traj.ocr_text,
        "all_failed": traj.all_failed,
        "qa_mode_used": traj.qa_mode_used,
        "config": dataclasses.asdict(traj.config_snapshot),
        "stats": dict(traj.stats),
        "rounds": [_round_to_json(root, rnd) for rnd in traj.rounds],
        "final_code": None if traj.final_code is None else _source_to_json(traj.final_code),
        "final_answer": None
        if traj.final_answer is None
        else {
            "raw_text": traj.final_answer.raw_text,
            "extracted": traj.final_answer.extracted,
            "reasoning": traj.final_answer.reasoning,
        },
    }
    (root / MANIFEST_NAME).write_text(
        json.dumps(manifest, ensure_ascii=False, indent=1), encoding="utf-8"
    )
    return root


def _candidate_from_json(root: Path, obj: dict) -> Candidate:
    rend = obj["rendering"]
    if rend["status"] == "ok":
        png = (root / rend["image_path"]).read_bytes()
        if content_hash(png) != rend["image_sha256"]:
            raise TrajectoryFormatError(f"image hash mismatch for {rend['image_path']}")
        rendering = Rendering.ok(
            decode_image(png), rend["wall_time_ms"], stderr_tail=rend.get("stderr_tail", "")
        )
    else:
        rendering = Rendering(
            status=rend["status"],
            wall_time_ms=rend["wall_time_ms"],
            message=rend.get("message", ""),
            exit_class=rend.get("exit_class", ""),
            stderr_tail=rend.get("stderr_tail", ""),
        )
    text = (root / obj["code_path"]).read_text(encoding="utf-8")
    if content_hash(text.encode("utf-8")) != obj["code_sha256"]:
        raise TrajectoryFormatError(f"code hash mismatch for {obj['code_path']}")
    source = ProgramSource(
        text=text,
        language_tag=obj.get("language_tag", ""),
        determinism_warnings=tuple((int(s), int(e), t) for s, e, t in obj.get("determinism_warnings", [])),
    )
    origin = CandidateOrigin(kind=obj["origin"]["kind"], round_index=obj["origin"]["round_index"])
    scores = {k: _score_from_json(v) for k, v in obj.get("scores", {}).items()}
    return Candidate(
        source=source, rendering=rendering, scores=scores, origin=origin, ordinal=obj["ordinal"]
    )


def load_trajectory(directory: str | Path) -> Trajectory:
    root = Path(directory)
    manifest_path = root / MANIFEST_NAME
    if not manifest_path.is_file():
        raise TrajectoryFormatError(f"no {MANIFEST_NAME} under {root}")
    try:
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise TrajectoryFormatError(f"unreadable manifest: {exc}") from exc
    if manifest.get("schema_version") != SCHEMA_VERSION:
        raise TrajectoryFormatError(f"unsupported schema version {manifest.get('schema_version')!r}")

    rounds = []
    for rnd in manifest["rounds"]:
        rounds.append(
            RoundRecord(
                round_index=rnd["round_index"],
                candidates=tuple(_candidate_from_json(root, c) for c in rnd["candidates"]),
                critic_kind_used=rnd["critic_kind_used"],
                chosen=rnd["chosen"],
                seed_code=None if rnd["seed_code"] is None else _source_from_json(rnd["seed_code"]),
                all_failed=rnd["all_failed"],
            )
        )
    final_answer = None
    if manifest.get("final_answer") is not None:
        ans = manifest["final_answer"]
        final_answer = Answer(
            raw_text=ans["raw_text"], extracted=ans["extracted"], reasoning=ans.get("reasoning", "")
        )
    return Trajectory(
        task_id=manifest["task_id"],
        input_hash=manifest["input_hash"],
        config_snapshot=AgentConfig(**manifest["config"]),
        rounds=tuple(rounds),
        ocr_text=manifest.get("ocr_text"),
        final_code=None if manifest.get("final_code") is None else _source_from_json(manifest["final_code"]),
        final_answer=final_answer,
        question=manifest.get("question"),
        qa_mode_used=manifest.get("qa_mode_used"),
        all_failed=manifest.get("all_failed", False),
        stats=dict(manifest.get("stats", {})),
    )


def comparable_view(traj: Trajectory) -> dict:
    """Structure used for replay-verification equality: drops volatile fields.

    Wall times and stderr tails vary between runs; everything that matters for
    determinism (codes, outcomes, scores, selections, the answer) stays.
    """
    rounds = []
    for rnd in traj.rounds:
        cands = []
        for cand in rnd.candidates:
            cands.append(
                {
                    "ordinal": cand.ordinal,
                    "origin": (cand.origin.kind, cand.origin.round_index),
                    "code_sha256": content_hash(cand.source.text.encode("utf-8")),
                    "status": cand.rendering.status,
                    "exit_class": cand.rendering.exit_class,
                    "image_sha256": content_hash(encode_png(cand.rendering.image))
                    if cand.rendering.is_ok and cand.rendering.image is not None
                    else None,
                    "scores": {k: _score_to_json(v) for k, v in sorted(cand.scores.items())},
                }
            )
        rounds.append(
            {
                "round_index": rnd.round_index,
                "critic_kind_used": rnd.critic_kind_used,
                "chosen": rnd.chosen,
                "all_failed": rnd.all_failed,
                "candidates": cands,
            }
        )
    return {
        "input_hash": traj.input_hash,
        "question": traj.question,
        "ocr_text": traj.ocr_text,
        "all_failed": traj.all_failed,
        "qa_mode_used": traj.qa_mode_used,
        "rounds": rounds,
        "final_code": None if traj.final_code is None else traj.final_code.text,
        "final_answer": None if traj.final_answer is None else traj.final_answer.extracted,
        "final_answer_raw": None if traj.final_answer is None else traj.final_answer.raw_text,
    }
