"""Operator entry points: derender, answer, evaluate, critique, replay-verify.

Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import math
import sys
from pathlib import Path

from . import critics
from .agent import run_derender, run_task
from .config import load_config, make_agent_context
from .errors import ConfigError, RecodeError
from .evalharness import load_dataset, run_eval, write_sweep_summary
from .gateway import REPLAY
from .images import decode_image
from .trajectory import comparable_view, load_trajectory
from .types import QA_IMAGE_ONLY


def _read_image(path: str) -> bytes:
    p = Path(path)
    if not p.is_file():
        raise RecodeError(f"image file not found: {path}")
    return p.read_bytes()


def _fmt_score(value: float) -> str:
    if math.isinf(value):
        return "inf" if value > 0 else "-inf"
    return f"{value:.4f}"


def _print_round_table(traj) -> None:
    print("round  chosen  candidates  score")
    for rnd in traj.rounds:
        cand = rnd.chosen_candidate
        score = "-"
        if cand is not None and rnd.critic_kind_used in cand.scores:
            score = _fmt_score(cand.scores[rnd.critic_kind_used].raw)
        chosen = "-" if rnd.chosen is None else str(rnd.chosen)
        print(f"{rnd.round_index:>5}  {chosen:>6}  {len(rnd.candidates):>10}  {score}")


def _agent_overrides(args: argparse.Namespace) -> dict:
    return {
        "refinement_rounds": getattr(args, "rounds", None),
        "candidates_per_round": getattr(args, "candidates", None),
        "critic": getattr(args, "critic", None),
    }


def _wire_progress(ctx, args: argparse.Namespace) -> None:
    if getattr(args, "progress", False):
        ctx.event_sink = sys.stderr


def cmd_derender(args: argparse.Namespace) -> int:
    config = load_config(args.config)
    ctx = make_agent_context(config, agent_overrides=_agent_overrides(args))
    _wire_progress(ctx, args)
    image_bytes = _read_image(args.image)
    traj = run_derender(ctx, image_bytes, out_dir=args.out)
    _print_round_table(traj)
    if traj.all_failed:
        print("derendering failed: no candidate rendered")
    print(f"trajectory written to {args.out}")
    return 0


def cmd_answer(args: argparse.Namespace) -> int:
    config = load_config(args.config)
    ctx = make_agent_context(config, agent_overrides=_agent_overrides(args))
    _wire_progress(ctx, args)
    image_bytes = _read_image(args.image)
    traj, answer = run_task(ctx, image_bytes, args.question, out_dir=args.out)
    _print_round_table(traj)
    if traj.qa_mode_used == QA_IMAGE_ONLY and ctx.cfg.qa_mode != QA_IMAGE_ONLY:
        print("note: derendering produced no code; answered in mode=image_only")
    print(f"Answer: {answer.extracted}")
    return 0


def cmd_evaluate(args: argparse.Namespace) -> int:
    config = load_config(args.config)
    records = load_dataset(args.dataset)
    out_root = Path(args.out)
    sweep = [c.strip() for c in args.sweep_critic.split(",") if c.strip()] if args.sweep_critic else []

    if not sweep:
        ctx = make_agent_context(config, agent_overrides=_agent_overrides(args))
        report = run_eval(records, ctx, out_dir=out_root, parallelism=int(config.get("eval.parallelism", 1)))
        print(f"accuracy: {report.accuracy:.4f} ({report.correct}/{report.scored}, {report.unscored} unscored)")
        print(f"report written to {out_root}")
        return 0

    reports = {}
    for critic_kind in sweep:
        if critic_kind not in critics.ALL_KINDS:
            raise ConfigError(f"unknown critic {critic_kind!r} in --sweep-critic")
        overrides = _agent_overrides(args)
        overrides["critic"] = critic_kind
        ctx = make_agent_context(config, agent_overrides=overrides)
        report = run_eval(
            records,
            ctx,
            out_dir=out_root / critic_kind,
            parallelism=int(config.get("eval.parallelism", 1)),
        )
        reports[critic_kind] = report
        print(f"critic={critic_kind}: accuracy {report.accuracy:.4f}")
    write_sweep_summary(reports, out_root)
    print(f"sweep summary written to {out_root / 'sweep.md'}")
    return 0


def cmd_critique(args: argparse.Namespace) -> int:
    config = load_config(args.config)
    original = decode_image(_read_image(args.original))
    kind = args.metric
    ctx = None
    if kind in critics.GATEWAY_KINDS:
        agent_ctx = make_agent_context(config)
        ctx = agent_ctx.critic_context()

    aligned = []
    for path in args.candidates:
        candidate = decode_image(_read_image(path))
        aligned.append(critics.align(original, candidate)[1])

    if kind == critics.JUDGE_COMPARATIVE:
        ranking = critics.judge_comparative(original, aligned, ctx)
        for position, idx in enumerate(ranking, start=1):
            print(f"{args.candidates[idx]}: rank {position}")
        print(f"best: {ranking[0]}")
        return 0

    per_image = {
        critics.MSE: critics.mse,
        critics.SSIM: critics.ssim,
        critics.PSNR: critics.psnr,
        critics.EMD: critics.emd,
    }
    raws: list[float] = []
    for path, candidate in zip(args.candidates, aligned):
        if kind in per_image:
            raw = per_image[kind](original, candidate)
        elif kind in (critics.EMBED_L2, critics.EMBED_COS):
            raw = critics.embedding_distance(original, candidate, kind, ctx)
        else:
            raw = critics.judge_pairwise(original, candidate, ctx)
        raws.append(raw)
        print(f"{path}: {_fmt_score(raw)}")

    normalized = [critics.make_score(kind, raw).normalized for raw in raws]
    best = min(range(len(normalized)), key=lambda i: normalized[i])
    print(f"best: {best}")
    return 0


def cmd_replay_verify(args: argparse.Namespace) -> int:
    config = load_config(args.config)
    root = Path(args.trajectory_dir)
    stored = load_trajectory(root)
    input_png = root / "input.png"
    if not input_png.is_file():
        raise RecodeError(f"trajectory has no input.png under {root}")

    ctx = make_agent_context(config, mode=REPLAY)
    ctx.cfg = stored.config_snapshot

    import tempfile

    with tempfile.TemporaryDirectory(prefix="recode-verify-") as tmp:
        if stored.question is not None:
            fresh, _ = run_task(
                ctx, input_png.read_bytes(), stored.question, out_dir=tmp, task_id=stored.task_id
            )
        else:
            fresh = run_derender(ctx, input_png.read_bytes(), out_dir=tmp, task_id=stored.task_id)

    a = comparable_view(stored)
    b = comparable_view(fresh)
    if a == b:
        print("replay-verify: OK (stored trajectory matches a fresh replay)")
        return 0
    diff = _first_difference(a, b)
    print(f"replay-verify: MISMATCH at {diff}", file=sys.stderr)
    return 1


def _first_difference(a, b, path: str = "$") -> str:
    if type(a) is not type(b):
        return f"{path}: type {type(a).__name__} != {type(b).__name__}"
    if isinstance(a, dict):
        for key in sorted(set(a) | set(b)):
            if key not in a or key not in b:
                return f"{path}.{key}: missing on one side"
            if a[key] != b[key]:
                return _first_difference(a[key], b[key], f"{path}.{key}")
    if isinstance(a, (list, tuple)):
        if len(a) != len(b):
            return f"{path}: length {len(a)} != {len(b)}"
        for i, (x, y) in enumerate(zip(a, b)):
            if x != y:
                return _first_difference(x, y, f"{path}[{i}]")
    return f"{path}: {a!r} != {b!r}"


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="recode",
        description="Reverse-engineer chart images into executable plotting programs and answer questions about them.",
    )
    parser.add_argument("--config", default=None, help="path to recode.json (default ./recode.json)")
    sub = parser.add_subparsers(dest="command", required=True)

    p_der = sub.add_parser("derender", help="derender an image into a trajectory directory")
    p_der.add_argument("image")
    p_der.add_argument("--rounds", type=int, default=None, help="refinement rounds T")
    p_der.add_argument("--candidates", type=int, default=None, help="candidates per round k")
    p_der.add_argument("--critic", choices=critics.ALL_KINDS, default=None)
    p_der.add_argument("--out", required=True, help="trajectory output directory")
    p_der.add_argument("--progress", action="store_true", help="emit JSON progress events on stderr")
    p_der.set_defaults(func=cmd_derender)

    p_ans = sub.add_parser("answer", help="derender then answer a question")
    p_ans.add_argument("image")
    p_ans.add_argument("question")
    p_ans.add_argument("--rounds", type=int, default=None)
    p_ans.add_argument("--candidates", type=int, default=None)
    p_ans.add_argument("--critic", choices=critics.ALL_KINDS, default=None)
    p_ans.add_argument("--out", required=True)
    p_ans.add_argument("--progress", action="store_true", help="emit JSON progress events on stderr")
    p_ans.set_defaults(func=cmd_answer)

    p_eval = sub.add_parser("evaluate", help="run the QA evaluation harness over a JSONL dataset")
    p_eval.add_argument("dataset")
    p_eval.add_argument("--out", required=True)
    p_eval.add_argument("--rounds", type=int, default=None)
    p_eval.add_argument("--candidates", type=int, default=None)
    p_eval.add_argument("--critic", choices=critics.ALL_KINDS, default=None)
    p_eval.add_argument("--sweep-critic", default=None, help="comma-separated critic kinds to sweep")
    p_eval.set_defaults(func=cmd_evaluate)

    p_crit = sub.add_parser("critique", help="score candidate images against an original")
    p_crit.add_argument("original")
    p_crit.add_argument("candidates", nargs="+")
    p_crit.add_argument("--metric", choices=critics.ALL_KINDS, default=critics.MSE)
    p_crit.set_defaults(func=cmd_critique)

    p_ver = sub.add_parser("replay-verify", help="re-run a trajectory against the cache and compare")
    p_ver.add_argument("trajectory_dir")
    p_ver.set_defaults(func=cmd_replay_verify)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except RecodeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
