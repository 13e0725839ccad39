#!/usr/bin/env python3
"""Run the full derender-select-refine-answer pipeline fully offline.

Replays the repository's shipped fixture cache (recorded once against a
scripted provider), so no network or API key is needed. Every model call is
served from tests/fixtures/e2e/cache; only the candidate programs actually
execute, through the recode-runner process.
"""

import sys
import tempfile
from pathlib import Path

REPO = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(REPO / "tests" / "helpers"))

import fixture_specs as spec

from recode.agent import AgentContext, run_task
from recode.gateway import Gateway
from recode.trajectory import load_trajectory

# 1. Wire a replay gateway at the shipped cache and the production runner.

ctx = AgentContext(
    gateway=Gateway(mode="replay", cache_dir=REPO / "tests" / "fixtures" / "e2e" / "cache"),
    cfg=spec.e2e_agent_config(),
    runner_cmd=[sys.executable, "-m", "recode_runner"],
)

# 2. Run the whole task: OCR, 5 candidates, 2 refinement rounds, QA.

input_bytes = (REPO / "tests" / "fixtures" / "e2e" / "input.png").read_bytes()
with tempfile.TemporaryDirectory(prefix="recode-demo-") as out_dir:
    trajectory, answer = run_task(ctx, input_bytes, spec.E2E_QUESTION, out_dir=out_dir)

    print(f"question: {spec.E2E_QUESTION}")
    print(f"rounds: {len(trajectory.rounds)} (1 initial + {ctx.cfg.refinement_rounds} refinement)")
    for rnd in trajectory.rounds:
        chosen = rnd.chosen_candidate
        print(
            f"  round {rnd.round_index}: {len(rnd.candidates)} candidates, "
            f"chosen ordinal {chosen.ordinal} with mse {chosen.scores['mse'].raw:.1f}"
        )
    print(f"model calls by stage: {dict(trajectory.stats)}")
    print(f"answer: {answer.extracted}")

    # 3. The trajectory directory on disk is diffable: JSON manifest plus a
    #    PNG and code file per candidate.
    files = sorted(p.relative_to(out_dir) for p in Path(out_dir).rglob("*") if p.is_file())
    print(f"\ntrajectory directory holds {len(files)} files, e.g.:")
    for path in files[:6]:
        print("   ", path)

    reloaded = load_trajectory(out_dir)
    assert reloaded.final_answer.extracted == answer.extracted
    print("\nreloaded trajectory matches the in-memory run")
