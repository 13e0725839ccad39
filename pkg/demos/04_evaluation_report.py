#!/usr/bin/env python3
"""Evaluate QA accuracy over the shipped 20-record replay dataset.

Demonstrates the judging policies (exact and relaxed-numeric, including the
5% boundary behavior) and the report files the harness emits.
"""

import sys
import tempfile
from pathlib import Path

REPO = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(REPO / "tests" / "helpers"))

import fixture_specs as spec

from recode.agent import AgentContext
from recode.evalharness import judge_answer, load_dataset, run_eval
from recode.gateway import Gateway

# 1. The relaxed-numeric policy in isolation: 5% relative tolerance.

for predicted, gold in [("96", "100"), ("94", "100"), ("0", "0")]:
    verdict = judge_answer(predicted, gold, "relaxed_numeric")
    print(f"relaxed_numeric: predicted {predicted:>3} vs gold {gold:>3} -> {verdict}")

# 2. Full harness run over the shipped dataset, replayed offline.

dataset = load_dataset(REPO / "tests" / "fixtures" / "eval" / "dataset.jsonl")
ctx = AgentContext(
    gateway=Gateway(mode="replay", cache_dir=REPO / "tests" / "fixtures" / "eval" / "cache"),
    cfg=spec.eval_agent_config(),
    runner_cmd=[sys.executable, "-m", "recode_runner"],
)

with tempfile.TemporaryDirectory(prefix="recode-eval-demo-") as out_dir:
    report = run_eval(dataset, ctx, out_dir=out_dir)
    print(f"\naccuracy: {report.accuracy:.2%} ({report.correct}/{report.scored} scored)")
    print(f"model calls: {dict(report.call_counts)}")
    wrong = [r.id for r in report.records if r.correct is False]
    print(f"incorrect records: {', '.join(wrong)}")
    print(f"report files: {[p.name for p in Path(out_dir).iterdir() if p.is_file()]}")
