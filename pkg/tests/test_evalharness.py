import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from recode import agent, evalharness
from recode.errors import DatasetError, JudgmentError
from recode.gateway import Gateway
from recode.images import RasterImage, encode_png
from recode.types import AgentConfig, Answer

from scripted import ScriptedProvider, fenced, request_texts


def _write_dataset(tmp_path, rows):
    img = tmp_path / "img.png"
    img.write_bytes(encode_png(RasterImage.from_array(np.full((8, 8, 3), 120, np.uint8))))
    lines = []
    for row in rows:
        row = dict(row)
        row.setdefault("image_path", "img.png")
        lines.append(json.dumps(row))
    path = tmp_path / "dataset.jsonl"
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


class TestLoadDataset:
    def test_three_valid_lines(self, tmp_path):
        path = _write_dataset(
            tmp_path,
            [
                {"id": "a", "question": "?", "gold": "1"},
                {"id": "b", "question": "?", "gold": "2"},
                {"id": "c", "question": "?", "gold": "3", "judge_policy": "relaxed_numeric"},
            ],
        )
        records = evalharness.load_dataset(path)
        assert len(records) == 3
        assert records[2].judge_policy == "relaxed_numeric"

    def test_missing_gold_reports_line(self, tmp_path):
        path = _write_dataset(
            tmp_path,
            [{"id": "a", "question": "?", "gold": "1"}, {"id": "b", "question": "?"}],
        )
        with pytest.raises(DatasetError, match="line 2"):
            evalharness.load_dataset(path)

    def test_duplicate_ids_rejected(self, tmp_path):
        path = _write_dataset(
            tmp_path,
            [{"id": "a", "question": "?", "gold": "1"}, {"id": "a", "question": "?", "gold": "2"}],
        )
        with pytest.raises(DatasetError, match="duplicate"):
            evalharness.load_dataset(path)

    def test_missing_image_rejected(self, tmp_path):
        path = _write_dataset(
            tmp_path, [{"id": "a", "question": "?", "gold": "1", "image_path": "gone.png"}]
        )
        with pytest.raises(DatasetError, match="image not found"):
            evalharness.load_dataset(path)


class TestJudgeAnswer:
    def test_exact_match(self):
        assert evalharness.judge_answer("7", "7", "exact")

    def test_exact_is_case_and_whitespace_insensitive(self):
        assert evalharness.judge_answer("  DPM-bart ", "dpm-BART", "exact")

    def test_relaxed_96_of_100_correct(self):
        assert evalharness.judge_answer("96", "100", "relaxed_numeric") is True

    def test_relaxed_94_of_100_incorrect(self):
        assert evalharness.judge_answer("94", "100", "relaxed_numeric") is False

    def test_relaxed_gold_zero_requires_zero(self):
        assert evalharness.judge_answer("0.0", "0", "relaxed_numeric") is True
        assert evalharness.judge_answer("0.001", "0", "relaxed_numeric") is False

    def test_relaxed_falls_back_to_exact_for_text(self):
        assert evalharness.judge_answer("foo", "foo", "relaxed_numeric") is True
        assert evalharness.judge_answer("foo", "bar", "relaxed_numeric") is False

    def test_answer_object_accepted(self):
        ans = Answer(raw_text="...\nAnswer: [[7]]", extracted="7")
        assert evalharness.judge_answer(ans, "7", "exact")

    @settings(max_examples=50, deadline=None)
    @given(
        pred=st.floats(-1000, 1000, allow_nan=False),
        gold=st.floats(-1000, 1000, allow_nan=False).filter(lambda g: abs(g) > 1e-6),
        t1=st.floats(0.0, 0.5),
        t2=st.floats(0.0, 0.5),
    )
    def test_widening_tolerance_never_flips_true_to_false(self, pred, gold, t1, t2):
        lo, hi = sorted((t1, t2))
        narrow = evalharness.judge_answer(str(pred), str(gold), "relaxed_numeric", tolerance=lo)
        wide = evalharness.judge_answer(str(pred), str(gold), "relaxed_numeric", tolerance=hi)
        assert not (narrow and not wide)

    def _model_ctx(self, reply: str):
        provider = ScriptedProvider(completion_fn=lambda req: reply)
        return agent.AgentContext(gateway=Gateway(mode="live", provider=provider), cfg=AgentConfig())

    def test_model_policy_correct(self):
        ctx = self._model_ctx("The prediction matches. correct")
        assert evalharness.judge_answer("7", "seven", "model", ctx, question="Q") is True

    def test_model_policy_incorrect(self):
        ctx = self._model_ctx("incorrect")
        assert evalharness.judge_answer("7", "9", "model", ctx, question="Q") is False

    def test_model_policy_unparseable_is_judgment_error(self):
        ctx = self._model_ctx("no verdict words here")
        with pytest.raises(JudgmentError):
            evalharness.judge_answer("7", "9", "model", ctx)


class TestAccuracy:
    def test_150_of_200(self):
        assert evalharness.accuracy([True] * 150 + [False] * 50) == 0.75

    def test_none_correct(self):
        assert evalharness.accuracy([False] * 7) == 0.0

    def test_all_correct(self):
        assert evalharness.accuracy([True] * 7) == 1.0

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            evalharness.accuracy([])


def _eval_completion(req):
    text = request_texts(req)[0]
    if text.startswith("You are an expert in Python"):
        return fenced(
            "import numpy as np\nimage_cv2 = np.full((8, 8, 3), 120, dtype=np.uint8)"
        )
    if text.startswith("Based on"):
        # Answer depends on the question so records get distinct predictions.
        if "easy" in text:
            return "Reasoning.\nAnswer: [[1]]"
        return "Reasoning.\nAnswer: [[999]]"
    raise AssertionError(f"unscripted: {text[:40]}")


class TestRunEval:
    def _ctx(self, stub_runner_cmd):
        return agent.AgentContext(
            gateway=Gateway(mode="live", provider=ScriptedProvider(completion_fn=_eval_completion)),
            cfg=AgentConfig(candidates_per_round=1, refinement_rounds=0, ocr="off", sandbox_timeout_s=30),
            runner_cmd=stub_runner_cmd,
        )

    def test_mixed_dataset_accuracy_and_report(self, tmp_path, stub_runner_cmd):
        path = _write_dataset(
            tmp_path,
            [
                {"id": "r1", "question": "easy one", "gold": "1"},
                {"id": "r2", "question": "easy two", "gold": "1"},
                {"id": "r3", "question": "hard one", "gold": "1"},
                {"id": "r4", "question": "hard two", "gold": "950", "judge_policy": "relaxed_numeric"},
            ],
        )
        records = evalharness.load_dataset(path)
        out = tmp_path / "report"
        report = evalharness.run_eval(records, self._ctx(stub_runner_cmd), out_dir=out)
        # r1, r2 exact-correct; r3 wrong; r4: 999 vs 950 is within 5.2%... -> 999-950=49 <= 47.5? no -> wrong
        assert report.correct == 2
        assert report.scored == 4
        assert report.accuracy == 0.5
        assert (out / "report.json").is_file()
        assert (out / "report.md").is_file()
        payload = json.loads((out / "report.json").read_text())
        assert payload["accuracy"] == 0.5

    def test_rerun_reproduces_accuracy(self, tmp_path, stub_runner_cmd):
        path = _write_dataset(
            tmp_path,
            [
                {"id": "r1", "question": "easy one", "gold": "1"},
                {"id": "r2", "question": "hard one", "gold": "1"},
            ],
        )
        records = evalharness.load_dataset(path)
        first = evalharness.run_eval(records, self._ctx(stub_runner_cmd))
        second = evalharness.run_eval(records, self._ctx(stub_runner_cmd))
        assert first.accuracy == second.accuracy == 0.5

    def test_record_failure_is_incorrect_not_fatal(self, tmp_path, stub_runner_cmd):
        # The broken record uses a distinct (red) image; its generation call
        # always raises, which with k=1 means the whole record errors out.
        from recode.errors import TransportError
        from recode.gateway import ImagePart
        from recode.images import decode_image

        red = tmp_path / "red.png"
        red.write_bytes(encode_png(RasterImage.from_array(np.full((8, 8, 3), (255, 0, 0), np.uint8))))

        def completion(req):
            for part in req.parts:
                if isinstance(part, ImagePart):
                    if decode_image(part.png).to_array()[0, 0, 0] == 255:
                        raise TransportError("provider down")
            return _eval_completion(req)

        ctx = self._ctx(stub_runner_cmd)
        ctx.gateway = Gateway(mode="live", provider=ScriptedProvider(completion_fn=completion))
        path = _write_dataset(
            tmp_path,
            [
                {"id": "ok", "question": "easy", "gold": "1"},
                {"id": "broken", "question": "boom", "gold": "1", "image_path": "red.png"},
            ],
        )
        records = evalharness.load_dataset(path)
        report = evalharness.run_eval(records, ctx)
        by_id = {r.id: r for r in report.records}
        assert by_id["ok"].correct is True
        # k=1 and the only generation call raised, so the record is scored
        # incorrect-with-error rather than aborting the sweep
        assert by_id["broken"].correct is False
        assert by_id["broken"].error
        assert report.scored == 2
        assert report.accuracy == 0.5

    def test_unrenderable_record_flagged_as_image_only_fallback(self, tmp_path, stub_runner_cmd):
        def completion(req):
            text = request_texts(req)[0]
            if text.startswith("You are an expert in Python"):
                return "the model declined to produce code for this one"
            if text.startswith("Based on the input image"):
                return "Counting directly from pixels.\nAnswer: [[1]]"
            raise AssertionError(f"unscripted: {text[:40]}")

        ctx = self._ctx(stub_runner_cmd)
        ctx.gateway = Gateway(mode="live", provider=ScriptedProvider(completion_fn=completion))
        path = _write_dataset(tmp_path, [{"id": "nofit", "question": "count?", "gold": "1"}])
        report = evalharness.run_eval(evalharness.load_dataset(path), ctx)
        record = report.records[0]
        assert record.qa_mode_used == "image_only"
        assert record.correct is True
        assert report.accuracy == 1.0
