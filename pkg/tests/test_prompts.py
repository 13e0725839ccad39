import re

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from recode.errors import AnswerParseError, CodeExtractionError, TemplateError, VerdictParseError
from recode.prompts import (
    PromptLibrary,
    TEMPLATE_NAMES,
    build_prompt,
    extract_code_block,
    parse_answer,
    parse_verdict,
)

SLOT_MARKER_RE = re.compile(r"\{(question|code|ocr_text|candidate_count)\}")

FULL_SLOTS = {
    "question": "What is the highest bar?",
    "code": "x = 1",
    "ocr_text": "Title: Revenue by quarter",
    "candidate_count": 3,
}


class TestBuildPrompt:
    def test_qa_image_only_contains_question_and_answer_format(self):
        text = build_prompt("qa_image_only", {"question": "Q"})
        assert "answer the question: Q" in text
        assert 'Answer: [[...]]' in text

    def test_derender_without_ocr_has_no_context_block(self):
        text = build_prompt("derender", {})
        assert "OCR" not in text
        assert "image_cv2" in text

    def test_derender_with_ocr_embeds_text(self):
        text = build_prompt("derender", {"ocr_text": "Title: Foo"})
        assert "Title: Foo" in text
        assert text.index("Title: Foo") > text.index("image_cv2")

    def test_refinement_embeds_code(self):
        text = build_prompt("refinement", {"code": "X"})
        assert "modifying the following code:\nX" in text

    def test_missing_slot_names_the_slot(self):
        with pytest.raises(TemplateError, match="question"):
            build_prompt("qa_image_only", {})

    def test_unknown_template_rejected(self):
        with pytest.raises(TemplateError):
            build_prompt("nonexistent", {})

    @pytest.mark.parametrize("name", TEMPLATE_NAMES)
    def test_no_unfilled_slot_markers_after_build(self, name):
        text = build_prompt(name, FULL_SLOTS)
        assert not SLOT_MARKER_RE.search(text)

    def test_determinism_clause_removal(self):
        with_clause = build_prompt("derender", {})
        library = PromptLibrary(determinism_clause=False)
        without = library.build("derender", {})
        assert "randomness" in with_clause
        assert "randomness" not in without

    def test_directory_override(self, tmp_path):
        (tmp_path / "qa_image_only.txt").write_text("custom {question}", encoding="utf-8")
        library = PromptLibrary(directory=tmp_path)
        assert library.build("qa_image_only", {"question": "Q"}) == "custom Q"


class TestExtractCodeBlock:
    def test_single_block(self):
        src = extract_code_block("text ```python\nx=1\n``` more")
        assert src.text == "x=1"
        assert src.language_tag == "python"

    def test_two_blocks_takes_the_last(self):
        response = (
            "Step 3 chunk:\n```python\nper_subfigure = True\n```\n"
            "Step 4, putting together:\n```python\nfinal = True\n```\n"
        )
        assert extract_code_block(response).text == "final = True"

    def test_no_fences_raises_with_response_attached(self):
        with pytest.raises(CodeExtractionError) as excinfo:
            extract_code_block("no code here at all")
        assert excinfo.value.response_text == "no code here at all"

    def test_fences_are_stripped(self):
        src = extract_code_block("```\ny = 2\n```")
        assert "```" not in src.text
        assert src.language_tag == ""

    def test_stable_under_surrounding_prose_mutations(self):
        block = "```python\nz = 3\n```"
        for prose in ("intro", "a much longer paragraph\nwith lines", ""):
            assert extract_code_block(f"{prose}\n{block}\nafter").text == "z = 3"


class TestParseAnswer:
    def test_numeric_payload(self):
        ans = parse_answer("reasoning...\nAnswer: [[7]]")
        assert ans.extracted == "7"
        assert ans.reasoning == "reasoning..."

    def test_entity_payload(self):
        assert parse_answer("...\nAnswer: [[DPM-BART]]").extracted == "DPM-BART"

    def test_quoted_list_payload_kept_verbatim(self):
        ans = parse_answer('...\nAnswer: [["Confucian", "Baltic", "Protestant"]]')
        assert ans.extracted == '"Confucian", "Baltic", "Protestant"'

    def test_last_marker_wins(self):
        ans = parse_answer("Answer: [[first]]\nmore\nAnswer: [[second]]")
        assert ans.extracted == "second"

    def test_missing_marker_raises(self):
        with pytest.raises(AnswerParseError):
            parse_answer("no answer anywhere")

    def test_unbalanced_brackets_raise(self):
        with pytest.raises(AnswerParseError):
            parse_answer("Answer: [[never closed")

    @settings(max_examples=50, deadline=None)
    @given(payload=st.text(min_size=0, max_size=40).filter(lambda s: "]]" not in s))
    def test_parse_of_formatted_payload_is_identity(self, payload):
        ans = parse_answer(f"Some reasoning.\nAnswer: [[{payload}]]")
        assert ans.extracted == payload.strip()
        assert "]]" not in ans.extracted


def _verdict_response(words, final):
    labels = [
        "Semantic Fidelity to Original",
        "Text & Label Accuracy",
        "Data Accuracy",
        "Artifacts & Hallucinations",
    ]
    lines = [f"Analysis - {label}: {word}" for label, word in zip(labels, words)]
    return "Described both images.\n" + "\n".join(lines) + f"\nFinal verdict: [[{final}]]"


class TestParseVerdict:
    def test_all_excellent_none_is_five(self):
        verdict = parse_verdict(_verdict_response(["excellent", "excellent", "excellent", "none"], "5"))
        assert verdict.average == 5.0
        assert verdict.final == 5.0

    def test_mixed_rubric_mean_four(self):
        verdict = parse_verdict(_verdict_response(["excellent", "good", "fair", "minor"], "4"))
        assert verdict.average == pytest.approx(4.0)
        assert verdict.final == 4.0

    def test_missing_final_verdict_raises(self):
        response = _verdict_response(["good", "good", "good", "minor"], "4").rsplit("\n", 1)[0]
        with pytest.raises(VerdictParseError, match="Final verdict"):
            parse_verdict(response)

    def test_unknown_word_named_in_error(self):
        with pytest.raises(VerdictParseError, match="superb"):
            parse_verdict(_verdict_response(["superb", "good", "good", "minor"], "4"))

    def test_inconsistent_final_rejected(self):
        with pytest.raises(VerdictParseError, match="disagrees"):
            parse_verdict(_verdict_response(["excellent", "excellent", "excellent", "none"], "3"))

    def test_final_within_tolerance_is_authoritative(self):
        verdict = parse_verdict(_verdict_response(["excellent", "good", "good", "minor"], "4.25"))
        assert verdict.final == 4.25

    @settings(max_examples=40, deadline=None)
    @given(
        words=st.lists(
            st.sampled_from(["excellent", "good", "fair", "bad", "terrible"]),
            min_size=4,
            max_size=4,
        )
    )
    def test_average_always_in_range(self, words):
        mapping = {"excellent": 5, "good": 4, "fair": 3, "bad": 2, "terrible": 1}
        mean = sum(mapping[w] for w in words) / 4
        verdict = parse_verdict(_verdict_response(words, f"{mean:g}"))
        assert 1.0 <= verdict.average <= 5.0
