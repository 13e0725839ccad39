#!/usr/bin/env python3
"""Show the three model-output parsers on realistic responses.

A derendering response carries per-subfigure code chunks and one final
combined chunk (the executable one); QA responses end with a bracketed
answer; judge responses end with a rubric and a final verdict.
"""

from recode.prompts import build_prompt, extract_code_block, parse_answer, parse_verdict

# 1. Prompt construction: templates with slot substitution.

qa_prompt = build_prompt("qa_image_only", {"question": "Which bar is tallest?"})
print("QA prompt starts with:")
print(" ", qa_prompt.splitlines()[0][:88], "...")

derender_with_ocr = build_prompt("derender", {"ocr_text": "Title: Quarterly revenue; y-axis: USD"})
print("\nderender prompt embeds OCR context:", "Quarterly revenue" in derender_with_ocr)

# 2. Code extraction takes the LAST fenced block: the combined script.

derender_response = """Step 1: one subfigure.
Step 3 chunk for it:
```python
bars = [3, 5, 2]
```
Step 4, putting together:
```python
import numpy as np
bars = [3, 5, 2]
image_cv2 = np.full((40, 60, 3), 255, dtype=np.uint8)
```
"""
source = extract_code_block(derender_response)
print("\nextracted program (last block):")
for line in source.text.splitlines():
    print("   ", line)

# 3. Answer parsing keeps payloads verbatim, including quoted lists.

for response in [
    "The second bar is clearly tallest.\nAnswer: [[B]]",
    'Three groups stay in one quadrant.\nAnswer: [["Confucian", "Baltic", "Protestant"]]',
]:
    answer = parse_answer(response)
    print(f"\npayload: {answer.extracted!r}")
    print(f"reasoning: {answer.reasoning!r}")

# 4. Judge verdicts: four rubric lines mapped to 1..5, final line authoritative.

judge_response = """The original shows a two-series line chart; the generated image matches.
Analysis - Semantic Fidelity to Original: excellent
Analysis - Text & Label Accuracy: good
Analysis - Data Accuracy: fair
Analysis - Artifacts & Hallucinations: minor
Final verdict: [[4]]"""
verdict = parse_verdict(judge_response)
print(f"\nrubric scores: {dict(verdict.rubric_scores)}")
print(f"average {verdict.average}, final verdict {verdict.final}")
