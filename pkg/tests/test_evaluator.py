"""Evaluator tests: golden prompt, verdict parsing, grouped report arithmetic."""

from __future__ import annotations

import numpy as np
import pytest

from editforge.adapters import (
    MockMetricLpips,
    ScriptedJudge,
    ScriptedMetricClip,
    build_registry,
)
from editforge.evaluator import (
    MLLM_SCORE_PROMPT_TEMPLATE,
    build_mllm_prompt,
    clip_score,
    evaluate_run,
    lpips_score,
    mllm_score,
)
from editforge.schema import Branch, InstructionCategory, TripletRecord
from tests.conftest import gray_image

# Frozen copy of the scoring prompt. If this test fails, the metric changed
# meaning; bump deliberately, never casually.
GOLDEN_TEMPLATE = (
    "The input description {input_text}, the editing instruction {instruction}, "
    "and the output description {output_text}. Please evaluate if the given edited "
    "image has been successfully edited. if you think editing is successful, "
    "just give me 1, else if you think editing fails, just give me 0"
)


def record(idx: int, branch=Branch.TEXT_TO_IMAGE, category=InstructionCategory.STORY_TYPE):
    return TripletRecord(
        id=f"rec-{idx}",
        input_image=f"in{idx}.png",
        instruction=f"instruction {idx}",
        output_image=f"out{idx}.png",
        output_description=f"description {idx}",
        category=category,
        branch=branch,
        provenance={"input_prompt": f"input text {idx}"},
    )


# --- prompt golden test ----------------------------------------------------------


def test_prompt_template_is_golden():
    assert MLLM_SCORE_PROMPT_TEMPLATE == GOLDEN_TEMPLATE


def test_prompt_substitution():
    prompt = build_mllm_prompt("a cat", "make it jump", "a jumping cat")
    assert prompt.startswith("The input description a cat, the editing instruction make it jump")
    assert "the output description a jumping cat." in prompt
    assert prompt.endswith("just give me 0")


# --- single-metric calls ------------------------------------------------------------


def test_clip_score_scripted_constant():
    metric = ScriptedMetricClip([0.25])
    assert clip_score(gray_image(0.5), "something", metric) == 0.25
    with pytest.raises(ValueError):
        clip_score(gray_image(0.5), "  ", ScriptedMetricClip([0.25]))


def test_mllm_score_parses_prose():
    assert mllm_score(gray_image(0.1), "a", "b", "c", ScriptedJudge(["1"])) == 1
    assert mllm_score(gray_image(0.1), "a", "b", "c", ScriptedJudge(["I think 0."])) == 0


def test_mllm_score_retry_then_unevaluable():
    judge = ScriptedJudge(["no idea", "1"])
    assert mllm_score(gray_image(0.1), "a", "b", "c", judge) == 1
    judge = ScriptedJudge(["no", "still no"])
    assert mllm_score(gray_image(0.1), "a", "b", "c", judge) is None


def test_mllm_judge_receives_golden_prompt():
    judge = ScriptedJudge(["1"])
    mllm_score(gray_image(0.1), "IN", "EDIT", "OUT", judge)
    assert judge.prompts == [build_mllm_prompt("IN", "EDIT", "OUT")]


def test_lpips_identical_zero_and_symmetry():
    lpips = MockMetricLpips()
    a, b = gray_image(0.2), gray_image(0.7)
    assert lpips_score(a, a, lpips) == 0.0
    assert lpips_score(a, b, lpips) == lpips_score(b, a, lpips)
    with pytest.raises(ValueError):
        lpips_score(a, gray_image(0.5, (2, 2)), lpips)


# --- grouped report -------------------------------------------------------------------


def test_evaluate_run_hand_arithmetic():
    records = [record(i) for i in range(4)]
    outputs = {r.id: gray_image(0.5) for r in records}
    # CLIP returns index/10 in call order; judge verdicts [1, 1, 0, 1]
    metric = ScriptedMetricClip([0.0, 0.1, 0.2, 0.3])
    judge = ScriptedJudge(["1", "1", "0", "1"])
    report = evaluate_run(records, outputs, metric, judge)
    cell = report.clip[("TextToImage", "StoryType")]
    assert cell.mean == pytest.approx((0.0 + 0.1 + 0.2 + 0.3) / 4)
    assert cell.count == 4
    mllm = report.mllm_by_branch["TextToImage"]
    assert mllm.mean == pytest.approx(0.75)
    # raw values are kept per record id
    assert report.per_record["rec-2"] == {"clip": 0.2, "mllm": 0}
    assert report.per_record["rec-3"]["mllm"] == 1


def test_evaluate_run_all_pass_mean_one():
    records = [record(i) for i in range(3)]
    outputs = {r.id: gray_image(0.4) for r in records}
    report = evaluate_run(
        records, outputs, ScriptedMetricClip([0.2] * 3), ScriptedJudge(["1"] * 3)
    )
    assert report.mllm_by_branch["TextToImage"].mean == 1.0


def test_evaluate_run_missing_outputs_counted():
    records = [record(i) for i in range(3)]
    outputs = {"rec-0": gray_image(0.4)}
    report = evaluate_run(
        records, outputs, ScriptedMetricClip([0.2]), ScriptedJudge(["1"])
    )
    cell = report.clip[("TextToImage", "StoryType")]
    assert cell.count == 1 and cell.missing == 2
    assert cell.count + cell.unevaluable + cell.missing == 3
    assert report.per_record["rec-1"] == {"missing": True}


def test_evaluate_run_empty_category_omitted():
    records = [record(0)]
    report = evaluate_run(
        records,
        {"rec-0": gray_image(0.2)},
        ScriptedMetricClip([0.2]),
        ScriptedJudge(["1"]),
    )
    assert ("TextToImage", "LongTerm") not in report.clip


def test_branch_mean_decomposes_over_categories():
    records = (
        [record(i, category=InstructionCategory.STORY_TYPE) for i in range(3)]
        + [record(10 + i, category=InstructionCategory.LONG_TERM) for i in range(2)]
    )
    outputs = {r.id: gray_image(0.3) for r in records}
    verdicts = ["1", "0", "1", "1", "0"]
    report = evaluate_run(
        records, outputs, ScriptedMetricClip([0.2] * 5), ScriptedJudge(verdicts)
    )
    branch_mean = report.mllm_by_branch["TextToImage"].mean
    weighted = sum(
        s.mean * s.count for s in report.mllm_by_category.values() if s.count
    ) / sum(s.count for s in report.mllm_by_category.values())
    assert branch_mean == pytest.approx(weighted)


def test_evaluate_run_unevaluable_separated():
    records = [record(i) for i in range(2)]
    outputs = {r.id: gray_image(0.6) for r in records}
    judge = ScriptedJudge(["garbled", "asdf", "1"])  # first record burns the retry
    report = evaluate_run(records, outputs, ScriptedMetricClip([0.2, 0.2]), judge)
    cell = report.mllm_by_branch["TextToImage"]
    assert cell.unevaluable == 1 and cell.count == 1
    assert cell.mean == 1.0


def test_evaluate_run_with_lpips_table():
    records = [record(0)]
    out_img, in_img = gray_image(0.5), gray_image(0.3)
    report = evaluate_run(
        records,
        {"rec-0": out_img},
        ScriptedMetricClip([0.2]),
        ScriptedJudge(["1"]),
        metric_lpips=MockMetricLpips(),
        inputs={"rec-0": in_img},
    )
    assert report.lpips is not None
    assert report.lpips.mean == pytest.approx(0.2)


def test_report_render_table_runs():
    records = [record(0), record(1, branch=Branch.VIDEO, category=InstructionCategory.STORY_TYPE)]
    outputs = {r.id: gray_image(0.4) for r in records}
    reg = build_registry(base_seed=0)
    report = evaluate_run(records, outputs, reg.metric_clip, reg.judge)
    table = report.render_table()
    assert "TextToImage" in table and "Video" in table
    assert report.to_dict()["mllm_by_branch"]["Video"]["count"] == 1
