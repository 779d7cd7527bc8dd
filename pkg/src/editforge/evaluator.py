"""Metric harness: CLIP score per (branch, category), binary multimodal
judge score per branch, optional perceptual distance, and the grouped
report. Unevaluable and missing records are counted, never silently
dropped."""

from __future__ import annotations

import logging
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Any, Mapping, Sequence

import numpy as np

from .adapters.base import AdapterError, Judge, MetricClip, MetricLpips, parse_binary_verdict
from .schema import TripletRecord

logger = logging.getLogger(__name__)

# The judge prompt for the binary edit-success score. The metric is
# prompt-sensitive, so this template is frozen verbatim and golden-tested;
# do not reflow or "fix" its wording.
MLLM_SCORE_PROMPT_TEMPLATE = (
    "The input description {input_text}, the editing instruction {instruction}, "
    "and the output description {output_text}. Please evaluate if the given edited "
    "image has been successfully edited. if you think editing is successful, "
    "just give me 1, else if you think editing fails, just give me 0"
)


def build_mllm_prompt(input_text: str, instruction: str, output_text: str) -> str:
    return MLLM_SCORE_PROMPT_TEMPLATE.format(
        input_text=input_text, instruction=instruction, output_text=output_text
    )


def clip_score(image: np.ndarray, description: str, metric: MetricClip) -> float:
    """Image-text similarity for the output description."""
    if not description.strip():
        raise ValueError("output description must be non-empty")
    return float(metric.score(image, description))


def mllm_score(
    image: np.ndarray,
    input_text: str,
    instruction: str,
    output_text: str,
    judge: Judge,
) -> int | None:
    """Binary edit-success verdict; None when unparseable after one retry."""
    prompt = build_mllm_prompt(input_text, instruction, output_text)
    verdict = parse_binary_verdict(judge.verdict(image, prompt))
    if verdict is None:
        verdict = parse_binary_verdict(judge.verdict(image, prompt))
    return verdict


def lpips_score(image_a: np.ndarray, image_b: np.ndarray, metric: MetricLpips) -> float:
    a, b = np.asarray(image_a), np.asarray(image_b)
    if a.shape != b.shape:
        raise ValueError(f"image shapes differ: {a.shape} vs {b.shape}")
    return float(metric.distance(a, b))


@dataclass
class CellStats:
    """One aggregation cell; count + unevaluable + missing == total seen."""

    values: list[float] = field(default_factory=list)
    unevaluable: int = 0
    missing: int = 0

    @property
    def count(self) -> int:
        return len(self.values)

    @property
    def mean(self) -> float | None:
        return float(np.mean(self.values)) if self.values else None

    def to_dict(self) -> dict[str, Any]:
        return {
            "mean": self.mean,
            "count": self.count,
            "unevaluable": self.unevaluable,
            "missing": self.missing,
        }


@dataclass
class EvalReport:
    """CLIP by category within branch, judge score by branch and category.

    ``per_record`` keeps the raw value behind every aggregate so reports
    are auditable record by record.
    """

    clip: dict[tuple[str, str], CellStats] = field(default_factory=dict)
    mllm_by_branch: dict[str, CellStats] = field(default_factory=dict)
    mllm_by_category: dict[tuple[str, str], CellStats] = field(default_factory=dict)
    lpips: CellStats | None = None
    per_record: dict[str, dict[str, Any]] = field(default_factory=dict)
    adapter_versions: dict[str, str] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        return {
            "clip": [
                {"branch": b, "category": c, **stats.to_dict()}
                for (b, c), stats in sorted(self.clip.items())
            ],
            "mllm_by_branch": {b: s.to_dict() for b, s in sorted(self.mllm_by_branch.items())},
            "mllm_by_category": [
                {"branch": b, "category": c, **stats.to_dict()}
                for (b, c), stats in sorted(self.mllm_by_category.items())
            ],
            "lpips": self.lpips.to_dict() if self.lpips else None,
            "per_record": {rid: dict(vals) for rid, vals in sorted(self.per_record.items())},
            "adapter_versions": self.adapter_versions,
        }

    def render_table(self) -> str:
        def fmt(mean: float | None) -> str:
            return f"{mean:.4f}" if mean is not None else "--"

        lines = [f"{'branch':<14}{'category':<16}{'CLIP':>8}{'n':>5}{'unev':>6}{'miss':>6}"]
        for (b, c), s in sorted(self.clip.items()):
            lines.append(f"{b:<14}{c:<16}{fmt(s.mean):>8}{s.count:>5}{s.unevaluable:>6}{s.missing:>6}")
        lines.append("")
        lines.append(f"{'branch':<14}{'judge score':>12}{'n':>5}{'unev':>6}{'miss':>6}")
        for b, s in sorted(self.mllm_by_branch.items()):
            lines.append(f"{b:<14}{fmt(s.mean):>12}{s.count:>5}{s.unevaluable:>6}{s.missing:>6}")
        if self.lpips is not None:
            lines.append("")
            lines.append(f"LPIPS vs input: {fmt(self.lpips.mean)} over {self.lpips.count}")
        return "\n".join(lines)


def evaluate_run(
    records: Sequence[TripletRecord],
    outputs: Mapping[str, np.ndarray],
    metric_clip: MetricClip,
    judge: Judge,
    metric_lpips: MetricLpips | None = None,
    inputs: Mapping[str, np.ndarray] | None = None,
) -> EvalReport:
    """Score a method's outputs over a test split and group the results.

    ``outputs`` maps record id to the method's edited image; records with
    no output are counted missing in every cell they belong to. When
    ``metric_lpips`` and ``inputs`` are given, the report also carries the
    mean perceptual distance between outputs and inputs.
    """
    report = EvalReport()
    clip_cells: dict[tuple[str, str], CellStats] = defaultdict(CellStats)
    mllm_branch: dict[str, CellStats] = defaultdict(CellStats)
    mllm_cat: dict[tuple[str, str], CellStats] = defaultdict(CellStats)
    lpips_cell = CellStats() if metric_lpips is not None else None
    per_record: dict[str, dict[str, Any]] = {}
    for rec in records:
        key = (rec.branch.value, rec.category.value)
        image = outputs.get(rec.id)
        if image is None:
            clip_cells[key].missing += 1
            mllm_branch[rec.branch.value].missing += 1
            mllm_cat[key].missing += 1
            if lpips_cell is not None:
                lpips_cell.missing += 1
            per_record[rec.id] = {"missing": True}
            continue
        row: dict[str, Any] = {}
        try:
            value = clip_score(image, rec.output_description, metric_clip)
            clip_cells[key].values.append(value)
            row["clip"] = value
        except (AdapterError, ValueError) as exc:
            logger.warning("CLIP score unevaluable for %s: %s", rec.id, exc)
            clip_cells[key].unevaluable += 1
            row["clip"] = None
        input_text = rec.provenance.get("input_prompt", rec.output_description)
        verdict = mllm_score(image, input_text, rec.instruction, rec.output_description, judge)
        row["mllm"] = verdict
        if verdict is None:
            mllm_branch[rec.branch.value].unevaluable += 1
            mllm_cat[key].unevaluable += 1
        else:
            mllm_branch[rec.branch.value].values.append(float(verdict))
            mllm_cat[key].values.append(float(verdict))
        if lpips_cell is not None and inputs is not None and rec.id in inputs:
            distance = lpips_score(image, inputs[rec.id], metric_lpips)
            lpips_cell.values.append(distance)
            row["lpips"] = distance
        per_record[rec.id] = row
    report.clip = dict(clip_cells)
    report.mllm_by_branch = dict(mllm_branch)
    report.mllm_by_category = dict(mllm_cat)
    report.lpips = lpips_cell
    report.per_record = per_record
    report.adapter_versions = {
        "metric_clip": metric_clip.version,
        "judge": judge.version,
        **({"metric_lpips": metric_lpips.version} if metric_lpips else {}),
    }
    return report
