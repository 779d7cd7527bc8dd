"""Canonical data model: triplet records, manifest persistence, splits, stats.

The manifest is line-delimited JSON (one record per line, UTF-8, sorted
keys) so it is streamable, diffable, and append-friendly for the review
log. Image files live by relative path next to the manifest.
"""

from __future__ import annotations

import json
import warnings
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np

DEFAULT_T2I_TEST_N = 300
DEFAULT_VIDEO_TEST_N = 200
DEFAULT_TOP_KEYWORDS = 20


class ValidationError(ValueError):
    """A record violates the data model; message names the offending field."""


class ManifestError(ValueError):
    """A manifest file could not be parsed; message lists line numbers."""


class World(str, Enum):
    REAL = "Real"
    VIRTUAL = "Virtual"


class InstructionCategory(str, Enum):
    LONG_TERM = "LongTerm"
    SPATIAL_TRANS = "SpatialTrans"
    PHYSICAL_TRANS = "PhysicalTrans"
    IMPLICIT_LOGIC = "ImplicitLogic"
    STORY_TYPE = "StoryType"
    REAL_TO_VIRTUAL = "RealToVirtual"
    EXAGGERATION = "Exaggeration"

    @property
    def world(self) -> World:
        return CATEGORY_WORLD[self]


# Each category keeps exactly one world tag, even where both data branches
# produce it.
CATEGORY_WORLD: dict[InstructionCategory, World] = {
    InstructionCategory.LONG_TERM: World.REAL,
    InstructionCategory.SPATIAL_TRANS: World.REAL,
    InstructionCategory.PHYSICAL_TRANS: World.REAL,
    InstructionCategory.IMPLICIT_LOGIC: World.REAL,
    InstructionCategory.STORY_TYPE: World.VIRTUAL,
    InstructionCategory.REAL_TO_VIRTUAL: World.VIRTUAL,
    InstructionCategory.EXAGGERATION: World.VIRTUAL,
}


class Branch(str, Enum):
    TEXT_TO_IMAGE = "TextToImage"
    VIDEO = "Video"


BRANCH_CATEGORIES: dict[Branch, frozenset[InstructionCategory]] = {
    Branch.TEXT_TO_IMAGE: frozenset(
        {
            InstructionCategory.LONG_TERM,
            InstructionCategory.PHYSICAL_TRANS,
            InstructionCategory.IMPLICIT_LOGIC,
            InstructionCategory.STORY_TYPE,
            InstructionCategory.REAL_TO_VIRTUAL,
        }
    ),
    Branch.VIDEO: frozenset(
        {
            InstructionCategory.SPATIAL_TRANS,
            InstructionCategory.PHYSICAL_TRANS,
            InstructionCategory.STORY_TYPE,
            InstructionCategory.EXAGGERATION,
        }
    ),
}


class ReviewStatus(str, Enum):
    PENDING = "Pending"
    APPROVED = "Approved"
    REJECTED = "Rejected"
    REVISED = "Revised"


@dataclass
class TripletRecord:
    """One input-instruction-output example with provenance and review state."""

    id: str
    input_image: str
    instruction: str
    output_image: str
    output_description: str
    category: InstructionCategory
    branch: Branch
    keywords: list[str] = field(default_factory=list)
    provenance: dict[str, Any] = field(default_factory=dict)
    review: ReviewStatus = ReviewStatus.PENDING
    review_note: str | None = None
    # Optimistic-concurrency counter bumped by every review decision.
    revision: int = 0

    def validate(self) -> None:
        if not self.id:
            raise ValidationError("id: must be non-empty")
        if not self.instruction or not self.instruction.strip():
            raise ValidationError(f"instruction: must be non-empty (record {self.id})")
        if not self.input_image:
            raise ValidationError(f"input_image: must be non-empty (record {self.id})")
        if not self.output_image:
            raise ValidationError(f"output_image: must be non-empty (record {self.id})")
        if self.input_image == self.output_image:
            raise ValidationError(
                f"output_image: must differ from input_image (record {self.id})"
            )
        allowed = BRANCH_CATEGORIES[self.branch]
        if self.category not in allowed:
            names = ", ".join(sorted(c.value for c in allowed))
            raise ValidationError(
                f"category: {self.category.value} not valid for branch {self.branch.value} "
                f"(allowed: {names}) (record {self.id})"
            )
        if self.revision < 0:
            raise ValidationError(f"revision: must be >= 0 (record {self.id})")

    def to_dict(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "input_image": self.input_image,
            "instruction": self.instruction,
            "output_image": self.output_image,
            "output_description": self.output_description,
            "category": self.category.value,
            "branch": self.branch.value,
            "keywords": list(self.keywords),
            "provenance": self.provenance,
            "review": self.review.value,
            "review_note": self.review_note,
            "revision": self.revision,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "TripletRecord":
        try:
            category = InstructionCategory(d["category"])
        except ValueError as exc:
            raise ValidationError(f"category: unknown value {d.get('category')!r}") from exc
        except KeyError as exc:
            raise ValidationError("category: missing") from exc
        try:
            branch = Branch(d["branch"])
        except ValueError as exc:
            raise ValidationError(f"branch: unknown value {d.get('branch')!r}") from exc
        except KeyError as exc:
            raise ValidationError("branch: missing") from exc
        try:
            review = ReviewStatus(d.get("review", "Pending"))
        except ValueError as exc:
            raise ValidationError(f"review: unknown value {d.get('review')!r}") from exc
        missing = [k for k in ("id", "input_image", "instruction", "output_image") if k not in d]
        if missing:
            raise ValidationError(f"{missing[0]}: missing")
        rec = cls(
            id=d["id"],
            input_image=d["input_image"],
            instruction=d["instruction"],
            output_image=d["output_image"],
            output_description=d.get("output_description", ""),
            category=category,
            branch=branch,
            keywords=list(d.get("keywords", [])),
            provenance=dict(d.get("provenance", {})),
            review=review,
            review_note=d.get("review_note"),
            revision=int(d.get("revision", 0)),
        )
        rec.validate()
        return rec


@dataclass(frozen=True)
class DatasetSplit:
    """Disjoint train/test id sets with the test composition per branch."""

    train_ids: frozenset[str]
    test_ids: frozenset[str]
    test_counts: dict[str, int]

    def __post_init__(self) -> None:
        overlap = self.train_ids & self.test_ids
        if overlap:
            raise ValidationError(f"train/test overlap on ids: {sorted(overlap)[:5]}")


@dataclass(frozen=True)
class StatsReport:
    """Counts per (branch, category) and top-K keywords by frequency."""

    counts: dict[tuple[str, str], int]
    top_keywords: list[tuple[str, int]]
    total: int

    def to_dict(self) -> dict[str, Any]:
        return {
            "total": self.total,
            "counts": [
                {"branch": b, "category": c, "count": n}
                for (b, c), n in sorted(self.counts.items())
            ],
            "top_keywords": [{"keyword": k, "count": n} for k, n in self.top_keywords],
        }

    def render_table(self) -> str:
        lines = [f"{'branch':<14}{'category':<16}{'count':>8}"]
        for (b, c), n in sorted(self.counts.items()):
            lines.append(f"{b:<14}{c:<16}{n:>8}")
        lines.append(f"{'total':<30}{self.total:>8}")
        if self.top_keywords:
            lines.append("")
            lines.append("top keywords:")
            for k, n in self.top_keywords:
                lines.append(f"  {k:<24}{n:>6}")
        return "\n".join(lines)


def write_manifest(records: Sequence[TripletRecord], path: str | Path) -> None:
    """Write one JSON record per line; everything is validated first."""
    for rec in records:
        rec.validate()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec.to_dict(), sort_keys=True, ensure_ascii=False))
            fh.write("\n")


def append_manifest(records: Sequence[TripletRecord], path: str | Path) -> None:
    """Append validated records to an existing (or new) manifest."""
    for rec in records:
        rec.validate()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("a", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec.to_dict(), sort_keys=True, ensure_ascii=False))
            fh.write("\n")


def read_manifest(path: str | Path) -> list[TripletRecord]:
    """Read and validate a manifest; bad lines are reported by line number."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"manifest not found: {path}")
    records: list[TripletRecord] = []
    errors: list[str] = []
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                payload = json.loads(line)
            except json.JSONDecodeError as exc:
                errors.append(f"line {lineno}: invalid JSON ({exc.msg})")
                continue
            try:
                records.append(TripletRecord.from_dict(payload))
            except ValidationError as exc:
                errors.append(f"line {lineno}: {exc}")
    if errors:
        raise ManifestError(f"manifest {path} has {len(errors)} bad line(s): " + "; ".join(errors))
    return records


def make_split(
    records: Sequence[TripletRecord],
    seed: int,
    t2i_test_n: int = DEFAULT_T2I_TEST_N,
    video_test_n: int = DEFAULT_VIDEO_TEST_N,
) -> DatasetSplit:
    """Deterministically sample the test set per branch; the rest trains.

    When a branch has fewer records than requested, the whole branch goes to
    test for as many as exist (min of available and requested) with a warning
    left to the caller via the realized counts.
    """
    rng = np.random.default_rng(seed)
    by_branch: dict[Branch, list[str]] = {b: [] for b in Branch}
    for rec in records:
        by_branch[rec.branch].append(rec.id)
    requested = {Branch.TEXT_TO_IMAGE: t2i_test_n, Branch.VIDEO: video_test_n}
    test_ids: set[str] = set()
    test_counts: dict[str, int] = {}
    for branch in (Branch.TEXT_TO_IMAGE, Branch.VIDEO):
        ids = sorted(by_branch[branch])
        n = min(len(ids), requested[branch])
        if n < requested[branch]:
            warnings.warn(
                f"{branch.value}: only {len(ids)} records available for a requested "
                f"test size of {requested[branch]}; taking {n}",
                RuntimeWarning,
                stacklevel=2,
            )
        chosen = rng.permutation(len(ids))[:n] if ids else []
        picked = {ids[i] for i in chosen}
        test_ids |= picked
        test_counts[branch.value] = n
    train_ids = {rec.id for rec in records} - test_ids
    return DatasetSplit(frozenset(train_ids), frozenset(test_ids), test_counts)


def dataset_stats(records: Iterable[TripletRecord], top_k: int = DEFAULT_TOP_KEYWORDS) -> StatsReport:
    """Count per (branch, category) and rank keywords by frequency.

    Keyword ties break lexicographically so reports are reproducible.
    """
    counts: Counter[tuple[str, str]] = Counter()
    keywords: Counter[str] = Counter()
    total = 0
    for rec in records:
        counts[(rec.branch.value, rec.category.value)] += 1
        keywords.update(rec.keywords)
        total += 1
    ranked = sorted(keywords.items(), key=lambda kv: (-kv[1], kv[0]))[:top_k]
    return StatsReport(dict(counts), ranked, total)
