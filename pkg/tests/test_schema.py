"""Data-model tests: manifest round-trips, splits, stats."""

from __future__ import annotations

import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from editforge.schema import (
    BRANCH_CATEGORIES,
    Branch,
    DatasetSplit,
    InstructionCategory,
    ManifestError,
    ReviewStatus,
    TripletRecord,
    ValidationError,
    World,
    dataset_stats,
    make_split,
    read_manifest,
    write_manifest,
)


def make_record(
    idx: int = 0,
    branch: Branch = Branch.TEXT_TO_IMAGE,
    category: InstructionCategory = InstructionCategory.STORY_TYPE,
    keywords: list[str] | None = None,
) -> TripletRecord:
    return TripletRecord(
        id=f"rec-{branch.value.lower()}-{idx:04d}",
        input_image=f"images/{idx:04d}_in.png",
        instruction=f"What would happen if scenario {idx} unfolded?",
        output_image=f"images/{idx:04d}_out.png",
        output_description=f"The scene after scenario {idx}",
        category=category,
        branch=branch,
        keywords=keywords if keywords is not None else ["balloon"],
        provenance={"seed": idx, "adapter_versions": {"t2i_denoiser": "mock-t2i/1"}},
    )


# --- category/world and branch tables ----------------------------------------


def test_world_tags():
    real = {"LongTerm", "SpatialTrans", "PhysicalTrans", "ImplicitLogic"}
    for cat in InstructionCategory:
        expected = World.REAL if cat.value in real else World.VIRTUAL
        assert cat.world is expected


def test_branch_category_tables():
    t2i = {c.value for c in BRANCH_CATEGORIES[Branch.TEXT_TO_IMAGE]}
    video = {c.value for c in BRANCH_CATEGORIES[Branch.VIDEO]}
    assert t2i == {"LongTerm", "PhysicalTrans", "ImplicitLogic", "StoryType", "RealToVirtual"}
    assert video == {"SpatialTrans", "PhysicalTrans", "StoryType", "Exaggeration"}


def test_video_cannot_carry_long_term():
    rec = make_record(1, branch=Branch.VIDEO, category=InstructionCategory.LONG_TERM)
    with pytest.raises(ValidationError, match="category"):
        rec.validate()


def test_record_field_validation():
    rec = make_record(2)
    rec.instruction = "  "
    with pytest.raises(ValidationError, match="instruction"):
        rec.validate()
    rec = make_record(3)
    rec.output_image = rec.input_image
    with pytest.raises(ValidationError, match="output_image"):
        rec.validate()


# --- manifest round-trips ----------------------------------------------------


def test_write_manifest_empty(tmp_path):
    path = tmp_path / "manifest.jsonl"
    write_manifest([], path)
    assert path.read_text() == ""
    assert read_manifest(path) == []


def test_manifest_round_trip_single(tmp_path):
    path = tmp_path / "manifest.jsonl"
    rec = make_record(7)
    write_manifest([rec], path)
    assert len(path.read_text().splitlines()) == 1
    assert read_manifest(path) == [rec]


def test_write_rejects_invalid_record(tmp_path):
    rec = make_record(1, branch=Branch.VIDEO, category=InstructionCategory.LONG_TERM)
    with pytest.raises(ValidationError, match="category"):
        write_manifest([rec], tmp_path / "m.jsonl")


def test_read_reports_corrupt_line_number(tmp_path):
    path = tmp_path / "manifest.jsonl"
    write_manifest([make_record(i) for i in range(3)], path)
    lines = path.read_text().splitlines()
    lines[1] = lines[1][: len(lines[1]) // 2]  # truncate the middle record
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(ManifestError, match="line 2"):
        read_manifest(path)


def test_read_reports_unknown_category(tmp_path):
    path = tmp_path / "manifest.jsonl"
    payload = make_record(1).to_dict()
    payload["category"] = "Impossible"
    path.write_text(json.dumps(payload) + "\n")
    with pytest.raises(ManifestError, match="category"):
        read_manifest(path)


def test_read_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        read_manifest(tmp_path / "nope.jsonl")


def test_write_unwritable_path(tmp_path):
    blocker = tmp_path / "blocker"
    blocker.write_text("a plain file")
    with pytest.raises(OSError):
        write_manifest([make_record(0)], blocker / "manifest.jsonl")


_branches = st.sampled_from(list(Branch))


@st.composite
def records(draw):
    branch = draw(_branches)
    category = draw(st.sampled_from(sorted(BRANCH_CATEGORIES[branch], key=lambda c: c.value)))
    idx = draw(st.integers(0, 10**6))
    instruction = draw(st.text(min_size=1).filter(lambda s: s.strip()))
    keywords = draw(st.lists(st.text(min_size=1, max_size=8), max_size=4))
    rec = make_record(idx, branch=branch, category=category, keywords=keywords)
    rec.instruction = instruction
    rec.review = draw(st.sampled_from(list(ReviewStatus)))
    rec.review_note = draw(st.none() | st.text(max_size=20))
    rec.revision = draw(st.integers(0, 5))
    return rec


@settings(max_examples=60, deadline=None)
@given(recs=st.lists(records(), max_size=8))
def test_round_trip_identity_property(tmp_path_factory, recs):
    # ids may collide across draws; de-duplicate to keep the fixture valid
    unique = {r.id: r for r in recs}
    recs = list(unique.values())
    path = tmp_path_factory.mktemp("m") / "manifest.jsonl"
    write_manifest(recs, path)
    assert read_manifest(path) == recs


# --- splits ------------------------------------------------------------------


def test_make_split_default_test_composition():
    recs = [make_record(i) for i in range(500)] + [
        make_record(1000 + i, branch=Branch.VIDEO, category=InstructionCategory.EXAGGERATION)
        for i in range(300)
    ]
    split = make_split(recs, seed=7)
    assert split.test_counts == {"TextToImage": 300, "Video": 200}
    assert len(split.test_ids) == 500
    assert len(split.train_ids) == len(recs) - 500
    assert not (split.train_ids & split.test_ids)


def test_make_split_empty():
    split = make_split([], seed=0)
    assert split.test_ids == frozenset() and split.train_ids == frozenset()
    assert split.test_counts == {"TextToImage": 0, "Video": 0}


def test_make_split_deterministic():
    recs = [make_record(i) for i in range(40)]
    a = make_split(recs, seed=3, t2i_test_n=10)
    b = make_split(recs, seed=3, t2i_test_n=10)
    assert a == b
    c = make_split(recs, seed=4, t2i_test_n=10)
    assert a.test_ids != c.test_ids


def test_make_split_shrinks_when_short_and_warns():
    recs = [make_record(i) for i in range(5)]
    with pytest.warns(RuntimeWarning, match="only 5 records"):
        split = make_split(recs, seed=1)
    assert split.test_counts["TextToImage"] == 5
    assert len(split.train_ids) == 0


def test_split_rejects_overlap():
    with pytest.raises(ValidationError):
        DatasetSplit(frozenset({"a"}), frozenset({"a"}), {})


# --- stats -------------------------------------------------------------------


def test_stats_hand_count():
    recs = [
        make_record(0, category=InstructionCategory.STORY_TYPE),
        make_record(1, category=InstructionCategory.STORY_TYPE),
        make_record(2, branch=Branch.VIDEO, category=InstructionCategory.EXAGGERATION),
    ]
    report = dataset_stats(recs)
    assert report.counts == {
        ("TextToImage", "StoryType"): 2,
        ("Video", "Exaggeration"): 1,
    }
    assert report.total == 3
    assert sum(report.counts.values()) == len(recs)


def test_stats_top_k_and_ties():
    recs = [
        make_record(0, keywords=["a", "a", "b"]),
        make_record(1, keywords=[]),
    ]
    assert dataset_stats(recs, top_k=1).top_keywords == [("a", 2)]
    recs = [make_record(0, keywords=["b", "a"])]
    # equal counts break lexicographically
    assert dataset_stats(recs, top_k=1).top_keywords == [("a", 1)]


def test_stats_render_table_mentions_all_cells():
    recs = [make_record(0), make_record(1, branch=Branch.VIDEO, category=InstructionCategory.STORY_TYPE)]
    table = dataset_stats(recs).render_table()
    assert "TextToImage" in table and "Video" in table and "total" in table
