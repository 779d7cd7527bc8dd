"""Regeneration pipelines for reviewer-requested do-overs.

A regeneration re-runs the record's originating branch with the reviewer's
hint folded into the LLM prompts. Text-to-image records get a full fresh
generation (optionally through an alternate image backend); video records
get their storyline re-rewritten from the stored description, keeping the
extracted frames. The replacement record enters the queue as Pending with
a provenance link back to its parent.
"""

from __future__ import annotations

import dataclasses
from pathlib import Path
from typing import Callable

from .adapters.registry import AdapterRegistry, get_adapter
from .config import EditMathConfig, ForgeConfig, T2IBranchConfig, VideoBranchConfig
from .editmath import NoiseSchedule
from .schema import Branch, ReviewStatus, TripletRecord
from .seeding import derive_seed
from .t2i_branch import _build_record, propose_quadruples
from .video_branch import rewrite_instruction


class RegenerationError(RuntimeError):
    """The replacement record could not be produced; the original stays Pending."""


def regenerate_t2i_record(
    record: TripletRecord,
    hint: str | None,
    registry: AdapterRegistry,
    config: T2IBranchConfig,
    math_config: EditMathConfig,
    images_root: str | Path,
) -> TripletRecord:
    """Fresh quadruple and image pair for one record, hint applied."""
    parent_seed = int(record.provenance.get("seed", record.provenance.get("run_seed", 0)))
    new_seed = derive_seed(parent_seed, "regen", record.revision)
    quads, _ = propose_quadruples(
        record.category, 1, registry.text_llm, config.retry_budget, hint=hint
    )
    if not quads:
        raise RegenerationError("quadruple proposal failed")
    schedule = NoiseSchedule.linear(math_config.schedule_steps)
    outcome = _build_record(
        quads[0],
        record.category,
        0,
        registry,
        config,
        math_config,
        schedule,
        Path(images_root) / "images",
        new_seed,
        hint,
        record_id=f"{record.id}-r{record.revision}",
    )
    if outcome.record is None:
        raise RegenerationError(f"replacement dropped at stage {outcome.dropped_at}")
    replacement = outcome.record
    replacement.provenance["parent"] = record.id
    return replacement


def regenerate_video_record(
    record: TripletRecord,
    hint: str | None,
    registry: AdapterRegistry,
    config: VideoBranchConfig,
) -> TripletRecord:
    """Re-rewrite the stored storyline description; frames are kept."""
    description = str(record.provenance.get("description", ""))
    if not description:
        raise RegenerationError("record carries no storyline description to rewrite")
    rewrite = rewrite_instruction(description, registry.text_llm, config.retry_budget, hint)
    if rewrite is None:
        raise RegenerationError("instruction rewrite failed")
    replacement = TripletRecord.from_dict(record.to_dict())
    replacement.id = f"{record.id}-r{record.revision}"
    replacement.instruction = rewrite.instruction
    replacement.output_description = rewrite.output_description
    replacement.category = rewrite.category
    replacement.review = ReviewStatus.PENDING
    replacement.review_note = None
    replacement.revision = 0
    replacement.provenance = {
        **record.provenance,
        "parent": record.id,
        "adapter_versions": registry.versions(),
        **({"hint": hint} if hint else {}),
    }
    replacement.validate()
    return replacement


def make_regenerator(
    registry: AdapterRegistry,
    cfg: ForgeConfig,
    images_root: str | Path,
) -> Callable[[TripletRecord, str | None], TripletRecord]:
    """Branch-dispatching regeneration callable for the review worker.

    When ``review.alternate_t2i`` is configured, text-to-image replacements
    run through that backend instead and are flagged in provenance.
    """
    t2i_registry = registry
    alternate = cfg.review.alternate_t2i
    if alternate:
        t2i_registry = dataclasses.replace(
            registry, t2i_denoiser=get_adapter("t2i_denoiser", alternate, cfg.seed)
        )

    def regenerate(record: TripletRecord, hint: str | None) -> TripletRecord:
        if record.branch is Branch.TEXT_TO_IMAGE:
            replacement = regenerate_t2i_record(
                record, hint, t2i_registry, cfg.t2i, cfg.editmath, images_root
            )
            if alternate:
                replacement.provenance["alternate_t2i"] = t2i_registry.t2i_denoiser.version
            return replacement
        return regenerate_video_record(record, hint, registry, cfg.video)

    return regenerate
