"""Video data branch.

Per clip: drop blurry frames, pick the (start, end) frame pair with the
most dynamics subject to an identity-consistency floor, caption the
storyline, and rewrite the caption into a world instruction with one of
the four video-branch categories.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np
from scipy import ndimage

from .adapters.base import AdapterError, Captioner, ImageEncoder, TextLLM
from .adapters.registry import AdapterRegistry
from .config import VideoBranchConfig
from .imgio import image_digest, load_image, save_image
from .schema import (
    BRANCH_CATEGORIES,
    Branch,
    InstructionCategory,
    ReviewStatus,
    TripletRecord,
    append_manifest,
)
from .t2i_branch import Attrition, BranchRunResult, _strip_code_fence

logger = logging.getLogger(__name__)

VIDEO_CATEGORY_NAMES = sorted(c.value for c in BRANCH_CATEGORIES[Branch.VIDEO])


@dataclass(frozen=True)
class FramePairScore:
    """Identity consistency and dynamics for a candidate (i, j) frame pair."""

    identity: float
    dynamics: float
    frame_indices: tuple[int, int]

    def __post_init__(self) -> None:
        i, j = self.frame_indices
        if i >= j:
            raise ValueError(f"frame pair must be ordered, got ({i}, {j})")


def sharpness(frame: np.ndarray) -> float:
    """Variance of the Laplacian; low values flag blurry frames."""
    arr = np.asarray(frame, dtype=np.float64)
    gray = arr.mean(axis=2) if arr.ndim == 3 else arr
    return float(ndimage.laplace(gray).var())


def _cosine_identity(f_a: np.ndarray, f_b: np.ndarray) -> float:
    na, nb = np.linalg.norm(f_a), np.linalg.norm(f_b)
    if na == 0.0 and nb == 0.0:
        return 1.0
    if na == 0.0 or nb == 0.0:
        return 0.0
    cos = float(np.dot(f_a, f_b) / (na * nb))
    return min(max(cos, 0.0), 1.0)


def score_frame_pair(
    frame_a: np.ndarray,
    frame_b: np.ndarray,
    encoder: ImageEncoder,
    identity_weight: float = 0.5,
    pixel_weight: float = 0.5,
    frame_indices: tuple[int, int] = (0, 1),
) -> FramePairScore:
    """Identity = clamped feature cosine; dynamics mixes (1-identity) with
    mean absolute pixel difference, both already in [0, 1]."""
    a = np.asarray(frame_a, dtype=np.float64)
    b = np.asarray(frame_b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"frame shapes differ: {a.shape} vs {b.shape}")
    identity = _cosine_identity(encoder.encode(a), encoder.encode(b))
    pixel_delta = float(np.abs(a - b).mean())
    dynamics = identity_weight * (1.0 - identity) + pixel_weight * pixel_delta
    return FramePairScore(identity, dynamics, frame_indices)


def select_pair(
    frames: Sequence[np.ndarray],
    encoder: ImageEncoder,
    identity_min: float = 0.6,
    window: int = 3,
    identity_weight: float = 0.5,
    pixel_weight: float = 0.5,
) -> FramePairScore | None:
    """Best (start, end) pair within the first/last ``window`` frames.

    Maximizes dynamics subject to identity >= identity_min; None when no
    pair qualifies or fewer than two frames exist.
    """
    n = len(frames)
    if n < 2:
        return None
    starts = range(0, min(window, n))
    ends = range(max(0, n - window), n)
    best: FramePairScore | None = None
    for i in starts:
        for j in ends:
            if i >= j:
                continue
            score = score_frame_pair(
                frames[i], frames[j], encoder, identity_weight, pixel_weight, (i, j)
            )
            if score.identity < identity_min:
                continue
            if best is None or score.dynamics > best.dynamics:
                best = score
    return best


def describe_storyline(frames: Sequence[np.ndarray], captioner: Captioner) -> str:
    if not frames:
        raise ValueError("describe_storyline needs at least one frame")
    return captioner.describe(frames)


def build_rewrite_prompt(description: str, attempt: int = 0, hint: str | None = None) -> str:
    lines = [
        "Rewrite the storyline description into a world instruction.",
        f"Storyline description: {description}",
        f"Allowed categories: {', '.join(VIDEO_CATEGORY_NAMES)}",
        "Return one JSON object with fields \"instruction\", \"output_description\","
        " and \"category\".",
    ]
    if attempt:
        lines.append(f"Attempt: {attempt}")
    if hint:
        lines.append(f"Hint: {hint}")
    return "\n".join(lines)


@dataclass(frozen=True)
class InstructionRewrite:
    instruction: str
    output_description: str
    category: InstructionCategory


def parse_rewrite(raw: str) -> InstructionRewrite:
    payload = json.loads(_strip_code_fence(raw))
    instruction = str(payload["instruction"])
    if not instruction.strip():
        raise ValueError("instruction: must be non-empty")
    category = InstructionCategory(str(payload["category"]))
    if category not in BRANCH_CATEGORIES[Branch.VIDEO]:
        raise ValueError(f"category: {category.value} is not a video-branch category")
    return InstructionRewrite(instruction, str(payload.get("output_description", "")), category)


def rewrite_instruction(
    description: str,
    llm: TextLLM,
    retry_budget: int = 2,
    hint: str | None = None,
) -> InstructionRewrite | None:
    """LLM rewrite with validation retries; None when the budget runs out."""
    if not description.strip():
        raise ValueError("description must be non-empty")
    for attempt in range(retry_budget + 1):
        try:
            return parse_rewrite(llm.complete(build_rewrite_prompt(description, attempt, hint)))
        except (ValueError, KeyError, AdapterError) as exc:
            logger.debug("rewrite attempt %d rejected: %s", attempt, exc)
    return None


class DirectoryVideoSource:
    """Frame directories, one per clip, frames ordered lexicographically."""

    def __init__(self, frames_root: str | Path) -> None:
        self.frames_root = Path(frames_root)
        if not self.frames_root.is_dir():
            raise FileNotFoundError(f"frames root not found: {self.frames_root}")

    def __iter__(self) -> Iterator[tuple[str, list[np.ndarray]]]:
        for clip_dir in sorted(p for p in self.frames_root.iterdir() if p.is_dir()):
            frames = [
                load_image(f)
                for f in sorted(clip_dir.iterdir())
                if f.suffix.lower() in (".png", ".jpg", ".jpeg")
            ]
            yield clip_dir.name, frames


@dataclass(frozen=True)
class _ClipOutcome:
    record: TripletRecord | None
    dropped_at: str | None
    warnings: tuple[str, ...] = ()


def _build_clip_record(
    clip_id: str,
    frames: Sequence[np.ndarray],
    registry: AdapterRegistry,
    config: VideoBranchConfig,
    images_dir: Path,
    seed: int,
    hint: str | None,
) -> _ClipOutcome:
    """One independent clip job: filter, pair, caption, rewrite, persist."""
    frames = list(frames)
    kept = [
        (idx, frame)
        for idx, frame in enumerate(frames)
        if sharpness(frame) >= config.sharpness_min
    ]
    if len(kept) < 2:
        return _ClipOutcome(None, "sharpness", (f"{clip_id}: fewer than 2 sharp frames",))
    kept_frames = [f for _, f in kept]
    pair = select_pair(
        kept_frames,
        registry.image_encoder,
        identity_min=config.identity_min,
        window=config.window,
        identity_weight=config.identity_weight,
        pixel_weight=config.pixel_weight,
    )
    if pair is None:
        return _ClipOutcome(None, "pair_selection")
    # map back to original frame indices after the sharpness filter
    start_idx = kept[pair.frame_indices[0]][0]
    end_idx = kept[pair.frame_indices[1]][0]
    try:
        description = describe_storyline(kept_frames, registry.captioner)
    except (AdapterError, ValueError) as exc:
        return _ClipOutcome(None, "caption", (f"{clip_id}: captioning failed: {exc}",))
    rewrite = rewrite_instruction(description, registry.text_llm, config.retry_budget, hint)
    if rewrite is None:
        return _ClipOutcome(None, "rewrite", (f"{clip_id}: instruction rewrite failed",))
    record_id = f"video-{clip_id}"
    input_frame, output_frame = frames[start_idx], frames[end_idx]
    save_image(input_frame, images_dir / f"{record_id}_in.png")
    save_image(output_frame, images_dir / f"{record_id}_out.png")
    record = TripletRecord(
        id=record_id,
        input_image=f"images/{record_id}_in.png",
        instruction=rewrite.instruction,
        output_image=f"images/{record_id}_out.png",
        output_description=rewrite.output_description,
        category=rewrite.category,
        branch=Branch.VIDEO,
        keywords=[],
        provenance={
            "run_seed": seed,
            "video_id": clip_id,
            "frame_indices": [start_idx, end_idx],
            "identity": pair.identity,
            "dynamics": pair.dynamics,
            "description": description,
            "adapter_versions": registry.versions(),
            "input_digest": image_digest(input_frame),
            "output_digest": image_digest(output_frame),
            **({"hint": hint} if hint else {}),
        },
        review=ReviewStatus.PENDING,
    )
    record.validate()
    return _ClipOutcome(record, None)


def run_video_branch(
    source: Iterable[tuple[str, Sequence[np.ndarray]]],
    registry: AdapterRegistry,
    config: VideoBranchConfig,
    out_dir: str | Path,
    seed: int,
    hint: str | None = None,
    manifest_name: str = "manifest.jsonl",
) -> BranchRunResult:
    """One triplet per qualifying clip; per-clip failures are isolated.

    Clips are independent jobs; ``config.workers > 1`` runs them on a
    bounded thread pool with order-preserving collection.
    """
    out_dir = Path(out_dir)
    images_dir = out_dir / "images"
    attrition = Attrition()
    warnings_log: list[str] = []
    records: list[TripletRecord] = []
    clips = [(clip_id, list(frames)) for clip_id, frames in source]
    attrition.requested = len(clips)

    def run_job(job: tuple[str, list[np.ndarray]]) -> _ClipOutcome:
        clip_id, frames = job
        return _build_clip_record(clip_id, frames, registry, config, images_dir, seed, hint)

    if config.workers > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            outcomes = list(pool.map(run_job, clips))
    else:
        outcomes = [run_job(job) for job in clips]

    for outcome in outcomes:
        warnings_log.extend(outcome.warnings)
        if outcome.record is not None:
            records.append(outcome.record)
            attrition.produced += 1
        elif outcome.dropped_at is not None:
            attrition.drop(outcome.dropped_at)
    append_manifest(records, out_dir / manifest_name)
    return BranchRunResult(records, attrition, warnings_log, registry.drain_transcripts())
