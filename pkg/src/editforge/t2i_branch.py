"""Text-to-image data branch.

Per requested record: prompt the LLM for a (input prompt, instruction,
output prompt, keywords) quadruple, generate the input image while
capturing keyword cross-attention, inpaint the output image inside the
binarized attention union, refine it for identity consistency, and keep it
only if the multimodal discriminator passes all three quality criteria.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
import numpy as np

from .adapters.base import (
    AdapterError,
    InpaintDenoiser,
    Judge,
    RefineDenoiser,
    T2IDenoiser,
    TextLLM,
    parse_binary_verdict,
)
from .adapters.registry import AdapterRegistry
from .config import EditMathConfig, T2IBranchConfig
from .editmath import (
    AttentionMap,
    BinaryMask,
    NoiseSchedule,
    binarize_attention,
    build_refinement_request,
    dilate_mask,
    fallback_full_mask,
    resample_mask,
    union_masks,
)
from .imgio import image_digest, save_image
from .schema import (
    BRANCH_CATEGORIES,
    Branch,
    InstructionCategory,
    ReviewStatus,
    TripletRecord,
    append_manifest,
)
from .seeding import derive_seed, stable_digest

logger = logging.getLogger(__name__)

# Category definitions and exemplar instructions embedded into the LLM
# prompt as few-shot context, one row per world-instruction category.
CATEGORY_DEFINITIONS: dict[InstructionCategory, str] = {
    InstructionCategory.LONG_TERM: (
        "In this editing type, there is a significant time interval between "
        "the content of the input and the output images."
    ),
    InstructionCategory.SPATIAL_TRANS: (
        "In this editing type, the position of the object in the image or the "
        "viewpoint of the image undergoes substantial shifts or transformations."
    ),
    InstructionCategory.PHYSICAL_TRANS: (
        "In this editing type, the physical characteristics of objects in the "
        "image, including shape, structure, and texture, exhibit significant changes."
    ),
    InstructionCategory.IMPLICIT_LOGIC: (
        "In this editing type, the editing instructions often imply very implicit logic."
    ),
    InstructionCategory.STORY_TYPE: (
        "In this editing type, the edits often relate to the storyline of the "
        "fairy tale or movie."
    ),
    InstructionCategory.REAL_TO_VIRTUAL: (
        "In this editing type, natural phenomena from the real world are "
        "introduced into specific virtual world scenarios."
    ),
    InstructionCategory.EXAGGERATION: (
        "In this type of editing, objects experience exaggerated transformations "
        "that cannot occur in the real world."
    ),
}

CATEGORY_EXEMPLARS: dict[InstructionCategory, str] = {
    InstructionCategory.LONG_TERM: "What would have happened if the girl had kept on reading and writing?",
    InstructionCategory.SPATIAL_TRANS: "The traffic light becomes passable.",
    InstructionCategory.PHYSICAL_TRANS: "Popping the balloon.",
    InstructionCategory.IMPLICIT_LOGIC: "what would happen if a impatient child look for a specific toy?",
    InstructionCategory.STORY_TYPE: "what would happen if Snow White ate a poisoned apple?",
    InstructionCategory.REAL_TO_VIRTUAL: "what would happen if there was strong static electricity?",
    InstructionCategory.EXAGGERATION: "What would the cat look like after falling to the ground?",
}

DISCRIMINATOR_CRITERIA = ("semantic alignment", "identity consistency", "image quality")


@dataclass(frozen=True)
class TextQuadruple:
    """LLM-produced seed for one paired-image generation."""

    input_prompt: str
    instruction: str
    output_prompt: str
    keywords: tuple[str, ...]
    category: InstructionCategory

    def validate(self) -> None:
        if not self.input_prompt.strip():
            raise ValueError("input_prompt: must be non-empty")
        if not self.instruction.strip():
            raise ValueError("instruction: must be non-empty")
        if not self.output_prompt.strip():
            raise ValueError("output_prompt: must be non-empty")
        if not self.keywords:
            raise ValueError("keywords: must be non-empty")
        for kw in self.keywords:
            if kw not in self.input_prompt and kw not in self.output_prompt:
                raise ValueError(
                    f"keywords: {kw!r} does not occur in input_prompt or output_prompt"
                )


@dataclass(frozen=True)
class GenerationTrace:
    """Input-image generation output: image, keyword attention, clean latent."""

    image: np.ndarray
    attention_maps: dict[str, AttentionMap]
    latent: np.ndarray
    seed: int


@dataclass
class Attrition:
    """Per-stage drop accounting; requested == produced + sum(drops)."""

    requested: int = 0
    produced: int = 0
    drops: dict[str, int] = field(default_factory=dict)

    def drop(self, stage: str, n: int = 1) -> None:
        self.drops[stage] = self.drops.get(stage, 0) + n

    @property
    def dropped(self) -> int:
        return sum(self.drops.values())

    def balanced(self) -> bool:
        return self.requested == self.produced + self.dropped

    def to_dict(self) -> dict:
        return {"requested": self.requested, "produced": self.produced, "drops": dict(self.drops)}


@dataclass
class BranchRunResult:
    records: list[TripletRecord]
    attrition: Attrition
    warnings: list[str] = field(default_factory=list)
    # request/response logs drained from endpoint adapters, empty for mocks
    transcripts: dict[str, list] = field(default_factory=dict)


def build_quadruple_prompt(
    category: InstructionCategory,
    variation: int,
    attempt: int = 0,
    hint: str | None = None,
) -> str:
    """Few-shot prompt asking for exactly one JSON quadruple."""
    lines = [
        "You are generating training data for world-instructed image editing.",
        f"Category: {category.value} ({category.world.value} world)",
        f"Definition: {CATEGORY_DEFINITIONS[category]}",
        f'Example instruction: "{CATEGORY_EXEMPLARS[category]}"',
        "Return one JSON object with fields \"input_prompt\", \"instruction\","
        " \"output_prompt\", and \"keywords\".",
        "Rules: keywords is a non-empty list of strings and every keyword must"
        " occur verbatim in input_prompt or output_prompt.",
        f"Variation: {variation}",
    ]
    if attempt:
        lines.append(f"Attempt: {attempt}")
    if hint:
        lines.append(f"Hint: {hint}")
    return "\n".join(lines)


def _strip_code_fence(text: str) -> str:
    text = text.strip()
    if text.startswith("```"):
        text = text.split("\n", 1)[-1]
        if text.endswith("```"):
            text = text[: -len("```")]
    return text.strip()


def parse_quadruple(raw: str, category: InstructionCategory) -> TextQuadruple:
    payload = json.loads(_strip_code_fence(raw))
    quad = TextQuadruple(
        input_prompt=str(payload["input_prompt"]),
        instruction=str(payload["instruction"]),
        output_prompt=str(payload["output_prompt"]),
        keywords=tuple(str(k) for k in payload.get("keywords", [])),
        category=category,
    )
    quad.validate()
    return quad


def propose_quadruples(
    category: InstructionCategory,
    count: int,
    llm: TextLLM,
    retry_budget: int = 2,
    hint: str | None = None,
    start_variation: int = 0,
) -> tuple[list[TextQuadruple], int]:
    """Ask the LLM for ``count`` quadruples, re-querying invalid replies.

    Returns (quadruples, rejected_count); the list may be shorter than
    ``count`` when the retry budget runs out on some slots.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    out: list[TextQuadruple] = []
    rejected = 0
    for variation in range(start_variation, start_variation + count):
        quad = None
        for attempt in range(retry_budget + 1):
            prompt = build_quadruple_prompt(category, variation, attempt, hint)
            try:
                quad = parse_quadruple(llm.complete(prompt), category)
                break
            except (ValueError, KeyError, AdapterError) as exc:
                logger.debug("quadruple rejected (variation %d attempt %d): %s", variation, attempt, exc)
        if quad is None:
            rejected += 1
            logger.warning("quadruple slot %d dropped after %d attempts", variation, retry_budget + 1)
        else:
            out.append(quad)
    return out, rejected


def synth_input(quad: TextQuadruple, t2i: T2IDenoiser, seed: int) -> GenerationTrace:
    """Generate the input image, retrying the adapter once."""
    last: Exception | None = None
    for attempt in range(2):
        try:
            gen = t2i.generate(quad.input_prompt, quad.keywords, derive_seed(seed, "t2i", attempt))
            break
        except AdapterError as exc:
            last = exc
    else:
        raise AdapterError(f"input synthesis failed twice: {last}")
    maps = {kw: AttentionMap(np.asarray(m), token=kw) for kw, m in gen.attention_maps.items()}
    missing = [kw for kw in quad.keywords if kw not in maps]
    if missing:
        raise AdapterError(f"adapter returned no attention map for keywords {missing}")
    return GenerationTrace(image=gen.image, attention_maps=maps, latent=gen.latent, seed=gen.seed)


@dataclass(frozen=True)
class SynthOutput:
    image: np.ndarray
    mask: BinaryMask
    fell_back_to_full_mask: bool
    steps: tuple


def synth_output(
    trace: GenerationTrace,
    quad: TextQuadruple,
    schedule: NoiseSchedule,
    inpaint: InpaintDenoiser,
    binarize_factor: float = 0.8125,
    dilation_px: int = 0,
    fallback_to_full_mask: bool = True,
    record_trace: bool = False,
) -> SynthOutput:
    """Inpaint the output image inside the union of binarized keyword masks."""
    latent_res = trace.latent.shape[1], trace.latent.shape[2]
    keyword_masks = [
        resample_mask(binarize_attention(trace.attention_maps[kw], binarize_factor), latent_res)
        for kw in quad.keywords
    ]
    mask = union_masks(keyword_masks)
    if dilation_px:
        mask = dilate_mask(mask, dilation_px)
    fell_back = False
    if mask.area == 0 and fallback_to_full_mask:
        mask, fell_back = fallback_full_mask(mask, f"keywords {quad.keywords}")
    result = inpaint.inpaint(
        trace.latent,
        mask,
        quad.output_prompt,
        schedule,
        derive_seed(trace.seed, "inpaint"),
        record_trace=record_trace,
    )
    return SynthOutput(result.image, mask, fell_back, result.steps)


@dataclass(frozen=True)
class RefineOutcome:
    image: np.ndarray
    refined: bool
    request_digest: str | None


def refine_output(
    original: np.ndarray,
    target: np.ndarray,
    output_prompt: str,
    refine: RefineDenoiser,
    encoder,
    edge_extractor,
    schedule: NoiseSchedule,
    seed: int,
) -> RefineOutcome:
    """Identity-preserving refinement; failures fall back to the unrefined image."""
    try:
        request = build_refinement_request(
            original, target, output_prompt, encoder.encode, edge_extractor.edges
        )
        digest = stable_digest(
            request.target_prompt,
            request.original_features.tobytes(),
            request.canny.tobytes(),
            request.latent.z.tobytes(),
        )
        refined = refine.refine(request, schedule, derive_seed(seed, "refine"))
        return RefineOutcome(refined, True, digest)
    except (AdapterError, RuntimeError) as exc:
        logger.warning("refinement failed, keeping unrefined output: %s", exc)
        return RefineOutcome(target, False, None)


@dataclass(frozen=True)
class Discrimination:
    keep: bool
    scores: dict[str, int | None]
    unevaluable: bool
    retries: int


def discriminate(
    original: np.ndarray,
    edited: np.ndarray,
    quad: TextQuadruple,
    judge: Judge,
    mode: str = "all",
) -> Discrimination:
    """Query the multimodal judge once per quality criterion.

    keep requires every criterion to pass (or 2 of 3 when configured);
    an unparseable verdict is retried once and then fails the candidate.
    """
    scores: dict[str, int | None] = {}
    retries = 0
    unevaluable = False
    for criterion in DISCRIMINATOR_CRITERIA:
        prompt = (
            f"The input description {quad.input_prompt}, the editing instruction "
            f"{quad.instruction}, and the output description {quad.output_prompt}. "
            f"Evaluate the edited image on the criterion: {criterion}. "
            "If it passes, just give me 1, else just give me 0"
        )
        verdict = parse_binary_verdict(judge.verdict(edited, prompt))
        if verdict is None:
            retries += 1
            verdict = parse_binary_verdict(judge.verdict(edited, prompt))
        if verdict is None:
            unevaluable = True
        scores[criterion] = verdict
    passed = sum(1 for v in scores.values() if v == 1)
    if unevaluable:
        keep = False
    elif mode == "two_of_three":
        keep = passed >= 2
    else:
        keep = passed == len(DISCRIMINATOR_CRITERIA)
    return Discrimination(keep, scores, unevaluable, retries)


@dataclass(frozen=True)
class _JobOutcome:
    """Result of one record job: a record, or the stage that dropped it."""

    record: TripletRecord | None
    dropped_at: str | None
    warnings: tuple[str, ...] = ()


def _build_record(
    quad: TextQuadruple,
    category: InstructionCategory,
    index: int,
    registry: AdapterRegistry,
    config: T2IBranchConfig,
    math_config: EditMathConfig,
    schedule: NoiseSchedule,
    images_dir: Path,
    seed: int,
    hint: str | None,
    record_id: str | None = None,
) -> _JobOutcome:
    """One independent record job: generate, inpaint, refine, discriminate."""
    record_seed = derive_seed(seed, "t2i-record", category.value, index)
    if record_id is None:
        record_id = f"t2i-{category.value.lower()}-{seed}-{index:04d}"
    warnings_log: list[str] = []
    try:
        trace = synth_input(quad, registry.t2i_denoiser, record_seed)
    except AdapterError as exc:
        return _JobOutcome(None, "synth_input", (f"{record_id}: input synthesis failed: {exc}",))
    try:
        synth = synth_output(
            trace,
            quad,
            schedule,
            registry.inpaint_denoiser,
            binarize_factor=math_config.binarize_factor,
            dilation_px=math_config.dilation_px,
            fallback_to_full_mask=config.fallback_to_full_mask,
        )
    except AdapterError as exc:
        return _JobOutcome(None, "synth_output", (f"{record_id}: output synthesis failed: {exc}",))
    refined = refine_output(
        trace.image,
        synth.image,
        quad.output_prompt,
        registry.refine_denoiser,
        registry.image_encoder,
        registry.edge_extractor,
        schedule,
        record_seed,
    )
    if not refined.refined:
        warnings_log.append(f"{record_id}: kept unrefined output")
    verdict = discriminate(
        trace.image, refined.image, quad, registry.discriminator, config.discriminator_mode
    )
    if not verdict.keep:
        return _JobOutcome(None, "discriminate", tuple(warnings_log))
    save_image(trace.image, images_dir / f"{record_id}_in.png")
    save_image(refined.image, images_dir / f"{record_id}_out.png")
    record = TripletRecord(
        id=record_id,
        input_image=f"images/{record_id}_in.png",
        instruction=quad.instruction,
        output_image=f"images/{record_id}_out.png",
        output_description=quad.output_prompt,
        category=category,
        branch=Branch.TEXT_TO_IMAGE,
        keywords=list(quad.keywords),
        provenance={
            "seed": record_seed,
            "run_seed": seed,
            "input_prompt": quad.input_prompt,
            "adapter_versions": registry.versions(),
            "attention_maps": {
                kw: {
                    "shape": list(m.values.shape),
                    "digest": stable_digest(m.values.tobytes()),
                }
                for kw, m in trace.attention_maps.items()
            },
            "mask_area": synth.mask.area,
            "mask_fell_back": synth.fell_back_to_full_mask,
            "refined": refined.refined,
            "refinement_request": refined.request_digest,
            "discriminator_scores": verdict.scores,
            "input_digest": image_digest(trace.image),
            "output_digest": image_digest(refined.image),
            **({"hint": hint} if hint else {}),
        },
        review=ReviewStatus.PENDING,
    )
    record.validate()
    return _JobOutcome(record, None, tuple(warnings_log))


def run_t2i_branch(
    registry: AdapterRegistry,
    config: T2IBranchConfig,
    math_config: EditMathConfig,
    out_dir: str | Path,
    seed: int,
    quotas: dict[str, int] | None = None,
    hint: str | None = None,
    manifest_name: str = "manifest.jsonl",
) -> BranchRunResult:
    """Run the full branch for each (category, count) quota and append records.

    Record jobs are independent; with ``config.workers > 1`` they run on a
    bounded thread pool (mock adapters are pure, so results are identical
    to the sequential order). Proposal stays sequential: LLM traffic is
    rate-limited anyway, and scripted adapters are single-consumer.
    """
    out_dir = Path(out_dir)
    images_dir = out_dir / "images"
    schedule = NoiseSchedule.linear(math_config.schedule_steps)
    attrition = Attrition()
    warnings_log: list[str] = []
    records: list[TripletRecord] = []
    quotas = quotas if quotas is not None else config.quotas
    jobs: list[tuple[TextQuadruple, InstructionCategory, int]] = []
    for category_name in sorted(quotas):
        category = InstructionCategory(category_name)
        if category not in BRANCH_CATEGORIES[Branch.TEXT_TO_IMAGE]:
            raise ValueError(f"category {category_name} is not produced by the text-to-image branch")
        count = quotas[category_name]
        attrition.requested += count
        quads, rejected = propose_quadruples(
            category, count, registry.text_llm, config.retry_budget, hint=hint
        ) if count else ([], 0)
        if rejected:
            attrition.drop("propose", rejected)
        jobs.extend((quad, category, index) for index, quad in enumerate(quads))

    def run_job(job: tuple[TextQuadruple, InstructionCategory, int]) -> _JobOutcome:
        quad, category, index = job
        return _build_record(
            quad, category, index, registry, config, math_config, schedule, images_dir, seed, hint
        )

    if config.workers > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            outcomes = list(pool.map(run_job, jobs))
    else:
        outcomes = [run_job(job) for job in jobs]

    for outcome in outcomes:
        warnings_log.extend(outcome.warnings)
        if outcome.record is not None:
            records.append(outcome.record)
            attrition.produced += 1
        elif outcome.dropped_at is not None:
            attrition.drop(outcome.dropped_at)
    append_manifest(records, out_dir / manifest_name)
    return BranchRunResult(records, attrition, warnings_log, registry.drain_transcripts())
