"""Instruction-conditioned editing inference and the post-edit refinement.

Sampling composes the adapter's three noise predictions with two-scale
guidance at every step. Post-edit derives a precise edit mask by matching
segmentation proposals against the instruction-attention mask from both the
generated and the original image, inpaints inside it, and hard-composites
the original back outside it, so non-edited pixels are preserved exactly.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .adapters.base import (
    AdapterError,
    EdgeExtractor,
    EditDenoiser,
    ImageEncoder,
    InpaintControl,
    InpaintDenoiser,
    Segmenter,
)
from .adapters.registry import AdapterRegistry
from .editmath import (
    AttentionMap,
    BinaryMask,
    GuidanceConfig,
    NoiseSchedule,
    binarize_attention,
    cfg_compose,
    resample_mask,
    select_max_overlap,
    union_masks,
)
from .imgio import decode_latent, encode_latent
from .seeding import derive_seed

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class EditRequest:
    input_image: np.ndarray
    instruction: str
    guidance: GuidanceConfig = field(default_factory=GuidanceConfig)
    seed: int = 0
    steps: int = 8
    post_edit: bool = False

    def __post_init__(self) -> None:
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if not self.instruction.strip():
            raise ValueError("instruction must be non-empty")


@dataclass
class EditResult:
    generated: np.ndarray
    final: np.ndarray
    instruction_mask: BinaryMask | None = None
    edit_mask: BinaryMask | None = None
    provenance: dict[str, Any] = field(default_factory=dict)


@dataclass(frozen=True)
class AttentionSnapshot:
    t: int
    values: np.ndarray


@dataclass(frozen=True)
class SamplingTrace:
    """Per-step instruction-attention snapshots in sampling order (t down)."""

    snapshots: tuple[AttentionSnapshot, ...]


def _timestep_path(num_steps: int, steps: int) -> list[int]:
    """Evenly spaced timesteps from T down to 0, deduplicated."""
    path = np.unique(np.linspace(num_steps, 0, steps + 1).round().astype(int))[::-1]
    if path[0] != num_steps or path[-1] != 0:
        raise AssertionError("timestep path must span T..0")
    return [int(t) for t in path]


def edit(
    req: EditRequest,
    edit_denoiser: EditDenoiser,
    schedule: NoiseSchedule,
    capture_attention: bool = True,
) -> tuple[EditResult, SamplingTrace]:
    """Sample an edited image; every step uses the composed noise estimate."""
    z_ori = encode_latent(req.input_image)
    rng = np.random.default_rng(derive_seed(req.seed, "edit-init"))
    z = rng.standard_normal(z_ori.shape)
    path = _timestep_path(schedule.num_steps, req.steps)
    snapshots: list[AttentionSnapshot] = []
    for t_hi, t_lo in zip(path[:-1], path[1:]):
        try:
            triple = edit_denoiser.predict_triple(
                z, t_hi, z_ori, req.instruction, req.seed, capture_attention=capture_attention
            )
        except AdapterError as exc:
            raise AdapterError(f"edit denoiser failed at timestep {t_hi}: {exc}") from exc
        eps_hat = cfg_compose(triple.eps_uncond, triple.eps_img, triple.eps_full, req.guidance)
        a_hi, a_lo = schedule.alpha_bar(t_hi), schedule.alpha_bar(t_lo)
        z0_hat = (z - np.sqrt(1.0 - a_hi) * eps_hat) / np.sqrt(a_hi)
        z = np.sqrt(a_lo) * z0_hat + np.sqrt(1.0 - a_lo) * eps_hat
        if capture_attention and triple.attention is not None:
            snapshots.append(AttentionSnapshot(t_hi, np.asarray(triple.attention, dtype=np.float64)))
    generated = decode_latent(z)
    result = EditResult(
        generated=generated,
        final=generated,
        provenance={
            "seed": req.seed,
            "steps": req.steps,
            "guidance": {"s_img": req.guidance.s_img, "s_txt": req.guidance.s_txt},
            "denoiser_version": edit_denoiser.version,
        },
    )
    return result, SamplingTrace(tuple(snapshots))


def extract_instruction_mask(
    trace: SamplingTrace,
    factor: float = 0.8125,
    target_resolution: tuple[int, int] | None = None,
    last_fraction: float = 0.5,
) -> BinaryMask:
    """Binarize the instruction attention averaged over late sampling steps.

    Structure settles late in sampling, so only the trailing
    ``last_fraction`` of recorded snapshots enter the mean.
    """
    if not trace.snapshots:
        raise ValueError(
            "no instruction attention recorded; run edit() with capture_attention=True"
        )
    n = len(trace.snapshots)
    start = min(n - 1, int(np.ceil(n * (1.0 - last_fraction))))
    window = trace.snapshots[start:]
    mean_map = np.mean([snap.values for snap in window], axis=0)
    mask = binarize_attention(AttentionMap(mean_map, token="<instruction>"), factor)
    if target_resolution is not None:
        mask = resample_mask(mask, target_resolution)
    return mask


def composite_images(inside: np.ndarray, outside: np.ndarray, mask: BinaryMask) -> np.ndarray:
    """Pixelwise hard composite: mask==1 from ``inside``, else ``outside``."""
    inside = np.asarray(inside)
    outside = np.asarray(outside)
    if inside.shape != outside.shape:
        raise ValueError(f"image shapes differ: {inside.shape} vs {outside.shape}")
    if mask.resolution != inside.shape[:2]:
        raise ValueError(f"mask {mask.resolution} does not match image {inside.shape[:2]}")
    return np.where(mask.values[:, :, None] == 1, inside, outside)


def post_edit(
    original: np.ndarray,
    generated: np.ndarray,
    instruction_mask: BinaryMask,
    segmenter: Segmenter,
    inpaint: InpaintDenoiser,
    encoder: ImageEncoder,
    edge_extractor: EdgeExtractor,
    schedule: NoiseSchedule,
    seed: int,
    use_generated_features: bool = False,
) -> tuple[np.ndarray, BinaryMask]:
    """Refine the generated image inside a segmentation-sharpened edit mask.

    The edit mask is the union of the segmentation proposals (one from the
    generated image, one from the original) that overlap the instruction
    mask the most. Inpainting regenerates inside it under edge guidance
    from the generated image and identity features of the original; pixels
    outside the mask are copied from the original exactly.
    """
    original = np.asarray(original, dtype=np.float64)
    generated = np.asarray(generated, dtype=np.float64)
    if original.shape != generated.shape:
        raise ValueError(f"image shapes differ: {original.shape} vs {generated.shape}")
    resolution = original.shape[:2]
    m_instr = resample_mask(instruction_mask, resolution)
    gen_proposals = segmenter.segment(generated)
    ori_proposals = segmenter.segment(original)
    if not gen_proposals or not ori_proposals:
        warnings.warn(
            "segmenter returned no proposals; using the instruction mask as the edit mask",
            RuntimeWarning,
            stacklevel=2,
        )
        edit_mask = m_instr
    else:
        mask_gen = select_max_overlap(gen_proposals, m_instr)
        mask_ori = select_max_overlap(ori_proposals, m_instr)
        edit_mask = union_masks([mask_gen, mask_ori])
    features = encoder.encode(original)
    if use_generated_features:
        features = np.concatenate([features, encoder.encode(generated)])
    control = InpaintControl(canny=edge_extractor.edges(generated), features=features)
    inpainted = inpaint.inpaint(
        encode_latent(generated),
        edit_mask,
        "",
        schedule,
        derive_seed(seed, "post-edit"),
        control=control,
    )
    final = composite_images(inpainted.image, original, edit_mask)
    return final, edit_mask


def run_edit(
    req: EditRequest,
    registry: AdapterRegistry,
    schedule: NoiseSchedule,
    binarize_factor: float = 0.8125,
    use_generated_features: bool = False,
) -> EditResult:
    """Full inference: sample, then optionally post-edit with derived masks."""
    result, trace = edit(req, registry.edit_denoiser, schedule, capture_attention=req.post_edit)
    if not req.post_edit:
        return result
    resolution = req.input_image.shape[:2]
    m_instr = extract_instruction_mask(trace, binarize_factor, resolution)
    final, edit_mask = post_edit(
        req.input_image,
        result.generated,
        m_instr,
        registry.segmenter,
        registry.inpaint_denoiser,
        registry.image_encoder,
        registry.edge_extractor,
        schedule,
        req.seed,
        use_generated_features=use_generated_features,
    )
    result.final = final
    result.instruction_mask = m_instr
    result.edit_mask = edit_mask
    result.provenance["post_edit"] = True
    return result
