"""Pure math core for mask-localized editing.

Everything here is a deterministic function of its inputs (noise draws are
seeded), operating on plain numpy arrays wrapped in light value types:
attention-map binarization and union, forward noising plus masked latent
blending, two-scale classifier-free guidance composition, refinement request
assembly, and the mask utilities (overlap selection, resampling, dilation)
the pipelines share.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy import ndimage

# Threshold multiplier applied to the mean attention value when binarizing
# (13/16). Exposed as the default; callers may override per config.
DEFAULT_BINARIZE_FACTOR = 0.8125

# Guidance scales used when the caller does not specify any; these follow the
# convention of the instruction-editing model family this engine serves.
DEFAULT_IMAGE_GUIDANCE = 1.5
DEFAULT_TEXT_GUIDANCE = 7.5


@dataclass(frozen=True)
class AttentionMap:
    """Non-negative 2-D attention grid for one keyword token."""

    values: np.ndarray
    token: str = ""

    def __post_init__(self) -> None:
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2 or v.size == 0:
            raise ValueError(f"attention map must be a non-empty 2-D grid, got shape {v.shape}")
        if not np.isfinite(v).all():
            raise ValueError("attention map contains non-finite entries")
        if (v < 0).any():
            raise ValueError("attention map contains negative entries")
        object.__setattr__(self, "values", v)

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape  # type: ignore[return-value]


@dataclass(frozen=True)
class BinaryMask:
    """2-D grid of {0,1} marking the editable region."""

    values: np.ndarray

    def __post_init__(self) -> None:
        v = np.asarray(self.values)
        if v.ndim != 2 or v.size == 0:
            raise ValueError(f"mask must be a non-empty 2-D grid, got shape {v.shape}")
        if not np.isin(v, (0, 1)).all():
            raise ValueError("mask entries must be 0 or 1")
        object.__setattr__(self, "values", v.astype(np.uint8))

    @property
    def resolution(self) -> tuple[int, int]:
        return self.values.shape  # type: ignore[return-value]

    @property
    def area(self) -> int:
        return int(self.values.sum())

    @classmethod
    def full(cls, resolution: tuple[int, int]) -> "BinaryMask":
        return cls(np.ones(resolution, dtype=np.uint8))

    @classmethod
    def empty(cls, resolution: tuple[int, int]) -> "BinaryMask":
        return cls(np.zeros(resolution, dtype=np.uint8))


@dataclass(frozen=True)
class NoiseSchedule:
    """Cumulative signal-retention coefficients for the forward process.

    ``alpha_bars[t]`` is the fraction of original signal variance kept at
    timestep ``t``; index 0 is the clean endpoint (exactly 1) and values
    decrease monotonically with t, staying in (0, 1].
    """

    alpha_bars: np.ndarray

    def __post_init__(self) -> None:
        a = np.asarray(self.alpha_bars, dtype=np.float64)
        if a.ndim != 1 or a.size < 1:
            raise ValueError("alpha_bars must be a 1-D array with at least one entry")
        if a[0] != 1.0:
            raise ValueError(f"alpha_bars[0] must be exactly 1.0, got {a[0]}")
        if (np.diff(a) > 0).any():
            raise ValueError("alpha_bars must be non-increasing")
        if (a <= 0).any() or (a > 1).any():
            raise ValueError("alpha_bars must lie in (0, 1]")
        object.__setattr__(self, "alpha_bars", a)

    @property
    def num_steps(self) -> int:
        return len(self.alpha_bars) - 1

    def alpha_bar(self, t: int) -> float:
        if not 0 <= t <= self.num_steps:
            raise ValueError(f"timestep {t} outside [0, {self.num_steps}]")
        return float(self.alpha_bars[t])

    @classmethod
    def linear(cls, num_steps: int, beta_start: float = 1e-4, beta_end: float = 0.02) -> "NoiseSchedule":
        """Linearly spaced per-step betas, accumulated into alpha-bar form."""
        if num_steps < 1:
            raise ValueError("num_steps must be >= 1")
        betas = np.linspace(beta_start, beta_end, num_steps, dtype=np.float64)
        alpha_bars = np.concatenate([[1.0], np.cumprod(1.0 - betas)])
        return cls(alpha_bars)


@dataclass(frozen=True)
class LatentState:
    """Latent tensor (C, H, W) at a given timestep."""

    z: np.ndarray
    t: int = 0

    def __post_init__(self) -> None:
        z = np.asarray(self.z, dtype=np.float64)
        if z.ndim != 3:
            raise ValueError(f"latent must have shape (C, H, W), got {z.shape}")
        if not np.isfinite(z).all():
            raise ValueError("latent contains non-finite entries")
        object.__setattr__(self, "z", z)

    @property
    def spatial(self) -> tuple[int, int]:
        return self.z.shape[1], self.z.shape[2]


@dataclass(frozen=True)
class GuidanceConfig:
    """Two-scale guidance: image scale applied first, then text scale."""

    s_img: float = DEFAULT_IMAGE_GUIDANCE
    s_txt: float = DEFAULT_TEXT_GUIDANCE

    def __post_init__(self) -> None:
        for name, v in (("s_img", self.s_img), ("s_txt", self.s_txt)):
            if not np.isfinite(v) or v < 0:
                raise ValueError(f"{name} must be finite and >= 0, got {v}")


@dataclass(frozen=True)
class RefinementRequest:
    """Inputs for the identity-preserving refinement denoiser.

    Carries the latent of the image being refined, the target prompt, the
    feature vector of the original image (identity guidance), and the edge
    map of the target image (structure guidance).
    """

    latent: LatentState
    target_prompt: str
    original_features: np.ndarray
    canny: np.ndarray

    def __post_init__(self) -> None:
        f = np.asarray(self.original_features, dtype=np.float64)
        if f.ndim != 1 or not np.isfinite(f).all():
            raise ValueError("original_features must be a finite 1-D vector")
        c = np.asarray(self.canny)
        if not np.isin(c, (0, 1)).all():
            raise ValueError("canny entries must be 0 or 1")
        object.__setattr__(self, "original_features", f)
        object.__setattr__(self, "canny", c.astype(np.uint8))


def binarize_attention(attn: AttentionMap, factor: float = DEFAULT_BINARIZE_FACTOR) -> BinaryMask:
    """Threshold an attention map at ``factor * mean`` (strict >)."""
    threshold = factor * attn.values.mean()
    return BinaryMask((attn.values > threshold).astype(np.uint8))


def union_masks(masks: Sequence[BinaryMask]) -> BinaryMask:
    """Pixelwise OR over a non-empty list of same-shape masks."""
    if not masks:
        raise ValueError("union over an empty mask list")
    shape = masks[0].resolution
    for i, m in enumerate(masks):
        if m.resolution != shape:
            raise ValueError(f"mask {i} has shape {m.resolution}, expected {shape}")
    out = np.zeros(shape, dtype=np.uint8)
    for m in masks:
        np.logical_or(out, m.values, out=out)
    return BinaryMask(out.astype(np.uint8))


def forward_noise(z_ori: LatentState, t: int, schedule: NoiseSchedule, rng_seed: int) -> LatentState:
    """Noise a clean latent to timestep t: sqrt(a_bar)*z + sqrt(1-a_bar)*eps.

    The eps draw is a standard normal seeded by ``rng_seed``, so the result
    is a pure function of (z_ori, t, schedule, rng_seed).
    """
    a_bar = schedule.alpha_bar(t)
    rng = np.random.default_rng(rng_seed)
    eps = rng.standard_normal(z_ori.z.shape)
    z = np.sqrt(a_bar) * z_ori.z + np.sqrt(1.0 - a_bar) * eps
    return LatentState(z, t)


def blend_latents(z_t: LatentState, z_ori_t: LatentState, mask: BinaryMask) -> LatentState:
    """Keep z_t inside the mask, z_ori_t outside, bit-exactly."""
    if z_t.z.shape != z_ori_t.z.shape:
        raise ValueError(f"latent shapes differ: {z_t.z.shape} vs {z_ori_t.z.shape}")
    if z_t.t != z_ori_t.t:
        raise ValueError(f"latent timesteps differ: {z_t.t} vs {z_ori_t.t}")
    if mask.resolution != z_t.spatial:
        raise ValueError(f"mask shape {mask.resolution} does not match latent spatial {z_t.spatial}")
    blended = np.where(mask.values[None, :, :] == 1, z_t.z, z_ori_t.z)
    return LatentState(blended, z_t.t)


def cfg_compose(
    eps_uncond: np.ndarray,
    eps_img: np.ndarray,
    eps_full: np.ndarray,
    guidance: GuidanceConfig,
) -> np.ndarray:
    """Compose unconditional, image-conditioned, and fully conditioned noise.

    Returns ``eps_uncond + s_img*(eps_img - eps_uncond) + s_txt*(eps_full - eps_img)``.
    """
    eps_uncond = np.asarray(eps_uncond, dtype=np.float64)
    eps_img = np.asarray(eps_img, dtype=np.float64)
    eps_full = np.asarray(eps_full, dtype=np.float64)
    if not (eps_uncond.shape == eps_img.shape == eps_full.shape):
        raise ValueError(
            f"noise shapes differ: {eps_uncond.shape}, {eps_img.shape}, {eps_full.shape}"
        )
    return (
        eps_uncond
        + guidance.s_img * (eps_img - eps_uncond)
        + guidance.s_txt * (eps_full - eps_img)
    )


def build_refinement_request(
    original: np.ndarray,
    target: np.ndarray,
    target_prompt: str,
    encoder: Callable[[np.ndarray], np.ndarray],
    edge_extractor: Callable[[np.ndarray], np.ndarray],
    encode_latent: Callable[[np.ndarray], np.ndarray] | None = None,
) -> RefinementRequest:
    """Package identity features of the original and edges of the target.

    ``encoder`` sees the original image; ``edge_extractor`` sees the target.
    The latent is built from the target (the image being refined) at t=0,
    via ``encode_latent`` when given, else by channel-first transposition.
    """
    original = np.asarray(original)
    target = np.asarray(target)
    if original.shape != target.shape:
        raise ValueError(f"image shapes differ: {original.shape} vs {target.shape}")
    try:
        features = np.asarray(encoder(original), dtype=np.float64)
    except Exception as exc:
        raise RuntimeError(f"image encoder failed on original image: {exc}") from exc
    try:
        canny = np.asarray(edge_extractor(target))
    except Exception as exc:
        raise RuntimeError(f"edge extractor failed on target image: {exc}") from exc
    if encode_latent is not None:
        z = encode_latent(target)
    else:
        z = np.transpose(target.astype(np.float64), (2, 0, 1))
    return RefinementRequest(
        latent=LatentState(z, 0),
        target_prompt=target_prompt,
        original_features=features,
        canny=canny,
    )


def mask_overlap(a: BinaryMask, b: BinaryMask) -> int:
    """Number of pixels where both masks are 1."""
    if a.resolution != b.resolution:
        raise ValueError(f"mask shapes differ: {a.resolution} vs {b.resolution}")
    return int(np.logical_and(a.values, b.values).sum())


def select_max_overlap(candidates: Sequence[BinaryMask], ref: BinaryMask) -> BinaryMask:
    """Pick the candidate with maximum overlap against ``ref``.

    Ties break toward the larger mask area, then the earliest index.
    """
    if not candidates:
        raise ValueError("no candidate masks to select from")
    best_idx = 0
    best_key = (-1, -1)
    for i, cand in enumerate(candidates):
        key = (mask_overlap(cand, ref), cand.area)
        if key > best_key:
            best_key = key
            best_idx = i
    return candidates[best_idx]


def resample_mask(mask: BinaryMask, target_resolution: tuple[int, int]) -> BinaryMask:
    """Nearest-neighbor resample; output stays binary."""
    th, tw = target_resolution
    if th < 1 or tw < 1:
        raise ValueError(f"target resolution must be >= 1x1, got {target_resolution}")
    sh, sw = mask.resolution
    if (sh, sw) == (th, tw):
        return mask
    rows = (np.arange(th) * sh) // th
    cols = (np.arange(tw) * sw) // tw
    return BinaryMask(mask.values[np.ix_(rows, cols)])


def dilate_mask(mask: BinaryMask, px: int) -> BinaryMask:
    """Grow the mask by ``px`` pixels (8-connected); px=0 is the identity."""
    if px < 0:
        raise ValueError("dilation radius must be >= 0")
    if px == 0 or mask.area == 0:
        return mask
    grown = ndimage.binary_dilation(mask.values, iterations=px, structure=np.ones((3, 3), dtype=bool))
    return BinaryMask(grown.astype(np.uint8))


def fallback_full_mask(mask: BinaryMask, context: str = "") -> tuple[BinaryMask, bool]:
    """Replace an all-zero mask with a full-image mask, warning once.

    A zero union mask means keyword localization failed; rather than
    producing a no-op edit, fall back to unconstrained generation. Returns
    (mask, fell_back).
    """
    if mask.area > 0:
        return mask, False
    where = f" ({context})" if context else ""
    warnings.warn(f"all-zero edit mask{where}; falling back to full-image mask", RuntimeWarning, stacklevel=2)
    return BinaryMask.full(mask.resolution), True
