"""Deterministic mock adapters.

Every mock is a pure function of its inputs and configured seed (scripted
playback mocks excepted, which consume their script in call order), so full
pipeline runs are replayable and testable without GPUs or network access.
"""

from __future__ import annotations

import json
from typing import Callable, Sequence

import numpy as np
from scipy import ndimage

from ..editmath import (
    BinaryMask,
    LatentState,
    NoiseSchedule,
    RefinementRequest,
    forward_noise,
)
from ..imgio import decode_latent, encode_latent
from ..seeding import derive_seed, stable_digest
from .base import (
    AdapterError,
    BlendStep,
    Captioner,
    CfgTriple,
    EdgeExtractor,
    EditDenoiser,
    ImageEncoder,
    InpaintControl,
    InpaintDenoiser,
    InpaintResult,
    Judge,
    MetricClip,
    MetricLpips,
    RefineDenoiser,
    Segmenter,
    T2IDenoiser,
    T2IGeneration,
    TextLLM,
)


def _unit(*parts) -> float:
    """Hash the parts into [0, 1)."""
    return int(stable_digest(*parts)[:12], 16) / float(1 << 48)


def smooth_field(shape: tuple[int, ...], seed: int) -> np.ndarray:
    """Seeded white noise blurred over the trailing two axes, in [-1, 1]."""
    rng = np.random.default_rng(seed)
    field = rng.standard_normal(shape)
    sigma = max(1.0, min(shape[-2], shape[-1]) / 8.0)
    sigmas = (0.0,) * (len(shape) - 2) + (sigma, sigma)
    field = ndimage.gaussian_filter(field, sigma=sigmas)
    peak = np.abs(field).max()
    return field / peak if peak > 0 else field


def mock_denoiser_step(z_t: np.ndarray, t: int, conditioning, seed: int) -> np.ndarray:
    """Stand-in noise prediction: smooth, seed-deterministic, |value| <= 1.

    The dominant term depends only on (hash of conditioning, t, position);
    a small tanh(z_t) term keeps the prediction smooth in the latent.
    """
    if t < 0:
        raise ValueError(f"timestep must be >= 0, got {t}")
    z_t = np.asarray(z_t, dtype=np.float64)
    cond_digest = stable_digest(conditioning)
    base = smooth_field(z_t.shape, derive_seed(seed, "denoise", cond_digest, t))
    return 0.9 * base + 0.1 * np.tanh(z_t)


def _blob(shape: tuple[int, int], key: str) -> np.ndarray:
    """Gaussian bump whose center is a stable function of the key."""
    h, w = shape
    cy = _unit("blob-y", key) * (h - 1)
    cx = _unit("blob-x", key) * (w - 1)
    yy, xx = np.mgrid[0:h, 0:w]
    sigma = max(1.5, min(h, w) / 6.0)
    return np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2.0 * sigma**2))


# ---------------------------------------------------------------------------
# Text models


class ScriptedTextLLM(TextLLM):
    """Plays back canned completions in call order; single-consumer."""

    version = "scripted-llm/1"

    def __init__(self, responses: Sequence[str], cycle: bool = False) -> None:
        self._responses = list(responses)
        self._cycle = cycle
        self._i = 0
        self.prompts: list[str] = []

    def complete(self, prompt: str) -> str:
        self.prompts.append(prompt)
        if self._i >= len(self._responses):
            if not self._cycle or not self._responses:
                raise AdapterError("scripted LLM exhausted its responses")
            self._i = 0
        out = self._responses[self._i]
        self._i += 1
        return out


_SUBJECTS = [
    ("a red balloon", "balloon"),
    ("a snowman", "snowman"),
    ("a paper boat", "boat"),
    ("an old oak tree", "tree"),
    ("a sandcastle", "sandcastle"),
    ("a tabby cat", "cat"),
    ("a stone bridge", "bridge"),
    ("a brass street lamp", "lamp"),
]

_SCENES = [
    "in a sunlit park",
    "beside a calm river",
    "on a crowded beach",
    "under a stormy sky",
    "in a quiet courtyard",
]

_OUTCOMES = {
    "LongTerm": "weathered and overgrown many years later",
    "SpatialTrans": "seen from the far side after everything shifted",
    "PhysicalTrans": "burst apart into scattered fragments",
    "ImplicitLogic": "toppled over with its pieces strewn about",
    "StoryType": "transformed as the tale reaches its twist",
    "RealToVirtual": "crackling with glowing arcs of energy",
    "Exaggeration": "stretched to an impossible, towering size",
}

_VIDEO_CATEGORIES = ["SpatialTrans", "PhysicalTrans", "StoryType", "Exaggeration"]


class MockTextLLM(TextLLM):
    """Template-driven LLM mock.

    Output is a pure function of (prompt, seed): quadruple-synthesis prompts
    (carrying a ``Category:`` line) get a JSON quadruple whose keyword occurs
    in both image prompts; storyline-rewrite prompts (carrying a
    ``Storyline description:`` line) get a JSON instruction rewrite.
    """

    version = "mock-llm/1"

    def __init__(self, seed: int = 0) -> None:
        self.seed = seed

    def complete(self, prompt: str) -> str:
        if "Storyline description:" in prompt:
            return self._rewrite(prompt)
        return self._quadruple(prompt)

    def _quadruple(self, prompt: str) -> str:
        category = "PhysicalTrans"
        for line in prompt.splitlines():
            if line.startswith("Category:"):
                category = line.split(":", 1)[1].strip().split()[0]
                break
        rng = np.random.default_rng(derive_seed(self.seed, "quad", prompt))
        subject, keyword = _SUBJECTS[rng.integers(len(_SUBJECTS))]
        scene = _SCENES[rng.integers(len(_SCENES))]
        outcome = _OUTCOMES.get(category, _OUTCOMES["PhysicalTrans"])
        quad = {
            "input_prompt": f"{subject} {scene}",
            "instruction": f"What would happen if {subject} ended up {outcome}?",
            "output_prompt": f"{subject} {outcome}, {scene}",
            "keywords": [keyword],
        }
        return json.dumps(quad)

    def _rewrite(self, prompt: str) -> str:
        description = ""
        for line in prompt.splitlines():
            if line.startswith("Storyline description:"):
                description = line.split(":", 1)[1].strip()
        rng = np.random.default_rng(derive_seed(self.seed, "rewrite", prompt))
        category = _VIDEO_CATEGORIES[rng.integers(len(_VIDEO_CATEGORIES))]
        subject, _ = _SUBJECTS[rng.integers(len(_SUBJECTS))]
        payload = {
            "instruction": f"What would happen next, given that {description or 'the scene unfolds'}?",
            "output_description": f"The later moment of the scene: {subject} {_OUTCOMES[category]}",
            "category": category,
        }
        return json.dumps(payload)


# ---------------------------------------------------------------------------
# Diffusion-side mocks


class MockT2IDenoiser(T2IDenoiser):
    """Smooth-field image generator with per-keyword attention blobs."""

    version = "mock-t2i/1"

    def __init__(
        self,
        image_size: tuple[int, int] = (64, 64),
        attention_size: tuple[int, int] = (16, 16),
        zero_attention_keywords: Sequence[str] = (),
    ) -> None:
        self.image_size = image_size
        self.attention_size = attention_size
        self.zero_attention_keywords = set(zero_attention_keywords)

    def generate(self, prompt: str, keywords: Sequence[str], seed: int) -> T2IGeneration:
        h, w = self.image_size
        field = smooth_field((3, h, w), derive_seed(seed, "t2i-image", prompt))
        image = np.transpose((field + 1.0) / 2.0, (1, 2, 0))
        attention: dict[str, np.ndarray] = {}
        for kw in keywords:
            if kw in self.zero_attention_keywords:
                attention[kw] = np.zeros(self.attention_size)
            else:
                attention[kw] = _blob(self.attention_size, kw)
        return T2IGeneration(
            image=image,
            attention_maps=attention,
            latent=encode_latent(image),
            seed=seed,
        )


def inpaint_step_seed(seed: int, t: int) -> int:
    """Seed used for the forward-noised original at blending step t."""
    return derive_seed(seed, "inpaint-noise", t)


def _ddim_step(z: np.ndarray, eps: np.ndarray, a_t: float, a_prev: float) -> np.ndarray:
    z0_hat = (z - np.sqrt(1.0 - a_t) * eps) / np.sqrt(a_t)
    return np.sqrt(a_prev) * z0_hat + np.sqrt(1.0 - a_prev) * eps


class MockInpaintDenoiser(InpaintDenoiser):
    """Deterministic DDIM-style loop with per-step mask blending.

    Outside the mask, the latent is replaced bit-exactly by the forward-
    noised original at every step (seeded via :func:`inpaint_step_seed`),
    so at t=0 the non-edited region decodes to the original pixels.
    """

    version = "mock-inpaint/1"

    def inpaint(
        self,
        z_ori: np.ndarray,
        mask: BinaryMask,
        prompt: str,
        schedule: NoiseSchedule,
        seed: int,
        control: InpaintControl | None = None,
        record_trace: bool = False,
    ) -> InpaintResult:
        z_ori = np.asarray(z_ori, dtype=np.float64)
        if mask.resolution != z_ori.shape[1:]:
            raise ValueError(
                f"mask {mask.resolution} does not match latent spatial {z_ori.shape[1:]}"
            )
        cond = stable_digest(
            prompt,
            control.canny.tobytes() if control is not None and control.canny is not None else b"",
            control.features.tobytes() if control is not None and control.features is not None else b"",
        )
        origin = LatentState(z_ori, 0)
        T = schedule.num_steps
        keep = mask.values[None, :, :] == 1
        rng = np.random.default_rng(derive_seed(seed, "inpaint-init"))
        z = rng.standard_normal(z_ori.shape)
        steps: list[BlendStep] = []

        def blend(z_now: np.ndarray, t: int) -> np.ndarray:
            noised = forward_noise(origin, t, schedule, inpaint_step_seed(seed, t))
            out = np.where(keep, z_now, noised.z)
            if record_trace:
                steps.append(BlendStep(t, out.copy()))
            return out

        z = blend(z, T)
        for t in range(T, 0, -1):
            eps = mock_denoiser_step(z, t, ("inpaint", cond), seed)
            z = _ddim_step(z, eps, schedule.alpha_bar(t), schedule.alpha_bar(t - 1))
            z = blend(z, t - 1)
        return InpaintResult(image=decode_latent(z), steps=tuple(steps))


class PassThroughInpaintDenoiser(InpaintDenoiser):
    """Decodes the base latent unchanged; isolates mask/composite plumbing."""

    version = "passthrough-inpaint/1"

    def inpaint(
        self,
        z_ori: np.ndarray,
        mask: BinaryMask,
        prompt: str,
        schedule: NoiseSchedule,
        seed: int,
        control: InpaintControl | None = None,
        record_trace: bool = False,
    ) -> InpaintResult:
        return InpaintResult(image=decode_latent(np.asarray(z_ori, dtype=np.float64)))


class MockRefineDenoiser(RefineDenoiser):
    """Partial re-noise then re-denoise of the request latent, conditioned
    on the target prompt, identity features, and edge map."""

    version = "mock-refine/1"

    def refine(self, request: RefinementRequest, schedule: NoiseSchedule, seed: int) -> np.ndarray:
        cond = stable_digest(
            request.target_prompt,
            request.original_features.tobytes(),
            request.canny.tobytes(),
        )
        t_mid = max(1, schedule.num_steps // 2)
        z = forward_noise(request.latent, t_mid, schedule, derive_seed(seed, "refine-init")).z
        for t in range(t_mid, 0, -1):
            eps = mock_denoiser_step(z, t, ("refine", cond), seed)
            z = _ddim_step(z, eps, schedule.alpha_bar(t), schedule.alpha_bar(t - 1))
        return decode_latent(z)


class IdentityRefineDenoiser(RefineDenoiser):
    """Returns the request image unchanged; useful to isolate other stages."""

    version = "identity-refine/1"

    def refine(self, request: RefinementRequest, schedule: NoiseSchedule, seed: int) -> np.ndarray:
        return decode_latent(request.latent.z)


class MockEditDenoiser(EditDenoiser):
    """Noise-prediction triple with distinct conditioning hashes per branch.

    The instruction-token attention snapshot is a stable blob keyed by the
    instruction text; pass ``attention_fn`` to script other patterns.
    """

    version = "mock-edit/1"

    def __init__(
        self,
        attention_size: tuple[int, int] = (16, 16),
        attention_fn: Callable[[str, int, tuple[int, int]], np.ndarray] | None = None,
    ) -> None:
        self.attention_size = attention_size
        self.attention_fn = attention_fn

    def predict_triple(
        self,
        z_t: np.ndarray,
        t: int,
        z_ori: np.ndarray,
        instruction: str,
        seed: int,
        capture_attention: bool = False,
    ) -> CfgTriple:
        z_t = np.asarray(z_t, dtype=np.float64)
        img_digest = stable_digest(np.asarray(z_ori, dtype=np.float64).tobytes())
        eps_uncond = mock_denoiser_step(z_t, t, ("edit", "", ""), seed)
        eps_img = mock_denoiser_step(z_t, t, ("edit", img_digest, ""), seed)
        eps_full = mock_denoiser_step(z_t, t, ("edit", img_digest, instruction), seed)
        attention = None
        if capture_attention:
            if self.attention_fn is not None:
                attention = np.asarray(self.attention_fn(instruction, t, self.attention_size))
            else:
                attention = _blob(self.attention_size, f"attn:{instruction}")
        return CfgTriple(eps_uncond, eps_img, eps_full, attention)


# ---------------------------------------------------------------------------
# Vision utilities


class MockSegmenter(Segmenter):
    """Partitions any image into a fixed grid of region masks (default 2x2)."""

    version = "mock-segment/1"

    def __init__(self, grid: tuple[int, int] = (2, 2)) -> None:
        if grid[0] < 1 or grid[1] < 1:
            raise ValueError("grid must be at least 1x1")
        self.grid = grid

    def segment(self, image: np.ndarray) -> list[BinaryMask]:
        h, w = np.asarray(image).shape[:2]
        gy, gx = self.grid
        row_edges = np.linspace(0, h, gy + 1, dtype=int)
        col_edges = np.linspace(0, w, gx + 1, dtype=int)
        masks = []
        for i in range(gy):
            for j in range(gx):
                m = np.zeros((h, w), dtype=np.uint8)
                m[row_edges[i] : row_edges[i + 1], col_edges[j] : col_edges[j + 1]] = 1
                masks.append(BinaryMask(m))
        return masks


class MockImageEncoder(ImageEncoder):
    """Per-channel means; crude but hand-computable identity features."""

    version = "mock-encode/1"

    def encode(self, image: np.ndarray) -> np.ndarray:
        arr = np.asarray(image, dtype=np.float64)
        if arr.ndim == 2:
            arr = arr[:, :, None]
        return arr.mean(axis=(0, 1))


class MockEdgeExtractor(EdgeExtractor):
    """Gradient-magnitude threshold; a constant image yields no edges."""

    version = "mock-edges/1"

    def __init__(self, threshold: float = 0.05) -> None:
        self.threshold = threshold

    def edges(self, image: np.ndarray) -> np.ndarray:
        arr = np.asarray(image, dtype=np.float64)
        gray = arr.mean(axis=2) if arr.ndim == 3 else arr
        if gray.shape[0] < 2 or gray.shape[1] < 2:
            return np.zeros_like(gray, dtype=np.uint8)
        gy, gx = np.gradient(gray)
        magnitude = np.hypot(gy, gx)
        return (magnitude > self.threshold).astype(np.uint8)


class MockCaptioner(Captioner):
    """Hash-derived storyline sentence from the first and last frames."""

    version = "mock-caption/1"

    _MOTIONS = [
        "drifts slowly across the frame",
        "tips over and comes apart",
        "changes shape under the light",
        "moves from one side to the other",
        "grows until it fills the scene",
    ]

    def __init__(self, seed: int = 0) -> None:
        self.seed = seed

    def describe(self, frames: Sequence[np.ndarray]) -> str:
        if not frames:
            raise AdapterError("captioner needs at least one frame")
        first = np.asarray(frames[0], dtype=np.float64)
        last = np.asarray(frames[-1], dtype=np.float64)
        rng = np.random.default_rng(
            derive_seed(self.seed, "caption", first.tobytes(), last.tobytes())
        )
        subject, _ = _SUBJECTS[rng.integers(len(_SUBJECTS))]
        motion = self._MOTIONS[rng.integers(len(self._MOTIONS))]
        return f"{subject} {motion}"


class ScriptedCaptioner(Captioner):
    version = "scripted-caption/1"

    def __init__(self, responses: Sequence[str], cycle: bool = False) -> None:
        self._responses = list(responses)
        self._cycle = cycle
        self._i = 0

    def describe(self, frames: Sequence[np.ndarray]) -> str:
        if self._i >= len(self._responses):
            if not self._cycle or not self._responses:
                raise AdapterError("scripted captioner exhausted its responses")
            self._i = 0
        out = self._responses[self._i]
        self._i += 1
        return out


class MockJudge(Judge):
    """Deterministic verdicts: '1' with probability pass_rate per query."""

    version = "mock-judge/1"

    def __init__(self, seed: int = 0, pass_rate: float = 1.0) -> None:
        if not 0.0 <= pass_rate <= 1.0:
            raise ValueError("pass_rate must be in [0, 1]")
        self.seed = seed
        self.pass_rate = pass_rate

    def verdict(self, image: np.ndarray | None, prompt: str) -> str:
        img_part = np.asarray(image).tobytes() if image is not None else b""
        u = _unit("judge", self.seed, img_part, prompt)
        return "1" if u < self.pass_rate else "0"


class ScriptedJudge(Judge):
    version = "scripted-judge/1"

    def __init__(self, responses: Sequence[str], cycle: bool = False) -> None:
        self._responses = [str(r) for r in responses]
        self._cycle = cycle
        self._i = 0
        self.prompts: list[str] = []

    def verdict(self, image: np.ndarray | None, prompt: str) -> str:
        self.prompts.append(prompt)
        if self._i >= len(self._responses):
            if not self._cycle or not self._responses:
                raise AdapterError("scripted judge exhausted its responses")
            self._i = 0
        out = self._responses[self._i]
        self._i += 1
        return out


# ---------------------------------------------------------------------------
# Metrics


class MockMetricClip(MetricClip):
    """Hash-based similarity mapped into the plausible score band."""

    version = "mock-clip/1"

    def __init__(self, seed: int = 0, low: float = 0.17, high: float = 0.25) -> None:
        self.seed = seed
        self.low = low
        self.high = high

    def score(self, image: np.ndarray, text: str) -> float:
        u = _unit("clip", self.seed, np.asarray(image).tobytes(), text)
        return self.low + (self.high - self.low) * u


class ScriptedMetricClip(MetricClip):
    version = "scripted-clip/1"

    def __init__(self, values: Sequence[float]) -> None:
        self._values = list(values)
        self._i = 0

    def score(self, image: np.ndarray, text: str) -> float:
        if self._i >= len(self._values):
            raise AdapterError("scripted CLIP metric exhausted its values")
        out = self._values[self._i]
        self._i += 1
        return float(out)


class MockMetricLpips(MetricLpips):
    """Mean absolute pixel difference stand-in."""

    version = "mock-lpips/1"

    def distance(self, image_a: np.ndarray, image_b: np.ndarray) -> float:
        a = np.asarray(image_a, dtype=np.float64)
        b = np.asarray(image_b, dtype=np.float64)
        if a.shape != b.shape:
            raise ValueError(f"image shapes differ: {a.shape} vs {b.shape}")
        return float(np.abs(a - b).mean())
