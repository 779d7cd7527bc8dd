"""Adapter interfaces for every pretrained-model role in the pipelines.

Each adapter declares a ``version`` string that pipelines record into
provenance, and must be deterministic under a fixed seed so whole runs are
replayable.
"""

from __future__ import annotations

import re
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..editmath import BinaryMask, NoiseSchedule, RefinementRequest


class AdapterError(RuntimeError):
    """An adapter failed to produce a usable result."""


class AdapterConnectionError(AdapterError):
    """A remote adapter endpoint stayed unreachable after retries."""


@dataclass(frozen=True)
class T2IGeneration:
    """Output of a text-to-image call: image, per-keyword attention, latent."""

    image: np.ndarray
    attention_maps: dict[str, "np.ndarray | object"]
    latent: np.ndarray
    seed: int


@dataclass(frozen=True)
class BlendStep:
    """One recorded inpainting step: the latent after mask blending at t."""

    t: int
    latent: np.ndarray


@dataclass(frozen=True)
class InpaintResult:
    image: np.ndarray
    steps: tuple[BlendStep, ...] = ()


@dataclass(frozen=True)
class InpaintControl:
    """Optional structure/identity conditioning for inpainting."""

    canny: np.ndarray | None = None
    features: np.ndarray | None = None


@dataclass(frozen=True)
class CfgTriple:
    """The three noise predictions guidance composition consumes."""

    eps_uncond: np.ndarray
    eps_img: np.ndarray
    eps_full: np.ndarray
    attention: np.ndarray | None = None


class Adapter(ABC):
    kind: str = ""
    version: str = ""


class TextLLM(Adapter):
    kind = "text_llm"

    @abstractmethod
    def complete(self, prompt: str) -> str:
        """Return the raw completion for one prompt."""


class T2IDenoiser(Adapter):
    kind = "t2i_denoiser"

    @abstractmethod
    def generate(self, prompt: str, keywords: Sequence[str], seed: int) -> T2IGeneration:
        """Generate an image plus a cross-attention map per keyword.

        Aggregation of attention over layers and steps is this adapter's
        responsibility; the returned map per keyword is already aggregated.
        """


class InpaintDenoiser(Adapter):
    kind = "inpaint_denoiser"

    @abstractmethod
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
        """Regenerate inside the mask while re-noising the original outside.

        Implementations must blend at every step: outside-mask latent values
        are the forward-noised original, bit-exactly.
        """


class RefineDenoiser(Adapter):
    kind = "refine_denoiser"

    @abstractmethod
    def refine(self, request: RefinementRequest, schedule: NoiseSchedule, seed: int) -> np.ndarray:
        """Re-denoise the request latent under identity/structure guidance."""


class EditDenoiser(Adapter):
    kind = "edit_denoiser"

    @abstractmethod
    def predict_triple(
        self,
        z_t: np.ndarray,
        t: int,
        z_ori: np.ndarray,
        instruction: str,
        seed: int,
        capture_attention: bool = False,
    ) -> CfgTriple:
        """Predict noise for (no cond), (image cond), and (image+text cond)."""


class Segmenter(Adapter):
    kind = "segmenter"

    @abstractmethod
    def segment(self, image: np.ndarray) -> list[BinaryMask]:
        """Return candidate object masks at image resolution."""


class Captioner(Adapter):
    kind = "captioner"

    @abstractmethod
    def describe(self, frames: Sequence[np.ndarray]) -> str:
        """Describe the storyline spanned by an ordered frame sequence."""


class Judge(Adapter):
    kind = "judge"

    @abstractmethod
    def verdict(self, image: np.ndarray | None, prompt: str) -> str:
        """Return the raw judge reply; callers parse the 0/1 out of it."""


class ImageEncoder(Adapter):
    kind = "image_encoder"

    @abstractmethod
    def encode(self, image: np.ndarray) -> np.ndarray:
        """Return a 1-D feature vector."""


class EdgeExtractor(Adapter):
    kind = "edge_extractor"

    @abstractmethod
    def edges(self, image: np.ndarray) -> np.ndarray:
        """Return an (H, W) binary edge map."""


class MetricClip(Adapter):
    kind = "metric_clip"

    @abstractmethod
    def score(self, image: np.ndarray, text: str) -> float:
        """Image-text similarity."""


class MetricLpips(Adapter):
    kind = "metric_lpips"

    @abstractmethod
    def distance(self, image_a: np.ndarray, image_b: np.ndarray) -> float:
        """Perceptual distance; 0 for identical inputs."""


# A standalone 0/1 is one not glued to another digit and not the integer
# part of a decimal, so "I think 0." parses but "0.5" does not.
_VERDICT_RE = re.compile(r"(?<![\d.])([01])(?!\.?\d)")


def parse_binary_verdict(text: str) -> int | None:
    """Extract the first standalone 0/1 token; None when absent."""
    m = _VERDICT_RE.search(text)
    return int(m.group(1)) if m else None
