"""Uniform interfaces to pretrained models plus deterministic mocks."""

from .base import (
    Adapter,
    AdapterConnectionError,
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
    parse_binary_verdict,
)
from .mocks import (
    IdentityRefineDenoiser,
    MockCaptioner,
    MockEdgeExtractor,
    MockEditDenoiser,
    MockImageEncoder,
    MockInpaintDenoiser,
    MockJudge,
    MockMetricClip,
    MockMetricLpips,
    MockRefineDenoiser,
    MockSegmenter,
    MockT2IDenoiser,
    MockTextLLM,
    PassThroughInpaintDenoiser,
    ScriptedCaptioner,
    ScriptedJudge,
    ScriptedMetricClip,
    ScriptedTextLLM,
    inpaint_step_seed,
    mock_denoiser_step,
    smooth_field,
)
from .ratelimit import RateLimiter
from .registry import ADAPTER_KINDS, AdapterRegistry, build_registry, get_adapter

__all__ = [
    "ADAPTER_KINDS",
    "Adapter",
    "AdapterConnectionError",
    "AdapterError",
    "AdapterRegistry",
    "BlendStep",
    "Captioner",
    "CfgTriple",
    "EdgeExtractor",
    "EditDenoiser",
    "IdentityRefineDenoiser",
    "ImageEncoder",
    "InpaintControl",
    "InpaintDenoiser",
    "InpaintResult",
    "Judge",
    "MetricClip",
    "MetricLpips",
    "MockCaptioner",
    "MockEdgeExtractor",
    "MockEditDenoiser",
    "MockImageEncoder",
    "MockInpaintDenoiser",
    "MockJudge",
    "MockMetricClip",
    "MockMetricLpips",
    "MockRefineDenoiser",
    "MockSegmenter",
    "MockT2IDenoiser",
    "MockTextLLM",
    "PassThroughInpaintDenoiser",
    "RateLimiter",
    "RefineDenoiser",
    "ScriptedCaptioner",
    "ScriptedJudge",
    "ScriptedMetricClip",
    "ScriptedTextLLM",
    "Segmenter",
    "T2IDenoiser",
    "T2IGeneration",
    "TextLLM",
    "build_registry",
    "get_adapter",
    "inpaint_step_seed",
    "mock_denoiser_step",
    "parse_binary_verdict",
    "smooth_field",
]
