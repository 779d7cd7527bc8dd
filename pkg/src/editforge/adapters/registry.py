"""Adapter construction and the registry the pipelines consume.

Each adapter kind is configured independently: a deterministic mock (only
needs a seed), a remote endpoint (text-protocol kinds), or a user plugin
(dotted ``module:factory`` path). Mocks are the default everywhere.
"""

from __future__ import annotations

import importlib
from dataclasses import dataclass, field
from typing import Any, Mapping

from ..seeding import derive_seed
from .base import (
    Adapter,
    AdapterError,
    Captioner,
    EdgeExtractor,
    EditDenoiser,
    ImageEncoder,
    InpaintDenoiser,
    Judge,
    MetricClip,
    MetricLpips,
    RefineDenoiser,
    Segmenter,
    T2IDenoiser,
    TextLLM,
)
from .endpoint import EndpointCaptioner, EndpointClient, EndpointJudge, EndpointTextLLM
from .mocks import (
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
)
from .ratelimit import RateLimiter

ADAPTER_KINDS = (
    "text_llm",
    "t2i_denoiser",
    "inpaint_denoiser",
    "refine_denoiser",
    "edit_denoiser",
    "segmenter",
    "captioner",
    "judge",
    "image_encoder",
    "edge_extractor",
    "metric_clip",
    "metric_lpips",
)

_ENDPOINT_KINDS = {
    "text_llm": EndpointTextLLM,
    "judge": EndpointJudge,
    "captioner": EndpointCaptioner,
}


def _build_mock(kind: str, cfg: Mapping[str, Any], seed: int) -> Adapter:
    if kind == "text_llm":
        return MockTextLLM(seed=seed)
    if kind == "t2i_denoiser":
        return MockT2IDenoiser(
            image_size=tuple(cfg.get("image_size", (64, 64))),
            attention_size=tuple(cfg.get("attention_size", (16, 16))),
            zero_attention_keywords=cfg.get("zero_attention_keywords", ()),
        )
    if kind == "inpaint_denoiser":
        return MockInpaintDenoiser()
    if kind == "refine_denoiser":
        return MockRefineDenoiser()
    if kind == "edit_denoiser":
        return MockEditDenoiser(attention_size=tuple(cfg.get("attention_size", (16, 16))))
    if kind == "segmenter":
        return MockSegmenter(grid=tuple(cfg.get("grid", (2, 2))))
    if kind == "captioner":
        return MockCaptioner(seed=seed)
    if kind == "judge":
        return MockJudge(seed=seed, pass_rate=float(cfg.get("pass_rate", 1.0)))
    if kind == "image_encoder":
        return MockImageEncoder()
    if kind == "edge_extractor":
        return MockEdgeExtractor(threshold=float(cfg.get("threshold", 0.05)))
    if kind == "metric_clip":
        return MockMetricClip(seed=seed)
    if kind == "metric_lpips":
        return MockMetricLpips()
    raise AdapterError(f"unknown adapter kind: {kind}")


def get_adapter(kind: str, config: Mapping[str, Any] | None = None, base_seed: int = 0) -> Adapter:
    """Build one adapter: implementation mock (default), endpoint, or plugin."""
    if kind not in ADAPTER_KINDS:
        raise AdapterError(f"unknown adapter kind: {kind}")
    cfg = dict(config or {})
    implementation = cfg.get("implementation", "mock")
    seed = int(cfg.get("seed", derive_seed(base_seed, "adapter", kind)))
    if implementation == "mock":
        return _build_mock(kind, cfg, seed)
    if implementation == "endpoint":
        endpoint_cls = _ENDPOINT_KINDS.get(kind)
        if endpoint_cls is None:
            raise AdapterError(
                f"adapter kind {kind} has no endpoint client; use a plugin implementation"
            )
        url = cfg.get("url")
        if not url:
            raise AdapterError(f"adapter {kind}: endpoint implementation requires a url")
        limiter = None
        if cfg.get("rate_limit"):
            limiter = RateLimiter(float(cfg["rate_limit"]))
        client = EndpointClient(
            url=url,
            token_env=cfg.get("token_env"),
            rate_limiter=limiter,
            max_retries=int(cfg.get("max_retries", 3)),
        )
        return endpoint_cls(client)
    if implementation == "plugin":
        target = cfg.get("target", "")
        if ":" not in target:
            raise AdapterError(f"adapter {kind}: plugin target must look like 'module:factory'")
        mod_name, factory_name = target.split(":", 1)
        factory = getattr(importlib.import_module(mod_name), factory_name)
        return factory(cfg)
    raise AdapterError(f"adapter {kind}: unknown implementation {implementation!r}")


@dataclass
class AdapterRegistry:
    """One configured adapter per role, with versions for provenance."""

    text_llm: TextLLM
    t2i_denoiser: T2IDenoiser
    inpaint_denoiser: InpaintDenoiser
    refine_denoiser: RefineDenoiser
    edit_denoiser: EditDenoiser
    segmenter: Segmenter
    captioner: Captioner
    judge: Judge
    image_encoder: ImageEncoder
    edge_extractor: EdgeExtractor
    metric_clip: MetricClip
    metric_lpips: MetricLpips
    # The quality discriminator may differ from the scoring judge; it
    # defaults to the same adapter when not configured separately.
    discriminator: Judge = field(default=None)  # type: ignore[assignment]

    def __post_init__(self) -> None:
        if self.discriminator is None:
            self.discriminator = self.judge

    def versions(self) -> dict[str, str]:
        return {kind: getattr(self, kind).version for kind in ADAPTER_KINDS}

    def drain_transcripts(self) -> dict[str, list[dict]]:
        """Collect and clear request/response logs from endpoint adapters.

        Mocks have no logs; remote adapters keep one entry per call, which
        run summaries persist for regenerability.
        """
        transcripts: dict[str, list[dict]] = {}
        for kind in (*ADAPTER_KINDS, "discriminator"):
            client = getattr(getattr(self, kind), "client", None)
            log = getattr(client, "request_log", None)
            if log:
                transcripts[kind] = list(log)
                log.clear()
        return transcripts


def build_registry(
    adapter_configs: Mapping[str, Mapping[str, Any]] | None = None, base_seed: int = 0
) -> AdapterRegistry:
    """Materialize the full registry from per-kind config sections."""
    configs = dict(adapter_configs or {})
    unknown = set(configs) - set(ADAPTER_KINDS) - {"discriminator"}
    if unknown:
        raise AdapterError(f"unknown adapter kinds in config: {sorted(unknown)}")
    adapters = {kind: get_adapter(kind, configs.get(kind), base_seed) for kind in ADAPTER_KINDS}
    discriminator = None
    if "discriminator" in configs:
        discriminator = get_adapter("judge", configs["discriminator"], base_seed)
    return AdapterRegistry(discriminator=discriminator, **adapters)  # type: ignore[arg-type]
