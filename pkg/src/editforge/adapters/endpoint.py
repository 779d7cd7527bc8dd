"""Thin HTTP clients for remote text-protocol adapters.

The wire format is a minimal JSON POST ({"prompt": ...} -> {"text": ...}).
Requests go through a rate limiter and exponential backoff; every
request/response pair is kept in ``request_log`` so callers can copy it
into provenance. Credentials come from an environment variable named in
the adapter config, never from the config file itself.
"""

from __future__ import annotations

import base64
import io
import logging
import os
import time
from typing import Callable, Sequence

import httpx
import numpy as np
from PIL import Image

from ..imgio import to_uint8
from .base import AdapterConnectionError, Captioner, Judge, TextLLM
from .ratelimit import RateLimiter

logger = logging.getLogger(__name__)

DEFAULT_MAX_RETRIES = 3
DEFAULT_BACKOFF_BASE = 0.5


class EndpointClient:
    def __init__(
        self,
        url: str,
        token_env: str | None = None,
        rate_limiter: RateLimiter | None = None,
        max_retries: int = DEFAULT_MAX_RETRIES,
        backoff_base: float = DEFAULT_BACKOFF_BASE,
        sleep: Callable[[float], None] = time.sleep,
        transport: httpx.BaseTransport | None = None,
    ) -> None:
        self.url = url
        self.token_env = token_env
        self.rate_limiter = rate_limiter
        self.max_retries = max_retries
        self.backoff_base = backoff_base
        self._sleep = sleep
        self._client = httpx.Client(transport=transport, timeout=30.0)
        self.request_log: list[dict] = []

    def _headers(self) -> dict[str, str]:
        headers = {"content-type": "application/json"}
        if self.token_env:
            token = os.environ.get(self.token_env, "")
            if token:
                headers["authorization"] = f"Bearer {token}"
        return headers

    def post(self, payload: dict) -> dict:
        if self.rate_limiter is not None:
            self.rate_limiter.acquire()
        last_error: Exception | None = None
        for attempt in range(self.max_retries + 1):
            try:
                response = self._client.post(self.url, json=payload, headers=self._headers())
                response.raise_for_status()
                body = response.json()
                self.request_log.append({"request": payload, "response": body})
                return body
            except (httpx.TransportError, httpx.HTTPStatusError) as exc:
                last_error = exc
                logger.warning("endpoint %s attempt %d failed: %s", self.url, attempt + 1, exc)
                if attempt < self.max_retries:
                    self._sleep(self.backoff_base * (2**attempt))
        raise AdapterConnectionError(
            f"endpoint {self.url} unreachable after {self.max_retries + 1} attempts: {last_error}"
        )


class EndpointTextLLM(TextLLM):
    version = "endpoint-llm/1"

    def __init__(self, client: EndpointClient) -> None:
        self.client = client

    def complete(self, prompt: str) -> str:
        return str(self.client.post({"prompt": prompt})["text"])


class EndpointJudge(Judge):
    version = "endpoint-judge/1"

    def __init__(self, client: EndpointClient) -> None:
        self.client = client

    def verdict(self, image: np.ndarray | None, prompt: str) -> str:
        payload: dict = {"prompt": prompt}
        if image is not None:
            payload["image_png_b64"] = _png_b64(image)
        return str(self.client.post(payload)["text"])


class EndpointCaptioner(Captioner):
    version = "endpoint-caption/1"

    def __init__(self, client: EndpointClient) -> None:
        self.client = client

    def describe(self, frames: Sequence[np.ndarray]) -> str:
        payload = {"frames_png_b64": [_png_b64(f) for f in frames]}
        return str(self.client.post(payload)["text"])


def _png_b64(image: np.ndarray) -> str:
    buf = io.BytesIO()
    Image.fromarray(to_uint8(image)).save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode("ascii")
