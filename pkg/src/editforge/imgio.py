"""Image array conventions and PNG persistence.

Images are float64 arrays of shape (H, W, 3) with values in [0, 1]; latents
are channel-first float64 arrays. PNG round-trips quantize to 8 bits, so
pipelines that need bit-exact equality compare arrays, not files.
"""

from __future__ import annotations

import hashlib
from pathlib import Path

import numpy as np
from PIL import Image


def to_uint8(image: np.ndarray) -> np.ndarray:
    arr = np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0)
    return np.round(arr * 255.0).astype(np.uint8)


def from_uint8(arr: np.ndarray) -> np.ndarray:
    return np.asarray(arr, dtype=np.float64) / 255.0


def save_image(image: np.ndarray, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(to_uint8(image)).save(path, format="PNG")


def load_image(path: str | Path) -> np.ndarray:
    with Image.open(path) as im:
        return from_uint8(np.asarray(im.convert("RGB")))


def image_digest(image: np.ndarray) -> str:
    """Content hash of the quantized image, for provenance records."""
    return hashlib.blake2b(to_uint8(image).tobytes(), digest_size=8).hexdigest()


def encode_latent(image: np.ndarray) -> np.ndarray:
    """Channel-first latent; the mock VAE is an exact transpose."""
    return np.transpose(np.asarray(image, dtype=np.float64), (2, 0, 1))


def decode_latent(z: np.ndarray) -> np.ndarray:
    """Inverse of :func:`encode_latent`, clipped to the image range."""
    return np.clip(np.transpose(np.asarray(z, dtype=np.float64), (1, 2, 0)), 0.0, 1.0)
