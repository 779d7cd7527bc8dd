from __future__ import annotations

import numpy as np
import pytest

from editforge.editmath import BinaryMask, NoiseSchedule


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(12345)


@pytest.fixture
def schedule() -> NoiseSchedule:
    return NoiseSchedule.linear(8)


def random_mask(rng: np.random.Generator, shape: tuple[int, int]) -> BinaryMask:
    return BinaryMask((rng.random(shape) < 0.5).astype(np.uint8))


def gray_image(value: float, size: tuple[int, int] = (8, 8)) -> np.ndarray:
    return np.full((size[0], size[1], 3), value, dtype=np.float64)
