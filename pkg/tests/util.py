"""Shared helpers for the test suite."""

import numpy as np

from stereovo.image import GrayImage
from stereovo.rng import stream
from stereovo.synthetic import value_noise


def textured_image(seed: int, width: int = 128, height: int = 128,
                   cells=(32, 8, 4)) -> GrayImage:
    """Seeded value-noise image with dense corner structure."""
    noise = value_noise(stream(seed, "test-image"), height, width, cells=cells)
    return GrayImage(np.round(40.0 + noise * 180.0))


def random_packed_bits(rng: np.random.Generator, n: int, nbits: int = 512) -> np.ndarray:
    return rng.integers(0, 256, size=(n, nbits // 8), dtype=np.uint8)


def flip_bits(rng: np.random.Generator, packed: np.ndarray, flips: int) -> np.ndarray:
    """Flip `flips` distinct bits in each packed row."""
    out = packed.copy()
    nbits = packed.shape[1] * 8
    for row in out:
        for b in rng.choice(nbits, size=flips, replace=False):
            row[b // 8] ^= np.uint8(1 << (7 - b % 8))
    return out
