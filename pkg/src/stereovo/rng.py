"""Named random streams: one user-facing seed, independent per-subsystem
generators so adding randomness in one place never perturbs another."""

from __future__ import annotations

import zlib

import numpy as np


def stream(seed: int, name: str) -> np.random.Generator:
    """Deterministic generator for (seed, name)."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), zlib.crc32(name.encode())]))


def child_seeds(seed: int, name: str, n: int) -> list[int]:
    """n reproducible integer seeds derived from one named stream."""
    return [int(s) for s in stream(seed, name).integers(0, 2**31 - 1, size=n)]
