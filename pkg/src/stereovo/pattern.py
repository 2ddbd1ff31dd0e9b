"""Retina-style sampling pattern for the binary descriptor.

43 sampling points: a central point plus 7 concentric rings of 6 points,
with alternating rings rotated half a step.  Ring radii grow geometrically
and each point's smoothing sigma grows with its ring radius, so coarse
outer receptive fields overlap while the fovea stays sharp.  Radii and
sigmas are stored as multiples of ``feature.size``.

The shipped pattern (``data/retina_pattern_v1.txt``) is generated once
from a fixed seed and version-pinned; ``build_pattern`` regenerates it
bit-for-bit.
"""

from __future__ import annotations

from dataclasses import dataclass
from importlib import resources
from itertools import combinations
from pathlib import Path

import numpy as np

from .rng import stream

NUM_POINTS = 43
NUM_PAIRS = 512
NUM_ORIENTATION_PAIRS = 45


@dataclass(frozen=True)
class PatternConfig:
    rings: int = 7
    points_per_ring: int = 6
    inner_radius: float = 0.25   # in units of feature.size
    outer_radius: float = 2.5
    sigma_ratio: float = 0.4
    num_pairs: int = NUM_PAIRS
    num_orientation_pairs: int = NUM_ORIENTATION_PAIRS
    seed: int = 17
    version: str = "v1"


@dataclass(frozen=True)
class RetinaPattern:
    version: str
    angles: np.ndarray        # (43,) radians
    radii: np.ndarray         # (43,) multiples of feature.size
    sigmas: np.ndarray        # (43,) multiples of feature.size
    pairs: np.ndarray         # (512, 2) point indices, a < b
    orientation_pairs: np.ndarray  # (45, 2) long-baseline pairs

    @property
    def num_points(self) -> int:
        return len(self.angles)

    @property
    def num_bits(self) -> int:
        return len(self.pairs)

    @property
    def support_radius(self) -> float:
        """Outer extent in units of feature.size, smoothing kernels included."""
        return float(np.max(self.radii + 2.0 * self.sigmas))

    def positions(self) -> np.ndarray:
        """(43, 2) unit-size sampling offsets (x, y)."""
        return np.stack([self.radii * np.cos(self.angles), self.radii * np.sin(self.angles)], axis=1)

    def __eq__(self, other) -> bool:
        if not isinstance(other, RetinaPattern):
            return NotImplemented
        return (
            self.version == other.version
            and np.array_equal(self.angles, other.angles)
            and np.array_equal(self.radii, other.radii)
            and np.array_equal(self.sigmas, other.sigmas)
            and np.array_equal(self.pairs, other.pairs)
            and np.array_equal(self.orientation_pairs, other.orientation_pairs)
        )


def build_pattern(cfg: PatternConfig = PatternConfig()) -> RetinaPattern:
    """Deterministically generate the pattern from its config."""
    angles = [0.0]
    radii = [0.0]
    sigmas = [cfg.sigma_ratio * cfg.inner_radius]
    growth = (cfg.outer_radius / cfg.inner_radius) ** (1.0 / max(cfg.rings - 1, 1))
    for ring in range(cfg.rings):
        r = cfg.inner_radius * growth**ring
        offset = np.pi / cfg.points_per_ring if ring % 2 else 0.0
        for j in range(cfg.points_per_ring):
            angles.append(offset + 2.0 * np.pi * j / cfg.points_per_ring)
            radii.append(r)
            sigmas.append(cfg.sigma_ratio * r)
    angles_a = np.round(np.asarray(angles), 12)
    radii_a = np.round(np.asarray(radii), 12)
    sigmas_a = np.round(np.asarray(sigmas), 12)
    n = len(angles_a)

    pos = np.stack([radii_a * np.cos(angles_a), radii_a * np.sin(angles_a)], axis=1)
    all_pairs = np.array(list(combinations(range(n), 2)), dtype=np.int64)

    # intensity-test pairs: prefer coarse (large combined radius) tests,
    # with seeded jitter so every scale still contributes
    rng = stream(cfg.seed, f"retina-pairs-{cfg.version}")
    jitter = rng.uniform(0.0, 0.5 * cfg.outer_radius, size=len(all_pairs))
    score = radii_a[all_pairs[:, 0]] + radii_a[all_pairs[:, 1]] + jitter
    order = np.argsort(-score, kind="stable")
    pairs = all_pairs[order[: cfg.num_pairs]]
    pairs = pairs[np.lexsort((pairs[:, 1], pairs[:, 0]))]

    # orientation pairs: the longest-baseline tests, i.e. the most nearly
    # diametric ones; long levers give a stable gradient direction
    sep = np.linalg.norm(pos[all_pairs[:, 0]] - pos[all_pairs[:, 1]], axis=1)
    sep_order = np.lexsort((all_pairs[:, 1], all_pairs[:, 0], -np.round(sep, 9)))
    opairs = all_pairs[sep_order[: cfg.num_orientation_pairs]]
    opairs = opairs[np.lexsort((opairs[:, 1], opairs[:, 0]))]

    return RetinaPattern(
        version=cfg.version,
        angles=angles_a,
        radii=radii_a,
        sigmas=sigmas_a,
        pairs=pairs,
        orientation_pairs=opairs,
    )


def dump_pattern(pattern: RetinaPattern) -> str:
    lines = [f"version {pattern.version}", f"points {pattern.num_points}"]
    for a, r, s in zip(pattern.angles, pattern.radii, pattern.sigmas):
        lines.append(f"{float(a)!r} {float(r)!r} {float(s)!r}")
    lines.append(f"pairs {len(pattern.pairs)}")
    lines.extend(f"{a} {b}" for a, b in pattern.pairs)
    lines.append(f"orientation_pairs {len(pattern.orientation_pairs)}")
    lines.extend(f"{a} {b}" for a, b in pattern.orientation_pairs)
    return "\n".join(lines) + "\n"


def parse_pattern(text: str) -> RetinaPattern:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    version = lines[0].split()[1]
    npts = int(lines[1].split()[1])
    rows = [tuple(float(t) for t in ln.split()) for ln in lines[2 : 2 + npts]]
    angles, radii, sigmas = (np.array(col) for col in zip(*rows))
    idx = 2 + npts
    npairs = int(lines[idx].split()[1])
    pairs = np.array([[int(t) for t in ln.split()] for ln in lines[idx + 1 : idx + 1 + npairs]], dtype=np.int64)
    idx += 1 + npairs
    nori = int(lines[idx].split()[1])
    opairs = np.array([[int(t) for t in ln.split()] for ln in lines[idx + 1 : idx + 1 + nori]], dtype=np.int64)
    return RetinaPattern(version=version, angles=angles, radii=radii, sigmas=sigmas, pairs=pairs, orientation_pairs=opairs)


def save_pattern(pattern: RetinaPattern, path: str | Path) -> None:
    Path(path).write_text(dump_pattern(pattern))


def load_pattern(path: str | Path) -> RetinaPattern:
    return parse_pattern(Path(path).read_text())


_default: RetinaPattern | None = None


def default_pattern() -> RetinaPattern:
    """The version-pinned pattern shipped with the package."""
    global _default
    if _default is None:
        text = resources.files("stereovo").joinpath("data/retina_pattern_v1.txt").read_text()
        _default = parse_pattern(text)
    return _default
