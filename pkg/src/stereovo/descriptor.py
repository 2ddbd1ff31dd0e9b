"""Feature descriptors: retina-pattern binary tests and gradient-histogram
float vectors, both driven by the feature's ``size`` so that depth-derived
scale normalization changes what they see, plus the two-section stereo
(left || right) variant.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import ScaleConfig
from .detector import Feature
from .errors import LengthMismatch, MissingDepth, SupportOutOfBounds
from .geometry import StereoRig, depth_to_radius
from .image import GrayImage
from .pattern import RetinaPattern, default_pattern

FLOAT_DIMS = 128
_GRID = 16           # gradient samples per axis for the float descriptor
_CELLS = 4
_ORI_BINS = 8
_HIST_BINS = 36      # orientation-assignment histogram
_CLAMP = 0.2

_POPCOUNT = np.unpackbits(np.arange(256, dtype=np.uint8)[:, None], axis=1).sum(axis=1).astype(np.uint16)


@dataclass(frozen=True)
class BinaryDescriptor:
    bits: np.ndarray      # packed uint8
    nbits: int
    sections: int = 1


@dataclass(frozen=True)
class FloatDescriptor:
    values: np.ndarray    # float64, L2-normalized per section
    sections: int = 1


@dataclass
class DescriptorSet:
    """Row-per-feature descriptor storage used by the pipeline."""

    kind: str             # "binary" | "float"
    data: np.ndarray      # (n, bytes) uint8 or (n, dims) float64
    sections: int = 1

    def __len__(self) -> int:
        return len(self.data)

    @property
    def nbits(self) -> int:
        return self.data.shape[1] * 8

    def __getitem__(self, i: int):
        if self.kind == "binary":
            return BinaryDescriptor(self.data[i], nbits=self.nbits, sections=self.sections)
        return FloatDescriptor(self.data[i], sections=self.sections)

    @staticmethod
    def from_descriptors(descs) -> "DescriptorSet":
        first = descs[0]
        if isinstance(first, BinaryDescriptor):
            return DescriptorSet("binary", np.stack([d.bits for d in descs]), first.sections)
        return DescriptorSet("float", np.stack([d.values for d in descs]), first.sections)


def normalize_scale(features: list[Feature], rig: StereoRig, cfg: ScaleConfig) -> list[Feature]:
    """Reset each feature's size from its depth; identity when disabled."""
    if not cfg.enabled:
        return features
    missing = [i for i, f in enumerate(features) if f.depth is None]
    if missing:
        raise MissingDepth(f"{len(missing)} feature(s) lack depth (first at index {missing[0]})")
    return [f.with_size(depth_to_radius(f.depth, rig, cfg)) for f in features]


# ---------------------------------------------------------------------------
# retina binary descriptor


def _box_halves(sigmas_px: np.ndarray) -> np.ndarray:
    """Box side approximating a Gaussian: ceil(2*sigma), forced odd."""
    side = np.ceil(2.0 * sigmas_px).astype(np.int64)
    side = np.maximum(side, 1)
    side += (side % 2 == 0).astype(np.int64)
    return side // 2


def describe_binary_batch(
    img: GrayImage, features: list[Feature], pattern: RetinaPattern | None = None
) -> tuple[np.ndarray, np.ndarray]:
    """Binary descriptors for every feature whose support fits in the image.

    Returns (packed bits (m, nbits/8), valid mask (n,)) with m = valid count.
    """
    if pattern is None:
        pattern = default_pattern()
    n = len(features)
    nbytes = pattern.num_bits // 8
    if n == 0:
        return np.empty((0, nbytes), dtype=np.uint8), np.zeros(0, dtype=bool)

    xs = np.array([f.x for f in features])
    ys = np.array([f.y for f in features])
    sizes = np.array([f.size for f in features])

    radii_px = pattern.radii[None, :] * sizes[:, None]      # (n, 43)
    sigma_px = pattern.sigmas[None, :] * sizes[:, None]
    halves = _box_halves(sigma_px)
    ext = np.max(radii_px + halves + 2.0, axis=1)   # +2: subpixel blend neighbors
    valid = (
        (sizes > 0)
        & (xs - ext >= 0)
        & (ys - ext >= 0)
        & (xs + ext <= img.width - 1)
        & (ys + ext <= img.height - 1)
    )
    if not np.any(valid):
        return np.empty((0, nbytes), dtype=np.uint8), valid

    xs, ys, sizes = xs[valid], ys[valid], sizes[valid]
    radii_px, halves = radii_px[valid], halves[valid]
    pos = pattern.positions()                                # (43, 2) unit offsets
    px = pos[None, :, 0] * sizes[:, None]
    py = pos[None, :, 1] * sizes[:, None]

    # orientation from long-baseline pairs on the unrotated pattern
    i0 = img.box_mean_subpixel(xs[:, None] + px, ys[:, None] + py, halves)
    pa, pb = pattern.orientation_pairs[:, 0], pattern.orientation_pairs[:, 1]
    dvec = pos[pa] - pos[pb]
    dvec /= np.linalg.norm(dvec, axis=1, keepdims=True)
    diff = i0[:, pa] - i0[:, pb]
    ox = diff @ dvec[:, 0]
    oy = diff @ dvec[:, 1]
    angle = np.where((ox == 0) & (oy == 0), 0.0, np.arctan2(oy, ox))

    ca, sa = np.cos(angle)[:, None], np.sin(angle)[:, None]
    rx = px * ca - py * sa
    ry = px * sa + py * ca
    smoothed = img.box_mean_subpixel(xs[:, None] + rx, ys[:, None] + ry, halves)

    bits = smoothed[:, pattern.pairs[:, 0]] > smoothed[:, pattern.pairs[:, 1]]
    return np.packbits(bits, axis=1), valid


def describe_binary(img: GrayImage, feature: Feature, pattern: RetinaPattern | None = None) -> BinaryDescriptor:
    """Single-feature binary descriptor; raises if the support leaves the image."""
    if pattern is None:
        pattern = default_pattern()
    packed, valid = describe_binary_batch(img, [feature], pattern)
    if not valid[0]:
        raise SupportOutOfBounds(
            f"support of feature at ({feature.x:.1f}, {feature.y:.1f}) size {feature.size:.1f} leaves the image"
        )
    return BinaryDescriptor(packed[0], nbits=pattern.num_bits)


# ---------------------------------------------------------------------------
# gradient-histogram float descriptor


def _sample_grid(half_width: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(m, 256) local x/y sample offsets covering the square window."""
    step = 2.0 * half_width / _GRID
    coords = (np.arange(_GRID) + 0.5) - _GRID / 2.0
    gx, gy = np.meshgrid(coords, coords)
    lx = gx.ravel()[None, :] * step[:, None]
    ly = gy.ravel()[None, :] * step[:, None]
    return lx, ly


def _gradients(img: GrayImage, sx: np.ndarray, sy: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    gx = img.bilinear(sx + 1.0, sy) - img.bilinear(sx - 1.0, sy)
    gy = img.bilinear(sx, sy + 1.0) - img.bilinear(sx, sy - 1.0)
    return gx, gy


def describe_float_batch(img: GrayImage, features: list[Feature]) -> tuple[np.ndarray, np.ndarray]:
    """Float descriptors (4x4 cells x 8 orientation bins) for in-bounds features.

    Returns (descriptors (m, 128), valid mask (n,)).
    """
    n = len(features)
    if n == 0:
        return np.empty((0, FLOAT_DIMS)), np.zeros(0, dtype=bool)

    xs = np.array([f.x for f in features])
    ys = np.array([f.y for f in features])
    sizes = np.array([f.size for f in features])
    half_w = sizes
    ext = half_w * np.sqrt(2.0) + 2.0   # rotated window corners + gradient probes
    valid = (
        (sizes > 0)
        & (xs - ext >= 0)
        & (ys - ext >= 0)
        & (xs + ext <= img.width - 1)
        & (ys + ext <= img.height - 1)
    )
    if not np.any(valid):
        return np.empty((0, FLOAT_DIMS)), valid
    xs, ys, half_w = xs[valid], ys[valid], half_w[valid]
    m = len(xs)

    lx, ly = _sample_grid(half_w)                  # (m, 256)
    sx = xs[:, None] + lx
    sy = ys[:, None] + ly
    gx, gy = _gradients(img, sx, sy)
    mag = np.hypot(gx, gy)
    r2 = lx * lx + ly * ly
    weight = np.exp(-r2 / (2.0 * (half_w[:, None] * 0.5) ** 2))
    wmag = mag * weight

    # dominant orientation: peak of a 36-bin weighted gradient histogram
    theta = np.arctan2(gy, gx)
    hbin = np.floor((theta + np.pi) / (2.0 * np.pi) * _HIST_BINS).astype(np.int64) % _HIST_BINS
    rows = np.repeat(np.arange(m), lx.shape[1])
    hist = np.bincount(rows * _HIST_BINS + hbin.ravel(), weights=wmag.ravel(), minlength=m * _HIST_BINS)
    hist = hist.reshape(m, _HIST_BINS)
    peak = np.argmax(hist, axis=1)
    angle = np.where(hist.max(axis=1) > 0, (peak + 0.5) / _HIST_BINS * 2.0 * np.pi - np.pi, 0.0)

    # resample the window rotated into the feature frame
    ca, sa = np.cos(angle)[:, None], np.sin(angle)[:, None]
    rx = lx * ca - ly * sa
    ry = lx * sa + ly * ca
    sx = xs[:, None] + rx
    sy = ys[:, None] + ry
    gx, gy = _gradients(img, sx, sy)
    # rotate gradients back into the feature frame
    fgx = gx * ca + gy * sa
    fgy = -gx * sa + gy * ca
    mag = np.hypot(fgx, fgy)
    wmag = mag * weight
    theta = (np.arctan2(fgy, fgx) + np.pi) / (2.0 * np.pi) * _ORI_BINS  # [0, 8)

    # trilinear soft binning over (cell_y, cell_x, orientation)
    cellx = (lx / (2.0 * half_w[:, None]) + 0.5) * _CELLS - 0.5
    celly = (ly / (2.0 * half_w[:, None]) + 0.5) * _CELLS - 0.5
    desc = np.zeros(m * FLOAT_DIMS)
    x0 = np.floor(cellx).astype(np.int64)
    y0 = np.floor(celly).astype(np.int64)
    o0 = np.floor(theta).astype(np.int64)
    fx = cellx - x0
    fy = celly - y0
    fo = theta - o0
    for dy_ in (0, 1):
        wy = np.where(dy_ == 0, 1.0 - fy, fy)
        cy = y0 + dy_
        oky = (cy >= 0) & (cy < _CELLS)
        for dx_ in (0, 1):
            wx = np.where(dx_ == 0, 1.0 - fx, fx)
            cx = x0 + dx_
            okx = oky & (cx >= 0) & (cx < _CELLS)
            for do_ in (0, 1):
                wo = np.where(do_ == 0, 1.0 - fo, fo)
                co = (o0 + do_) % _ORI_BINS
                w = wmag * wy * wx * wo * okx
                idx = (rows.reshape(m, -1) * FLOAT_DIMS + (np.clip(cy, 0, _CELLS - 1) * _CELLS + np.clip(cx, 0, _CELLS - 1)) * _ORI_BINS + co)
                desc += np.bincount(idx.ravel(), weights=w.ravel(), minlength=m * FLOAT_DIMS)
    desc = desc.reshape(m, FLOAT_DIMS)

    norm = np.linalg.norm(desc, axis=1, keepdims=True)
    nz = norm[:, 0] > 0
    desc[nz] /= norm[nz]
    desc[nz] = np.minimum(desc[nz], _CLAMP)
    norm2 = np.linalg.norm(desc[nz], axis=1, keepdims=True)
    desc[nz] /= norm2
    return desc, valid


def describe_float(img: GrayImage, feature: Feature) -> FloatDescriptor:
    descs, valid = describe_float_batch(img, [feature])
    if not valid[0]:
        raise SupportOutOfBounds(
            f"window of feature at ({feature.x:.1f}, {feature.y:.1f}) size {feature.size:.1f} leaves the image"
        )
    return FloatDescriptor(descs[0])


# ---------------------------------------------------------------------------
# stereo concatenation


def describe_stereo_batch(
    left: GrayImage,
    right: GrayImage,
    feats_left: list[Feature],
    feats_right: list[Feature],
    backend: str = "retina",
    pattern: RetinaPattern | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Two-section descriptors, left section first; valid where both views fit."""
    if len(feats_left) != len(feats_right):
        raise LengthMismatch("left/right feature lists differ in length")
    if backend == "retina":
        dl, vl = describe_binary_batch(left, feats_left, pattern)
        dr, vr = describe_binary_batch(right, feats_right, pattern)
    elif backend == "gradhist":
        dl, vl = describe_float_batch(left, feats_left)
        dr, vr = describe_float_batch(right, feats_right)
    else:
        raise ValueError(f"unknown backend {backend!r}")
    valid = vl & vr
    # rows of dl/dr correspond to their own valid masks; align to the joint mask
    li = np.cumsum(vl) - 1
    ri = np.cumsum(vr) - 1
    keep = np.nonzero(valid)[0]
    joined = np.concatenate([dl[li[keep]], dr[ri[keep]]], axis=1)
    return joined, valid


def describe_stereo(
    left: GrayImage,
    right: GrayImage,
    feat_left: Feature,
    feat_right: Feature,
    backend: str = "retina",
    pattern: RetinaPattern | None = None,
):
    joined, valid = describe_stereo_batch(left, right, [feat_left], [feat_right], backend, pattern)
    if not valid[0]:
        raise SupportOutOfBounds("stereo support leaves the image in at least one view")
    if backend == "retina":
        return BinaryDescriptor(joined[0], nbits=joined.shape[1] * 8, sections=2)
    return FloatDescriptor(joined[0], sections=2)


# ---------------------------------------------------------------------------
# distances


def hamming_rows(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Row-wise Hamming distance between equal-shape packed-bit arrays."""
    return _POPCOUNT[np.bitwise_xor(a, b)].sum(axis=-1).astype(np.int64)


def distance(a, b) -> float:
    """Hamming for binary descriptors, L2 for float; kinds/lengths must agree."""
    if isinstance(a, BinaryDescriptor) and isinstance(b, BinaryDescriptor):
        if a.nbits != b.nbits:
            raise LengthMismatch(f"binary lengths differ: {a.nbits} vs {b.nbits}")
        return float(hamming_rows(a.bits, b.bits))
    if isinstance(a, FloatDescriptor) and isinstance(b, FloatDescriptor):
        if a.values.shape != b.values.shape:
            raise LengthMismatch(f"float lengths differ: {a.values.shape} vs {b.values.shape}")
        return float(np.linalg.norm(a.values - b.values))
    raise LengthMismatch(f"cannot compare {type(a).__name__} with {type(b).__name__}")
