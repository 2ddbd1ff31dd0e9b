"""Harris corner detection with non-maximum suppression and sub-pixel
refinement.

Output features carry the three properties downstream stages rely on:
sub-pixel location, detector response, and a support-radius ``size`` that
scale normalization later overwrites.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy import ndimage

from .config import DetectorConfig
from .errors import ImageTooSmall
from .image import GrayImage

_SOBEL_X = np.array([[-1, 0, 1], [-2, 0, 2], [-1, 0, 1]], dtype=np.float64) / 8.0
_SOBEL_Y = _SOBEL_X.T


@dataclass(frozen=True)
class Feature:
    x: float
    y: float
    response: float
    size: float
    depth: float | None = None

    def with_depth(self, depth: float) -> "Feature":
        return replace(self, depth=depth)

    def with_size(self, size: float) -> "Feature":
        return replace(self, size=size)


def harris_response(img: GrayImage, k: float = 0.04, window_sigma: float = 1.0) -> np.ndarray:
    """Harris corner response map, float64, same shape as the image."""
    gray = img.pixels.astype(np.float64) / 255.0
    ix = ndimage.convolve(gray, _SOBEL_X, mode="nearest")
    iy = ndimage.convolve(gray, _SOBEL_Y, mode="nearest")
    sxx = ndimage.gaussian_filter(ix * ix, window_sigma, mode="nearest")
    syy = ndimage.gaussian_filter(iy * iy, window_sigma, mode="nearest")
    sxy = ndimage.gaussian_filter(ix * iy, window_sigma, mode="nearest")
    det = sxx * syy - sxy * sxy
    trace = sxx + syy
    return det - k * trace * trace


def _subpixel_offset(patch: np.ndarray) -> tuple[float, float]:
    """Quadratic 1-D fits through the 3x3 response neighborhood; offsets
    clamped to half a pixel so refinement never leaves the winning cell."""
    c = patch[1, 1]
    dx_num = patch[1, 0] - patch[1, 2]
    dx_den = patch[1, 0] - 2.0 * c + patch[1, 2]
    dy_num = patch[0, 1] - patch[2, 1]
    dy_den = patch[0, 1] - 2.0 * c + patch[2, 1]
    dx = 0.5 * dx_num / dx_den if dx_den < 0 else 0.0
    dy = 0.5 * dy_num / dy_den if dy_den < 0 else 0.0
    return float(np.clip(dx, -0.5, 0.5)), float(np.clip(dy, -0.5, 0.5))


def detect(img: GrayImage, cfg: DetectorConfig) -> list[Feature]:
    """Detect corners, strongest first.

    Ties in response break by row-major position; no two results lie within
    ``nms_radius`` (Euclidean); all results keep ``border`` pixels of margin
    (``border_left`` pixels on the left edge when that is larger).
    """
    left = max(cfg.border, cfg.border_left)
    if img.width < left + cfg.border or img.height < 2 * cfg.border:
        raise ImageTooSmall(f"{img.width}x{img.height} image cannot hold a {cfg.border} px border")

    resp = harris_response(img, k=cfg.harris_k, window_sigma=cfg.window_sigma)

    interior = np.zeros_like(resp, dtype=bool)
    interior[cfg.border : img.height - cfg.border, left : img.width - cfg.border] = True

    # local maxima within the NMS window, then greedy radius suppression
    win = 2 * cfg.nms_radius + 1
    local_max = resp >= ndimage.maximum_filter(resp, size=win, mode="nearest")
    candidates = local_max & interior & (resp > cfg.response_min)
    ys, xs = np.nonzero(candidates)
    if len(xs) == 0:
        return []
    scores = resp[ys, xs]

    order = np.lexsort((xs, ys, -scores))  # response desc, ties row-major
    xs, ys, scores = xs[order], ys[order], scores[order]

    kept_x = np.empty(cfg.max_features, dtype=np.int64)
    kept_y = np.empty(cfg.max_features, dtype=np.int64)
    features: list[Feature] = []
    r2 = float(cfg.nms_radius) ** 2
    for x, y, s in zip(xs, ys, scores):
        n = len(features)
        if n:
            dx = kept_x[:n] - x
            dy = kept_y[:n] - y
            if np.any(dx * dx + dy * dy <= r2):
                continue
        kept_x[n] = x
        kept_y[n] = y
        off_x, off_y = _subpixel_offset(resp[y - 1 : y + 2, x - 1 : x + 2])
        features.append(Feature(x=x + off_x, y=y + off_y, response=float(s), size=cfg.default_size))
        if len(features) >= cfg.max_features:
            break
    return features


def threshold_features(features: list[Feature], response_min: float) -> list[Feature]:
    """Subset with response >= response_min, input order preserved."""
    return [f for f in features if f.response >= response_min]
