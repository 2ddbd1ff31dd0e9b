"""8-bit grayscale image container with a cached summed-area table.

Box means over the integral image are the O(1) smoothing primitive used by
the binary descriptor; bilinear sampling serves the float descriptor and
the synthetic renderer.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class GrayImage:
    pixels: np.ndarray  # (h, w) uint8, row-major
    _integral: np.ndarray | None = field(default=None, repr=False, compare=False)

    def __post_init__(self) -> None:
        px = np.asarray(self.pixels)
        if px.ndim != 2:
            raise ValueError(f"expected a 2-D intensity array, got shape {px.shape}")
        if px.dtype != np.uint8:
            px = np.clip(np.round(px), 0, 255).astype(np.uint8)
        self.pixels = px

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def integral(self) -> np.ndarray:
        """(h+1, w+1) int64 summed-area table; exact, built on first use."""
        if self._integral is None:
            sat = np.zeros((self.height + 1, self.width + 1), dtype=np.int64)
            np.cumsum(np.cumsum(self.pixels, axis=0, dtype=np.int64), axis=1, out=sat[1:, 1:])
            self._integral = sat
        return self._integral

    def box_mean(self, xs: np.ndarray, ys: np.ndarray, half: np.ndarray) -> np.ndarray:
        """Mean intensity over square boxes centered at integer (xs, ys).

        ``half`` is the integer half-side per box (side = 2*half + 1).  All
        boxes must lie fully inside the image; callers enforce bounds.
        """
        xs = np.asarray(xs, dtype=np.int64)
        ys = np.asarray(ys, dtype=np.int64)
        half = np.asarray(half, dtype=np.int64)
        sat = self.integral
        x0 = xs - half
        x1 = xs + half + 1
        y0 = ys - half
        y1 = ys + half + 1
        total = sat[y1, x1] - sat[y0, x1] - sat[y1, x0] + sat[y0, x0]
        side = 2 * half + 1
        return total / (side * side)

    def box_mean_subpixel(self, xs: np.ndarray, ys: np.ndarray, half: np.ndarray) -> np.ndarray:
        """Box means at fractional centers: bilinear blend of the four
        integer-centered boxes.  Callers keep centers >= half+1 from edges."""
        xs = np.asarray(xs, dtype=np.float64)
        ys = np.asarray(ys, dtype=np.float64)
        x0 = np.floor(xs).astype(np.int64)
        y0 = np.floor(ys).astype(np.int64)
        fx = xs - x0
        fy = ys - y0
        m00 = self.box_mean(x0, y0, half)
        m10 = self.box_mean(x0 + 1, y0, half)
        m01 = self.box_mean(x0, y0 + 1, half)
        m11 = self.box_mean(x0 + 1, y0 + 1, half)
        return (m00 * (1 - fx) + m10 * fx) * (1 - fy) + (m01 * (1 - fx) + m11 * fx) * fy

    def bilinear(self, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
        """Bilinear intensity at float (xs, ys); coordinates clamped to the frame."""
        px = self.pixels
        xs = np.clip(np.asarray(xs, dtype=np.float64), 0.0, self.width - 1.0)
        ys = np.clip(np.asarray(ys, dtype=np.float64), 0.0, self.height - 1.0)
        x0 = np.floor(xs).astype(np.int64)
        y0 = np.floor(ys).astype(np.int64)
        x1 = np.minimum(x0 + 1, self.width - 1)
        y1 = np.minimum(y0 + 1, self.height - 1)
        fx = xs - x0
        fy = ys - y0
        top = px[y0, x0] * (1.0 - fx) + px[y0, x1] * fx
        bot = px[y1, x0] * (1.0 - fx) + px[y1, x1] * fx
        return top * (1.0 - fy) + bot * fy
