"""Correspondence search: ZNCC patch tracking along the epipolar band for
the left-right stage, and brute-force descriptor matching with absolute,
ratio, and mutual-consistency gates for the temporal stage.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import MatchConfig, StereoTrackConfig
from .descriptor import DescriptorSet, hamming_rows, _POPCOUNT
from .detector import Feature
from .errors import LengthMismatch
from .geometry import StereoRig
from .image import GrayImage


@dataclass(frozen=True)
class Match:
    query_index: int
    train_index: int
    dist: float


@dataclass(frozen=True)
class StereoCorrespondence:
    left_feature: Feature
    right_feature: Feature
    disparity: float
    depth: float


def _patch_offsets(radius: int) -> tuple[np.ndarray, np.ndarray]:
    r = np.arange(-radius, radius + 1)
    oy, ox = np.meshgrid(r, r, indexing="ij")
    return ox.ravel(), oy.ravel()


def _normalized_patches(img: np.ndarray, xs: np.ndarray, ys: np.ndarray, radius: int) -> tuple[np.ndarray, np.ndarray]:
    """Zero-mean unit-norm patches at integer centers; flags zero-variance."""
    ox, oy = _patch_offsets(radius)
    patches = img[ys[:, None] + oy[None, :], xs[:, None] + ox[None, :]].astype(np.float32)
    patches -= patches.mean(axis=1, keepdims=True)
    norms = np.linalg.norm(patches, axis=1)
    ok = norms > 1e-6
    patches[ok] /= norms[ok, None]
    return patches, ok


def _zncc_search(
    target: np.ndarray,
    ref_patches: np.ndarray,
    xs: np.ndarray,
    ys: np.ndarray,
    disparities: np.ndarray,
    direction: int,
    row_search: int,
    radius: int,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Best ZNCC along a horizontal band.

    Candidate centers are (xs + direction * d, ys + dy).  Returns per
    reference patch: best subpixel disparity, best row offset, best score.
    """
    h, w = target.shape
    ox, oy = _patch_offsets(radius)
    n = len(xs)
    nd = len(disparities)
    best_score = np.full(n, -np.inf, dtype=np.float32)
    best_d = np.zeros(n, dtype=np.float64)
    best_dy = np.zeros(n, dtype=np.int64)

    cx = xs[:, None] + direction * disparities[None, :]          # (n, nd)
    in_x = (cx - radius >= 0) & (cx + radius < w)
    scores_by_dy = {}
    for dy in range(-row_search, row_search + 1):
        cy = ys + dy
        in_y = (cy - radius >= 0) & (cy + radius < h)
        pxi = np.clip(cx, radius, w - 1 - radius)
        pyi = np.clip(cy, radius, h - 1 - radius)
        cand = target[pyi[:, None, None] + oy[None, None, :], pxi[:, :, None] + ox[None, None, :]].astype(np.float32)
        cand -= cand.mean(axis=2, keepdims=True)
        norms = np.linalg.norm(cand, axis=2)
        good = (norms > 1e-6) & in_x & in_y[:, None]
        norms[norms <= 1e-6] = 1.0
        scores = np.einsum("np,ndp->nd", ref_patches, cand / norms[:, :, None])
        scores[~good] = -np.inf
        scores_by_dy[dy] = scores
        flat_best = scores.max(axis=1)
        di = scores.argmax(axis=1)
        better = flat_best > best_score
        best_score[better] = flat_best[better]
        best_d[better] = disparities[di[better]]
        best_dy[better] = dy

    # parabolic refinement over the disparity axis at the winning row
    refined = best_d.copy()
    for i in range(n):
        if not np.isfinite(best_score[i]):
            continue
        scores = scores_by_dy[int(best_dy[i])][i]
        di = int(np.argmax(scores))
        if 0 < di < nd - 1 and np.isfinite(scores[di - 1]) and np.isfinite(scores[di + 1]):
            c0, c1, c2 = scores[di - 1], scores[di], scores[di + 1]
            denom = c0 - 2.0 * c1 + c2
            if denom < 0:
                delta = 0.5 * (c0 - c2) / denom
                refined[i] = disparities[di] + float(np.clip(delta, -0.5, 0.5))
    return refined, best_dy, best_score


def _refine_disparity_1d(
    left: GrayImage,
    right: GrayImage,
    xs: np.ndarray,
    ys: np.ndarray,
    ry: np.ndarray,
    d0: np.ndarray,
    radius: int,
    iters: int = 3,
) -> np.ndarray:
    """Sub-pixel disparity polish: 1-D Gauss-Newton on the horizontal shift
    aligning the (zero-mean) right patch with the left patch.  Removes the
    pixel-locking bias of the correlation-peak parabola."""
    ox, oy = _patch_offsets(radius)
    lp = left.pixels[ys[:, None] + oy[None, :], xs[:, None] + ox[None, :]].astype(np.float64)
    lp -= lp.mean(axis=1, keepdims=True)
    d = d0.copy()
    for _ in range(iters):
        cx = xs - d
        rx = cx[:, None] + ox[None, :]
        ryy = ry[:, None] + oy[None, :]
        rp = right.bilinear(rx, ryy)
        g = 0.5 * (right.bilinear(rx + 1.0, ryy) - right.bilinear(rx - 1.0, ryy))
        rp -= rp.mean(axis=1, keepdims=True)
        res = lp - rp
        denom = np.sum(g * g, axis=1)
        ok = denom > 1e-9
        step = np.zeros_like(d)
        step[ok] = np.sum(g * res, axis=1)[ok] / denom[ok]
        # right-patch shift +step means disparity -step; cap to stay near the
        # correlation peak
        d -= np.clip(step, -0.5, 0.5)
    # never drift more than a pixel from the integer search result
    return np.clip(d, d0 - 1.0, d0 + 1.0)


def stereo_track(
    left: GrayImage,
    right: GrayImage,
    features: list[Feature],
    rig: StereoRig,
    cfg: StereoTrackConfig,
) -> list[StereoCorrespondence]:
    """Track left features into the right image of a rectified pair.

    Keeps correspondences that clear the ZNCC floor, pass a left-right
    consistency check, and have positive disparity; attaches depth.
    """
    if not features:
        return []
    li = left.pixels
    ri = right.pixels
    radius = cfg.patch_radius
    xs = np.rint([f.x for f in features]).astype(np.int64)
    ys = np.rint([f.y for f in features]).astype(np.int64)
    in_bounds = (
        (xs - radius >= 0)
        & (xs + radius < left.width)
        & (ys - radius >= 0)
        & (ys + radius < left.height)
    )
    disparities = np.arange(0, cfg.d_max + 1, dtype=np.int64)

    ref, textured = _normalized_patches(li, np.clip(xs, radius, left.width - 1 - radius),
                                        np.clip(ys, radius, left.height - 1 - radius), radius)
    usable = in_bounds & textured
    d_sub, dy_best, score = _zncc_search(ri, ref, xs, ys, disparities, -1, cfg.row_search, radius)

    accepted = usable & (score >= cfg.zncc_min) & (d_sub > 0)

    # left-right consistency: search back from the right-image position
    idx = np.nonzero(accepted)[0]
    out: list[StereoCorrespondence] = []
    if len(idx) == 0:
        return out
    rx = np.rint(xs[idx] - d_sub[idx]).astype(np.int64)
    ry = ys[idx] + dy_best[idx]
    rx_ok = (rx - radius >= 0) & (rx + radius < right.width) & (ry - radius >= 0) & (ry + radius < right.height)
    rref, rtex = _normalized_patches(ri, np.clip(rx, radius, right.width - 1 - radius),
                                     np.clip(ry, radius, right.height - 1 - radius), radius)
    back_d, _, back_score = _zncc_search(li, rref, rx, ry, disparities, +1, cfg.row_search, radius)
    consistent = rx_ok & rtex & (np.abs((rx + back_d) - xs[idx]) <= cfg.lr_consistency_tol)

    keep = idx[consistent]
    if len(keep):
        d_sub[keep] = _refine_disparity_1d(
            left, right, xs[keep], ys[keep], ys[keep] + dy_best[keep], d_sub[keep], radius
        )

    fx = rig.intrinsics.fx
    for j, i in enumerate(idx):
        if not consistent[j]:
            continue
        d = float(d_sub[i])
        if d <= 0:
            continue
        depth = fx * rig.baseline / d
        f = features[i]
        left_feat = f.with_depth(depth)
        right_feat = Feature(x=f.x - d, y=f.y + float(dy_best[i]), response=f.response, size=f.size, depth=depth)
        out.append(StereoCorrespondence(left_feat, right_feat, disparity=d, depth=depth))
    return out


def _auto_abs_threshold(descs: DescriptorSet) -> float:
    if descs.kind == "binary":
        return 0.25 * descs.nbits
    return 0.7 * np.sqrt(descs.sections)


def distance_matrix(query: DescriptorSet, train: DescriptorSet) -> np.ndarray:
    if query.kind != train.kind or query.data.shape[1] != train.data.shape[1]:
        raise LengthMismatch("descriptor sets differ in kind or length")
    if query.kind == "binary":
        popcount = getattr(np, "bitwise_count", None)
        out = np.empty((len(query), len(train)), dtype=np.float64)
        for start in range(0, len(query), 256):  # chunked to bound xor memory
            block = np.bitwise_xor(query.data[start : start + 256, None, :], train.data[None, :, :])
            counts = popcount(block) if popcount is not None else _POPCOUNT[block]
            out[start : start + 256] = counts.sum(axis=2, dtype=np.int64)
        return out
    diff = query.data[:, None, :] - train.data[None, :, :]
    return np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))


def match_descriptors(query, train, cfg: MatchConfig = MatchConfig()) -> list[Match]:
    """Brute-force nearest neighbors with absolute, ratio, and mutual gates.

    Ties break toward the lower train index; the mutual gate makes the
    result one-to-one.
    """
    if not isinstance(query, DescriptorSet):
        query = DescriptorSet.from_descriptors(list(query)) if len(query) else None
    if not isinstance(train, DescriptorSet):
        train = DescriptorSet.from_descriptors(list(train)) if len(train) else None
    if query is None or train is None or len(query) == 0 or len(train) == 0:
        return []

    d = distance_matrix(query, train)
    abs_thr = cfg.abs_threshold if cfg.abs_threshold > 0 else _auto_abs_threshold(query)
    ratio_thr = cfg.ratio_binary if query.kind == "binary" else cfg.ratio_float

    nearest = d.argmin(axis=1)
    nearest_dist = d[np.arange(len(d)), nearest]
    if d.shape[1] > 1:
        d2 = d.copy()
        d2[np.arange(len(d)), nearest] = np.inf
        second = d2.min(axis=1)
    else:
        second = np.full(len(d), np.inf)
    reverse = d.argmin(axis=0)   # per train column, best query row

    out: list[Match] = []
    for q in range(len(d)):
        t = int(nearest[q])
        dist = float(nearest_dist[q])
        if dist > abs_thr:
            continue
        if second[q] > 0 and dist / second[q] > ratio_thr:
            continue
        if second[q] == 0 and dist == 0:
            continue  # ambiguous: two identical best candidates
        if int(reverse[t]) != q:
            continue
        out.append(Match(query_index=q, train_index=t, dist=dist))
    return out
