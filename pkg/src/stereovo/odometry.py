"""Frame pipeline and robust motion estimation.

Per frame: detect on the left image, track into the right, triangulate,
normalize sizes from depth when enabled, then describe (mono-left or
two-section stereo).  Between frames: brute-force descriptor matching,
seeded RANSAC over P3P hypotheses scored by left+right reprojection, and
Gauss-Newton refinement on the inlier set.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import cv2
import numpy as np

from .config import PipelineConfig
from .descriptor import DescriptorSet, describe_binary_batch, describe_float_batch, describe_stereo_batch, normalize_scale
from .detector import detect
from .errors import InsufficientMatches, NoConsensus, TooFewFrames
from .geometry import Pose, StereoRig, backproject, se3_exp
from .image import GrayImage
from .matching import StereoCorrespondence, match_descriptors, stereo_track
from .pattern import RetinaPattern, default_pattern
from .rng import stream


@dataclass
class FrameBundle:
    index: int
    left: GrayImage
    right: GrayImage
    correspondences: list[StereoCorrespondence]
    descriptors: DescriptorSet

    def points3d(self, rig: StereoRig) -> np.ndarray:
        """(n, 3) triangulated camera-frame points, one per correspondence."""
        if not self.correspondences:
            return np.empty((0, 3))
        u = np.array([c.left_feature.x for c in self.correspondences])
        v = np.array([c.left_feature.y for c in self.correspondences])
        z = np.array([c.depth for c in self.correspondences])
        return backproject(u, v, z, rig.intrinsics)


@dataclass
class MotionEstimate:
    pose: Pose                 # maps prev-frame points into the current frame
    inliers: list[int]         # indices into the match list
    mean_reproj_err: float
    matches: list = field(default_factory=list)


def process_frame(
    left: GrayImage,
    right: GrayImage,
    rig: StereoRig,
    cfg: PipelineConfig,
    pattern: RetinaPattern | None = None,
    index: int = 0,
) -> FrameBundle:
    """Detect, stereo-track, triangulate, normalize, describe.

    Features that fail tracking or whose descriptor support leaves either
    image are dropped; the bundle's descriptor rows stay parallel to its
    correspondences.
    """
    if pattern is None and cfg.backend == "retina":
        pattern = default_pattern()
    features = detect(left, cfg.detector)
    corrs = stereo_track(left, right, features, rig, cfg.track)
    corrs = raw_to_described(left, right, corrs, rig, cfg, pattern, index)
    return corrs


def raw_to_described(
    left: GrayImage,
    right: GrayImage,
    corrs: list[StereoCorrespondence],
    rig: StereoRig,
    cfg: PipelineConfig,
    pattern: RetinaPattern | None,
    index: int,
) -> FrameBundle:
    """Descriptor stage only; lets callers reuse detection/tracking output
    across descriptor variants."""
    left_feats = normalize_scale([c.left_feature for c in corrs], rig, cfg.scale)
    right_feats = [c.right_feature.with_size(f.size) for c, f in zip(corrs, left_feats)]

    if cfg.stereo_descriptor:
        data, valid = describe_stereo_batch(left, right, left_feats, right_feats, cfg.backend, pattern)
        sections = 2
    elif cfg.backend == "retina":
        data, valid = describe_binary_batch(left, left_feats, pattern)
        sections = 1
    elif cfg.backend == "gradhist":
        data, valid = describe_float_batch(left, left_feats)
        sections = 1
    else:
        raise ValueError(f"unknown backend {cfg.backend!r}")

    kind = "binary" if cfg.backend == "retina" else "float"
    kept = [
        StereoCorrespondence(lf, rf, c.disparity, c.depth)
        for c, lf, rf, ok in zip(corrs, left_feats, right_feats, valid)
        if ok
    ]
    return FrameBundle(index=index, left=left, right=right, correspondences=kept,
                       descriptors=DescriptorSet(kind, data, sections))


def _reprojection_errors(pose: Pose, pts_prev: np.ndarray, obs_left: np.ndarray,
                         obs_right_u: np.ndarray, rig: StereoRig) -> np.ndarray:
    """Per-point max of left and right reprojection error; inf behind the
    camera.  A rectified observation is (u_left, v_left, u_right): the right
    camera constrains only the horizontal coordinate."""
    k = rig.intrinsics
    pc = pose.apply(pts_prev)
    z = pc[:, 2]
    err = np.full(len(pc), np.inf)
    front = z > 1e-6
    if np.any(front):
        ul = k.fx * pc[front, 0] / z[front] + k.cx
        vl = k.fy * pc[front, 1] / z[front] + k.cy
        ur = k.fx * (pc[front, 0] - rig.baseline) / z[front] + k.cx
        el = np.hypot(ul - obs_left[front, 0], vl - obs_left[front, 1])
        er = np.abs(ur - obs_right_u[front])
        err[front] = np.maximum(el, er)
    return err


def _solve_p3p(pts3d: np.ndarray, px: np.ndarray, rig: StereoRig) -> list[Pose]:
    k = rig.intrinsics.matrix
    ok, rvecs, tvecs = cv2.solveP3P(
        pts3d.astype(np.float64).reshape(-1, 1, 3),
        px.astype(np.float64).reshape(-1, 1, 2),
        k, None, flags=cv2.SOLVEPNP_P3P,
    )
    poses = []
    for i in range(ok):
        r, _ = cv2.Rodrigues(rvecs[i])
        poses.append(Pose(r, tvecs[i].ravel()))
    return poses


def _gauss_newton_refine(pose: Pose, pts_prev: np.ndarray, obs_left: np.ndarray,
                         obs_right_u: np.ndarray, rig: StereoRig, iters: int, tol: float) -> Pose:
    """Minimize summed squared (u_left, v_left, u_right) reprojection error;
    twist update applied multiplicatively on the left."""
    k = rig.intrinsics
    for _ in range(iters):
        pc = pose.apply(pts_prev)
        z = pc[:, 2]
        good = z > 1e-6
        if not np.any(good):
            break
        p = pc[good]
        zl = p[:, 2]
        inv_z = 1.0 / zl
        ul = k.fx * p[:, 0] * inv_z + k.cx
        vl = k.fy * p[:, 1] * inv_z + k.cy
        ur = k.fx * (p[:, 0] - rig.baseline) * inv_z + k.cx

        res = np.concatenate([
            obs_left[good, 0] - ul,
            obs_left[good, 1] - vl,
            obs_right_u[good] - ur,
        ])

        n = len(p)
        # d(projection)/d(camera point)
        j_pt = np.zeros((3, n, 3))
        j_pt[0, :, 0] = k.fx * inv_z
        j_pt[0, :, 2] = -k.fx * p[:, 0] * inv_z**2
        j_pt[1, :, 1] = k.fy * inv_z
        j_pt[1, :, 2] = -k.fy * p[:, 1] * inv_z**2
        j_pt[2, :, 0] = k.fx * inv_z
        j_pt[2, :, 2] = -k.fx * (p[:, 0] - rig.baseline) * inv_z**2

        # d(camera point)/d(twist) with left-multiplied update: [I | -[p]x]
        j_tw = np.zeros((n, 3, 6))
        j_tw[:, :, :3] = np.eye(3)
        j_tw[:, 0, 4] = p[:, 2]
        j_tw[:, 0, 5] = -p[:, 1]
        j_tw[:, 1, 3] = -p[:, 2]
        j_tw[:, 1, 5] = p[:, 0]
        j_tw[:, 2, 3] = p[:, 1]
        j_tw[:, 2, 4] = -p[:, 0]

        jac = np.einsum("rnk,nkt->rnt", j_pt, j_tw).reshape(3 * n, 6)
        # residual = obs - proj, so J here is d(res)/d(twist) = -d(proj)/d(twist)
        jac = -jac
        jtj = jac.T @ jac
        jtr = jac.T @ res
        try:
            delta = np.linalg.solve(jtj, -jtr)
        except np.linalg.LinAlgError:
            break
        pose = se3_exp(delta).compose(pose)
        if np.linalg.norm(delta) < tol:
            break
    return pose.orthonormalized()


def estimate_motion(
    prev: FrameBundle,
    curr: FrameBundle,
    rig: StereoRig,
    cfg: PipelineConfig,
    rng: np.random.Generator | None = None,
) -> MotionEstimate:
    """Relative pose of the current frame from temporal descriptor matches.

    An inlier must reproject into both current images within reproj_tol.
    Raises InsufficientMatches / NoConsensus per the module contract.
    """
    if rng is None:
        rng = np.random.default_rng(0)
    rcfg = cfg.ransac
    matches = match_descriptors(prev.descriptors, curr.descriptors, cfg.match)
    if len(matches) < max(3, rcfg.min_inliers):
        raise InsufficientMatches(f"only {len(matches)} matches, need {max(3, rcfg.min_inliers)}")

    pts_prev = prev.points3d(rig)[[m.query_index for m in matches]]
    obs_left = np.array([[curr.correspondences[m.train_index].left_feature.x,
                          curr.correspondences[m.train_index].left_feature.y] for m in matches])
    obs_right = np.array([curr.correspondences[m.train_index].right_feature.x for m in matches])

    n = len(matches)
    best_count = 0
    best_pose: Pose | None = None
    needed = rcfg.max_iters
    it = 0
    while it < min(needed, rcfg.max_iters):
        it += 1
        sample = rng.choice(n, size=3, replace=False)
        tri = pts_prev[sample]
        # collinear 3D sample: degenerate for P3P, draw again
        if np.linalg.norm(np.cross(tri[1] - tri[0], tri[2] - tri[0])) < 1e-9:
            continue
        for pose in _solve_p3p(tri, obs_left[sample], rig):
            err = _reprojection_errors(pose, pts_prev, obs_left, obs_right, rig)
            count = int(np.sum(err <= rcfg.reproj_tol))
            if count > best_count:
                best_count = count
                best_pose = pose
                w = count / n
                if w > 0:
                    denom = np.log(max(1.0 - w**3, 1e-12))
                    needed = int(np.ceil(np.log(1.0 - rcfg.confidence) / denom)) if denom < 0 else rcfg.max_iters

    if best_pose is None or best_count < rcfg.min_inliers:
        raise NoConsensus(f"best consensus {best_count} < min_inliers {rcfg.min_inliers}")

    err = _reprojection_errors(best_pose, pts_prev, obs_left, obs_right, rig)
    inlier_mask = err <= rcfg.reproj_tol
    refined = _gauss_newton_refine(best_pose, pts_prev[inlier_mask], obs_left[inlier_mask],
                                   obs_right[inlier_mask], rig, rcfg.gn_iters, rcfg.gn_tol)
    err = _reprojection_errors(refined, pts_prev, obs_left, obs_right, rig)
    inlier_mask = err <= rcfg.reproj_tol
    if int(inlier_mask.sum()) < rcfg.min_inliers:
        raise NoConsensus("inlier set collapsed after refinement")
    inliers = np.nonzero(inlier_mask)[0]
    return MotionEstimate(
        pose=refined,
        inliers=[int(i) for i in inliers],
        mean_reproj_err=float(err[inlier_mask].mean()),
        matches=matches,
    )


@dataclass
class FrameDiagnostics:
    frame: int
    matches: int
    inliers: int
    mean_reproj_err: float
    runtime_ms: float
    fallback: bool


def build_bundles(
    source,
    rig: StereoRig,
    cfg: PipelineConfig,
    pattern: RetinaPattern | None = None,
) -> list[FrameBundle]:
    """Process every frame of a source; image references are dropped so a
    long sequence's bundles stay small."""
    if pattern is None and cfg.backend == "retina":
        pattern = default_pattern()
    bundles = []
    for i in range(len(source)):
        left, right = source.frame(i)
        b = process_frame(left, right, rig, cfg, pattern, index=i)
        b.left = None
        b.right = None
        bundles.append(b)
    return bundles


def chain_trajectory(
    bundles: list[FrameBundle],
    rig: StereoRig,
    cfg: PipelineConfig,
    seed: int = 0,
) -> tuple[list[Pose], list[FrameDiagnostics]]:
    """Chain frame-to-frame motion into absolute camera-to-world poses.

    Estimation failures fall back to constant velocity and are flagged.
    """
    if len(bundles) < 2:
        raise TooFewFrames(f"need at least 2 frames, got {len(bundles)}")
    rng = stream(seed, "ransac")
    trajectory = [Pose.identity()]
    diagnostics: list[FrameDiagnostics] = []
    last_rel = Pose.identity()
    for prev, curr in zip(bundles, bundles[1:]):
        t0 = time.perf_counter()
        fallback = False
        n_matches = 0
        n_inliers = 0
        err = float("nan")
        try:
            est = estimate_motion(prev, curr, rig, cfg, rng)
            last_rel = est.pose
            n_matches = len(est.matches)
            n_inliers = len(est.inliers)
            err = est.mean_reproj_err
        except (InsufficientMatches, NoConsensus):
            fallback = True  # constant-velocity: reuse the last relative pose
        trajectory.append((trajectory[-1].compose(last_rel.inverse())).orthonormalized())
        diagnostics.append(FrameDiagnostics(
            frame=curr.index, matches=n_matches, inliers=n_inliers, mean_reproj_err=err,
            runtime_ms=(time.perf_counter() - t0) * 1e3, fallback=fallback,
        ))
    return trajectory, diagnostics


def run_sequence(
    source,
    rig: StereoRig,
    cfg: PipelineConfig,
    seed: int = 0,
    pattern: RetinaPattern | None = None,
) -> tuple[list[Pose], list[FrameDiagnostics]]:
    """Full pipeline over a frame source: bundles, then pose chaining."""
    n = len(source)
    if n < 2:
        raise TooFewFrames(f"need at least 2 frames, got {n}")
    return chain_trajectory(build_bundles(source, rig, cfg, pattern), rig, cfg, seed)
