"""The three experiments: multi-step tracking score, multi-step inlier
counting, and repeated visual-odometry translation-error runs.

All experiments share one detection/tracking pass per frame; descriptor
variants differ only in backend, scale flag, and mono/stereo layout, so
comparisons are controlled by construction.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

from .config import PipelineConfig
from .detector import detect
from .errors import InsufficientMatches, LengthMismatch, MissingGroundTruth, NoConsensus, SequenceTooShort
from .geometry import Pose, StereoRig, project
from .matching import match_descriptors, stereo_track
from .odometry import FrameBundle, build_bundles, chain_trajectory, estimate_motion, raw_to_described
from .pattern import default_pattern
from .rng import child_seeds, stream

KITTI_PATH_LENGTHS = [100.0, 200.0, 300.0, 400.0, 500.0, 600.0, 700.0, 800.0]


@dataclass(frozen=True)
class Variant:
    name: str
    backend: str = "retina"       # retina | gradhist
    scale: bool = True
    stereo: bool = False


def variant_config(base: PipelineConfig, v: Variant) -> PipelineConfig:
    cfg = copy.deepcopy(base)
    cfg.backend = v.backend
    cfg.scale.enabled = v.scale
    cfg.stereo_descriptor = v.stereo
    return cfg


class BundleCache:
    """Shared per-frame detection + stereo tracking, per-variant descriptors.

    Images are dropped once described; cached bundles carry only features,
    depths, and descriptors.
    """

    def __init__(self, source, base_cfg: PipelineConfig):
        self.source = source
        self.rig = source.rig
        self.base_cfg = base_cfg
        self.pattern = default_pattern()
        self._raw: dict[int, list] = {}
        self._bundles: dict[tuple[str, int], FrameBundle] = {}
        self._variants: dict[str, PipelineConfig] = {}

    def register(self, v: Variant) -> None:
        self._variants[v.name] = variant_config(self.base_cfg, v)

    def bundle(self, variant: str, i: int) -> FrameBundle:
        key = (variant, i)
        if key not in self._bundles:
            cfg = self._variants[variant]
            left, right = self.source.frame(i)
            if i not in self._raw:
                feats = detect(left, cfg.detector)
                self._raw[i] = stereo_track(left, right, feats, self.rig, cfg.track)
            b = raw_to_described(left, right, self._raw[i], self.rig, cfg, self.pattern, i)
            b.left = None
            b.right = None
            self._bundles[key] = b
        return self._bundles[key]


# ---------------------------------------------------------------------------
# experiment A: multi-step tracking score


@dataclass
class TrackingScoreReport:
    feature_budget: int
    scores: dict[str, int]
    evaluated_pairs: int

    def improvement_pct(self, better: str, baseline: str) -> float:
        return (self.scores[better] - self.scores[baseline]) / self.scores[baseline] * 100.0


def _gt_relative(gt: list[Pose], t: int, t2: int) -> Pose:
    """Maps camera-frame-t coordinates into camera-frame-t2 (gt poses are
    camera-to-world)."""
    return gt[t2].inverse().compose(gt[t])


def count_correct_matches(prev: FrameBundle, curr: FrameBundle, rel: Pose,
                          rig: StereoRig, cfg: PipelineConfig, tol: float) -> tuple[int, int]:
    """(correct, total) matches; a match is correct when the previous 3D
    point, transported by the ground-truth pose, reprojects within tol of
    the matched feature."""
    matches = match_descriptors(prev.descriptors, curr.descriptors, cfg.match)
    if not matches:
        return 0, 0
    pts = prev.points3d(rig)[[m.query_index for m in matches]]
    moved = rel.apply(pts)
    ok_z = moved[:, 2] > 1e-6
    correct = 0
    if np.any(ok_z):
        uv = project(moved[ok_z], rig.intrinsics)
        obs = np.array([[curr.correspondences[m.train_index].left_feature.x,
                         curr.correspondences[m.train_index].left_feature.y]
                        for m, keep in zip(matches, ok_z) if keep])
        err = np.hypot(uv[:, 0] - obs[:, 0], uv[:, 1] - obs[:, 1])
        correct = int(np.sum(err <= tol))
    return correct, len(matches)


def tracking_score(
    source,
    variants: list[Variant],
    base_cfg: PipelineConfig,
    t_stride: int = 10,
    max_step: int = 10,
    correctness_tol: float = 2.0,
    cache: BundleCache | None = None,
) -> TrackingScoreReport:
    """Multi-step feature-tracking contest: one point per correct match,
    inner loop over step 1..max_step, then t advances by t_stride."""
    gt = getattr(source, "gt_poses", None)
    if not gt:
        raise MissingGroundTruth("tracking score needs ground-truth poses")
    if cache is None:
        cache = BundleCache(source, base_cfg)
    for v in variants:
        cache.register(v)
    cfgs = {v.name: variant_config(base_cfg, v) for v in variants}

    scores = {v.name: 0 for v in variants}
    pairs = 0
    n = len(source)
    for t in range(0, n - max_step, t_stride):
        for step in range(1, max_step + 1):
            rel = _gt_relative(gt, t, t + step)
            pairs += 1
            for v in variants:
                prev = cache.bundle(v.name, t)
                curr = cache.bundle(v.name, t + step)
                correct, _ = count_correct_matches(prev, curr, rel, source.rig, cfgs[v.name], correctness_tol)
                scores[v.name] += correct
    return TrackingScoreReport(
        feature_budget=base_cfg.detector.max_features,
        scores=scores,
        evaluated_pairs=pairs,
    )


# ---------------------------------------------------------------------------
# experiment B: multi-step inlier counting


@dataclass
class InlierRecord:
    variant: str
    step: int
    t: int
    inliers: int


@dataclass
class InlierCurveReport:
    steps: list[int]
    means: dict[str, list[float]]
    records: list[InlierRecord] = field(default_factory=list)


def inlier_curve(
    source,
    variants: list[Variant],
    base_cfg: PipelineConfig,
    steps=(1, 2, 3, 4, 5),
    seed: int = 0,
    t_stride: int = 1,
    cache: BundleCache | None = None,
) -> InlierCurveReport:
    """Mean inlier count of motion estimation at each frame step; failed
    estimations count zero inliers."""
    steps = list(steps)
    if len(source) <= max(steps):
        raise SequenceTooShort(f"{len(source)} frames cannot support step {max(steps)}")
    if cache is None:
        cache = BundleCache(source, base_cfg)
    for v in variants:
        cache.register(v)
    cfgs = {v.name: variant_config(base_cfg, v) for v in variants}

    records: list[InlierRecord] = []
    means: dict[str, list[float]] = {v.name: [] for v in variants}
    for v in variants:
        rng = stream(seed, f"inlier-curve-{v.name}")
        for step in steps:
            counts = []
            for t in range(0, len(source) - step, t_stride):
                try:
                    est = estimate_motion(cache.bundle(v.name, t), cache.bundle(v.name, t + step),
                                          source.rig, cfgs[v.name], rng)
                    k = len(est.inliers)
                except (InsufficientMatches, NoConsensus):
                    k = 0
                counts.append(k)
                records.append(InlierRecord(v.name, step, t, k))
            means[v.name].append(float(np.mean(counts)))
    return InlierCurveReport(steps=steps, means=means, records=records)


# ---------------------------------------------------------------------------
# experiment C: KITTI translation error over repeated runs


def translation_error(traj: list[Pose], gt: list[Pose], lengths=None) -> float:
    """Mean KITTI-style translation error, percent.

    For each start frame and each realizable path length, compares the
    relative translation over that stretch.  Falls back to fractions of
    the total path when the sequence is shorter than every standard length.
    """
    if len(traj) != len(gt):
        raise LengthMismatch(f"trajectory lengths differ: {len(traj)} vs {len(gt)}")
    if len(gt) < 2:
        raise SequenceTooShort("need at least two poses")
    step_norms = [np.linalg.norm(gt[i + 1].translation - gt[i].translation) for i in range(len(gt) - 1)]
    dist = np.concatenate([[0.0], np.cumsum(step_norms)])
    total = dist[-1]
    if total <= 1e-12:
        raise SequenceTooShort("ground-truth path has zero length")

    lengths = list(lengths) if lengths is not None else list(KITTI_PATH_LENGTHS)
    realizable = [L for L in lengths if L <= total]
    if not realizable:
        realizable = [total * k / 8.0 for k in range(1, 9)]

    errors = []
    for i in range(len(gt) - 1):
        for L in realizable:
            j = int(np.searchsorted(dist, dist[i] + L))
            if j >= len(gt):
                continue
            dt_est = traj[i].inverse().compose(traj[j]).translation
            dt_gt = gt[i].inverse().compose(gt[j]).translation
            errors.append(np.linalg.norm(dt_est - dt_gt) / L)
    if not errors:
        raise SequenceTooShort("no start frame admits any requested path length")
    return float(np.mean(errors)) * 100.0


@dataclass
class TranslationErrorReport:
    per_run: list[float]
    seeds: list[int]

    @property
    def best(self) -> float:
        return min(self.per_run)

    @property
    def mean(self) -> float:
        return float(np.mean(self.per_run))

    @property
    def worst(self) -> float:
        return max(self.per_run)


def repeated_vo_experiment(
    source,
    cfg: PipelineConfig,
    runs: int = 20,
    base_seed: int = 0,
    lengths=None,
    bundles: list[FrameBundle] | None = None,
) -> TranslationErrorReport:
    """Run the pipeline with distinct seeds; report per-run errors.

    Detection and description are deterministic, so frame bundles are built
    once (or supplied) and only the seeded estimation stage is repeated.
    """
    gt = getattr(source, "gt_poses", None)
    if not gt:
        raise MissingGroundTruth("translation-error experiment needs ground-truth poses")
    if bundles is None:
        bundles = build_bundles(source, source.rig, cfg)
    seeds = child_seeds(base_seed, "repeat-vo", runs)
    per_run = []
    for s in seeds:
        traj, _ = chain_trajectory(bundles, source.rig, cfg, seed=s)
        per_run.append(translation_error(traj, gt, lengths=lengths))
    return TranslationErrorReport(per_run=per_run, seeds=seeds)
