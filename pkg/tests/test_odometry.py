import copy
from dataclasses import replace

import numpy as np
import pytest

from stereovo.config import PipelineConfig
from stereovo.errors import InsufficientMatches, TooFewFrames
from stereovo.geometry import PinholeIntrinsics, Pose, StereoRig
from stereovo.image import GrayImage
from stereovo.matching import StereoCorrespondence
from stereovo.odometry import (
    FrameBundle,
    build_bundles,
    chain_trajectory,
    estimate_motion,
    process_frame,
    run_sequence,
)
from stereovo.rng import stream
from stereovo.synthetic import SyntheticSequence, corridor_scene, render, render_with_depth

RIG = StereoRig(PinholeIntrinsics(300.0, 300.0, 160.0, 120.0), 0.54)


def small_cfg() -> PipelineConfig:
    cfg = PipelineConfig()
    cfg.detector.max_features = 500
    cfg.scale.r_min = 4.0
    cfg.scale.r_max = 20.0
    return cfg


def rot_angle_deg(pose: Pose) -> float:
    c = np.clip((np.trace(pose.rotation) - 1.0) / 2.0, -1.0, 1.0)
    return float(np.degrees(np.arccos(c)))


@pytest.fixture(scope="module")
def corridor():
    """6-frame straight corridor, 0.75 m per step, with processed bundles."""
    scene = corridor_scene(n_frames=6, speed=0.75, seed=1, width=320, height=240, rig=RIG)
    cfg = small_cfg()
    bundles = build_bundles(SyntheticSequence(scene), RIG, cfg)
    return scene, cfg, bundles


class TestProcessFrame:
    def test_flat_image_gives_empty_bundle(self):
        img = GrayImage(np.full((120, 160), 90, dtype=np.uint8))
        b = process_frame(img, img, RIG, small_cfg())
        assert b.correspondences == []
        assert len(b.descriptors) == 0

    def test_descriptors_parallel_to_correspondences(self, corridor):
        _, _, bundles = corridor
        for b in bundles:
            assert len(b.descriptors) == len(b.correspondences)
            assert all(c.depth > 0 for c in b.correspondences)

    def test_scale_disabled_keeps_detector_size(self, corridor):
        scene, cfg, _ = corridor
        off = copy.deepcopy(cfg)
        off.scale.enabled = False
        left, right = render(scene, 0)
        b = process_frame(left, right, RIG, off)
        assert len(b.correspondences) > 50
        for c in b.correspondences:
            assert c.left_feature.size == off.detector.default_size

    def test_depths_match_rendered_depth_map(self, corridor):
        scene, cfg, bundles = corridor
        _, _, depth_map = render_with_depth(scene, 0)
        rel = [
            abs(c.depth - depth_map[int(round(c.left_feature.y)), int(round(c.left_feature.x))])
            / depth_map[int(round(c.left_feature.y)), int(round(c.left_feature.x))]
            for c in bundles[0].correspondences
        ]
        assert float(np.median(rel)) < 0.03

    def test_points3d_shape_and_reprojection(self, corridor):
        _, _, bundles = corridor
        b = bundles[0]
        pts = b.points3d(RIG)
        assert pts.shape == (len(b.correspondences), 3)
        k = RIG.intrinsics
        u = k.fx * pts[:, 0] / pts[:, 2] + k.cx
        obs = np.array([c.left_feature.x for c in b.correspondences])
        assert np.allclose(u, obs, atol=1e-9)

    def test_points3d_empty(self):
        b = FrameBundle(0, None, None, [], None)
        assert b.points3d(RIG).shape == (0, 3)


class TestEstimateMotion:
    def test_identity_for_same_bundle(self, corridor):
        _, cfg, bundles = corridor
        est = estimate_motion(bundles[0], bundles[0], RIG, cfg, np.random.default_rng(0))
        assert np.linalg.norm(est.pose.translation) < 1e-9
        assert rot_angle_deg(est.pose) < 1e-6
        assert len(est.inliers) == len(est.matches)
        assert est.mean_reproj_err < 1e-9

    def test_forward_motion_recovered(self, corridor):
        _, cfg, bundles = corridor
        est = estimate_motion(bundles[0], bundles[1], RIG, cfg, np.random.default_rng(0))
        # pose maps prev-frame points into the current frame, so a forward
        # step of the camera moves scene points by -z
        assert np.linalg.norm(est.pose.translation - np.array([0.0, 0.0, -0.75])) < 0.02
        assert rot_angle_deg(est.pose) < 0.05
        assert len(est.inliers) >= 0.7 * len(est.matches)

    def test_insufficient_matches(self):
        img = GrayImage(np.full((120, 160), 90, dtype=np.uint8))
        cfg = small_cfg()
        empty = process_frame(img, img, RIG, cfg)
        with pytest.raises(InsufficientMatches):
            estimate_motion(empty, empty, RIG, cfg)

    def test_injected_outliers_excluded(self, corridor):
        """30% of current-frame observations displaced by 20-60 px must be
        rejected by consensus (>=95% of them) without spoiling the pose."""
        _, cfg, bundles = corridor
        prev, curr = bundles[0], bundles[1]
        rng = stream(7, "outliers")
        n = len(curr.correspondences)
        bad = set(rng.choice(n, size=int(round(0.3 * n)), replace=False).tolist())
        corrs = []
        for i, c in enumerate(curr.correspondences):
            if i in bad:
                dx = float(rng.uniform(20, 60)) * (1 if rng.random() < 0.5 else -1)
                dy = float(rng.uniform(20, 60)) * (1 if rng.random() < 0.5 else -1)
                lf = replace(c.left_feature, x=c.left_feature.x + dx, y=c.left_feature.y + dy)
                rf = replace(c.right_feature, x=c.right_feature.x + dx, y=c.right_feature.y + dy)
                corrs.append(StereoCorrespondence(lf, rf, c.disparity, c.depth))
            else:
                corrs.append(c)
        tampered = FrameBundle(curr.index, None, None, corrs, curr.descriptors)

        est = estimate_motion(prev, tampered, RIG, cfg, np.random.default_rng(0))
        inlier_set = set(est.inliers)
        matched_bad = [j for j, m in enumerate(est.matches) if m.train_index in bad]
        assert len(matched_bad) >= 10
        excluded = sum(j not in inlier_set for j in matched_bad)
        assert excluded >= 0.95 * len(matched_bad)
        assert np.linalg.norm(est.pose.translation - np.array([0.0, 0.0, -0.75])) < 0.05


class _RepeatSource:
    def __init__(self, left, right, n):
        self.left, self.right, self.n = left, right, n

    def __len__(self):
        return self.n

    def frame(self, i):
        return self.left, self.right


class TestChaining:
    def test_straight_line_endpoint(self, corridor):
        scene, cfg, bundles = corridor
        traj, diags = chain_trajectory(bundles, RIG, cfg, seed=0)
        assert len(traj) == len(bundles)
        assert not any(d.fallback for d in diags)
        path_len = 0.75 * (len(bundles) - 1)
        err = np.linalg.norm(traj[-1].translation - scene.gt_poses[-1].translation)
        assert err < 0.005 * path_len

    def test_static_sequence_stays_put(self, corridor):
        scene, cfg, _ = corridor
        left, right = render(scene, 0)
        traj, diags = run_sequence(_RepeatSource(left, right, 4), RIG, cfg, seed=0)
        assert not any(d.fallback for d in diags)
        for p in traj:
            assert np.linalg.norm(p.translation) < 1e-6
            assert rot_angle_deg(p) < 1e-4

    def test_deterministic_given_seed(self, corridor):
        _, cfg, bundles = corridor
        t1, _ = chain_trajectory(bundles, RIG, cfg, seed=3)
        t2, _ = chain_trajectory(bundles, RIG, cfg, seed=3)
        for a, b in zip(t1, t2):
            assert np.array_equal(a.matrix34, b.matrix34)

    def test_too_few_frames(self, corridor):
        _, cfg, bundles = corridor
        with pytest.raises(TooFewFrames):
            chain_trajectory(bundles[:1], RIG, cfg)
        with pytest.raises(TooFewFrames):
            run_sequence(_RepeatSource(None, None, 1), RIG, cfg)

    def test_fallback_uses_constant_velocity(self, corridor):
        _, cfg, bundles = corridor
        img = GrayImage(np.full((240, 320), 90, dtype=np.uint8))
        empty = process_frame(img, img, RIG, cfg, index=2)
        traj, diags = chain_trajectory([bundles[0], bundles[1], empty], RIG, cfg, seed=0)
        assert [d.fallback for d in diags] == [False, True]
        d1 = traj[1].translation - traj[0].translation
        d2 = traj[2].translation - traj[1].translation
        assert np.allclose(d1, d2, atol=1e-3)

    def test_run_sequence_equals_chained_bundles(self, corridor):
        scene, cfg, _ = corridor
        sub = corridor_scene(n_frames=3, speed=0.75, seed=1, width=320, height=240, rig=RIG)
        src = SyntheticSequence(sub)
        t1, _ = run_sequence(src, RIG, cfg, seed=5)
        t2, _ = chain_trajectory(build_bundles(src, RIG, cfg), RIG, cfg, seed=5)
        for a, b in zip(t1, t2):
            assert np.array_equal(a.matrix34, b.matrix34)
