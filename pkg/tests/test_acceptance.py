"""End-to-end acceptance gate.

Everything here runs on synthetic data (no external datasets are assumed):
descriptor-level claims use fronto-parallel plane renders, the experiment
directions use a 100-frame textured corridor with forward motion.  Heavy
artifacts (the corridor bundles per descriptor variant) are shared across
tests through session fixtures.
"""

import time
from dataclasses import replace

import numpy as np
import pytest

from stereovo.cli import EXIT_OK, main
from stereovo.config import DetectorConfig, PipelineConfig, ScaleConfig, StereoTrackConfig
from stereovo.descriptor import describe_binary_batch, describe_stereo_batch, normalize_scale
from stereovo.detector import Feature, detect
from stereovo.evaluation import (
    BundleCache,
    Variant,
    inlier_curve,
    repeated_vo_experiment,
    tracking_score,
    variant_config,
)
from stereovo.geometry import depth_to_radius, project_stereo, triangulate
from stereovo.matching import StereoCorrespondence, stereo_track
from stereovo.odometry import FrameBundle, chain_trajectory, estimate_motion
from stereovo.pattern import default_pattern
from stereovo.rng import stream
from stereovo.synthetic import (
    SyntheticSequence,
    corridor_scene,
    facing_plane_scene,
    render,
    save_scene,
)

pytestmark = pytest.mark.acceptance


def eval_cfg(budget: int) -> PipelineConfig:
    cfg = PipelineConfig()
    cfg.detector.max_features = budget
    # keep full descriptor support inside both views: the widest support at
    # r_max = 20 spans 72 px, and the right-view footprint sits up to
    # track.d_max = 64 px further left, hence the asymmetric left margin.
    cfg.detector.border = 74
    cfg.detector.border_left = 138
    cfg.scale.r_min = 4.0
    cfg.scale.r_max = 20.0
    return cfg


def hamming(a: np.ndarray, b: np.ndarray) -> int:
    return int(np.bitwise_count(np.bitwise_xor(a, b)).sum())


def valid_rows(valid: np.ndarray) -> np.ndarray:
    """Map feature index -> row in the packed descriptor array."""
    return np.cumsum(valid) - 1


# ---------------------------------------------------------------------------
# shared corridor sequence + per-variant bundle cache (budget 1350)

SN_RETINA = Variant("sn-retina")
STD_RETINA = Variant("std-retina", scale=False)
SN_GRADHIST = Variant("sn-gradhist", backend="gradhist")
STD_GRADHIST = Variant("std-gradhist", backend="gradhist", scale=False)
SN_STEREO = Variant("sn-stereo", stereo=True)


@pytest.fixture(scope="session")
def corridor100():
    scene = corridor_scene(n_frames=100, speed=0.5, seed=7)
    return SyntheticSequence(scene)


@pytest.fixture(scope="session")
def cache1350(corridor100):
    return BundleCache(corridor100, eval_cfg(1350))


@pytest.fixture(scope="session")
def tracking_1350(corridor100, cache1350):
    t0 = time.perf_counter()
    report = tracking_score(
        corridor100,
        [SN_RETINA, STD_RETINA, SN_GRADHIST, STD_GRADHIST],
        eval_cfg(1350),
        t_stride=10,
        max_step=10,
        cache=cache1350,
    )
    return report, time.perf_counter() - t0


class TestGeometryOracle:
    """Criterion 1: projection/triangulation round-trip and radius law."""

    def test_roundtrip_and_radius(self, rig700):
        t0 = time.perf_counter()
        rng = stream(42, "acceptance-geometry")
        n = 10_000
        z = rng.uniform(1.0, 200.0, size=n)
        x = rng.uniform(-0.4, 0.4, size=n) * z
        y = rng.uniform(-0.3, 0.3, size=n) * z
        pts = np.stack([x, y, z], axis=1)
        left, right = project_stereo(pts, rig700)
        worst = 0.0
        for i in range(n):
            back = triangulate(left[i], right[i], rig700, epipolar_tol=1e-9)
            worst = max(worst, float(np.max(np.abs(back - pts[i]))))
        assert worst < 1e-6

        cfg = ScaleConfig(metric_radius=0.5, r_min=4.0, r_max=32.0)
        depths = np.sort(rng.uniform(0.5, 400.0, size=10_000))
        radii = depth_to_radius(depths, rig700, cfg)
        assert np.all(np.diff(radii) <= 1e-12)          # monotone non-increasing
        assert radii.min() >= cfg.r_min and radii.max() <= cfg.r_max
        unclamped = (radii > cfg.r_min) & (radii < cfg.r_max)
        expected = rig700.intrinsics.fx * cfg.metric_radius / depths[unclamped]
        assert np.allclose(radii[unclamped], expected)
        assert time.perf_counter() - t0 < 5.0


class TestScaleInvariance:
    """Criterion 2: one scene point seen at depths 2:1; the depth-normalized
    retina descriptor barely changes while the fixed-size one degrades."""

    def test_500_seeded_trials(self):
        t0 = time.perf_counter()
        pattern = default_pattern()
        z_far, z_near = 24.0, 12.0
        scale_cfg = ScaleConfig(metric_radius=0.4, r_min=1.0, r_max=100.0)
        sn_dist, fixed_dist = [], []
        seed = 0
        while len(sn_dist) < 500 and seed < 80:
            scene = facing_plane_scene(depths=[z_far, z_near], seed=100 + seed, cells=(64, 16, 4))
            seed += 1
            far, _ = render(scene, 0)
            near, _ = render(scene, 1)
            k = scene.rig.intrinsics
            corners = detect(far, DetectorConfig(border=20, max_features=200))
            far_feats, near_feats = [], []
            for f in corners:
                xn = (f.x - k.cx) * 2 + k.cx       # planar point, depth halves
                yn = (f.y - k.cy) * 2 + k.cy
                if abs(xn - k.cx) > 110 or abs(yn - k.cy) > 110:
                    continue
                far_feats.append(replace(f, size=7.0, depth=z_far))
                near_feats.append(Feature(x=xn, y=yn, response=f.response, size=7.0, depth=z_near))
            if not far_feats:
                continue
            sn_far = normalize_scale(far_feats, scene.rig, scale_cfg)
            sn_near = normalize_scale(near_feats, scene.rig, scale_cfg)
            sets = [
                describe_binary_batch(far, sn_far, pattern),
                describe_binary_batch(near, sn_near, pattern),
                describe_binary_batch(far, far_feats, pattern),
                describe_binary_batch(near, near_feats, pattern),
            ]
            rows = [valid_rows(v) for _, v in sets]
            for i in range(len(far_feats)):
                if not all(v[i] for _, v in sets):
                    continue
                sn_dist.append(hamming(sets[0][0][rows[0][i]], sets[1][0][rows[1][i]]))
                fixed_dist.append(hamming(sets[2][0][rows[2][i]], sets[3][0][rows[3][i]]))

        sn_dist = np.array(sn_dist[:500])
        fixed_dist = np.array(fixed_dist[:500])
        assert len(sn_dist) == 500
        success = (sn_dist <= 0.05 * 512) & (sn_dist <= fixed_dist)
        assert success.mean() >= 0.95
        assert time.perf_counter() - t0 < 60.0


class TestStereoDriftRejection:
    """Criterion 3: tracking drift of 1 px makes the two-view descriptor
    strictly more distant than the true correspondence, and a fixed relative
    absolute gate rejects more drifted impostors than the mono descriptor."""

    # the matcher's default absolute gate (25% of bits) never fires on these
    # clean renders; 2% of bits is where the gate discriminates true (~1.8%)
    # from drifted (~8.4%) distances
    GATE_FRACTION = 0.02

    def test_500_seeded_trials(self):
        t0 = time.perf_counter()
        pattern = default_pattern()
        track_cfg = StereoTrackConfig()
        offsets = {0: (1.0, 0.0), 1: (-1.0, 0.0), 2: (0.0, 1.0), 3: (0.0, -1.0)}
        wins = total = 0
        imp_stereo, imp_mono = [], []
        seed = 0
        while total < 500 and seed < 40:
            scene = corridor_scene(n_frames=2, speed=0.0, seed=300 + seed,
                                   width=384, height=288, noise_sigma=3.0)
            seed += 1
            l0, r0 = render(scene, 0)
            l1, r1 = render(scene, 1)      # same viewpoint, fresh pixel noise
            corners = detect(l0, DetectorConfig(border=30, max_features=150))
            corrs = stereo_track(l0, r0, corners, scene.rig, track_cfg)
            if not corrs:
                continue
            rng = stream(seed, "drift-direction")
            true_l = [c.left_feature.with_size(7.0) for c in corrs]
            true_r = [c.right_feature.with_size(7.0) for c in corrs]
            dirs = rng.integers(0, 4, size=len(corrs))
            drifted = [
                Feature(x=f.x + offsets[int(d)][0], y=f.y + offsets[int(d)][1],
                        response=1.0, size=7.0, depth=f.depth)
                for f, d in zip(true_l, dirs)
            ]
            # the impostor re-measures its own disparity at the drifted spot
            re_tracked = stereo_track(l1, r1, drifted, scene.rig, track_cfg)
            by_pos = {(c.left_feature.x, c.left_feature.y): c for c in re_tracked}
            pairs = [(i, by_pos[(f.x, f.y)]) for i, f in enumerate(drifted) if (f.x, f.y) in by_pos]
            if not pairs:
                continue
            drift_l = [c.left_feature.with_size(7.0) for _, c in pairs]
            drift_r = [c.right_feature.with_size(7.0) for _, c in pairs]

            q, vq = describe_stereo_batch(l0, r0, true_l, true_r, "retina", pattern)
            t, vt = describe_stereo_batch(l1, r1, true_l, true_r, "retina", pattern)
            d, vd = describe_stereo_batch(l1, r1, drift_l, drift_r, "retina", pattern)
            qm, vqm = describe_binary_batch(l0, true_l, pattern)
            dm, vdm = describe_binary_batch(l1, drift_l, pattern)
            rq, rt, rqm = valid_rows(vq), valid_rows(vt), valid_rows(vqm)
            rd, rdm = valid_rows(vd), valid_rows(vdm)
            for j, (i, _) in enumerate(pairs):
                if not (vq[i] and vt[i] and vqm[i] and vd[j] and vdm[j]):
                    continue
                total += 1
                d_true = hamming(q[rq[i]], t[rt[i]])
                d_imp = hamming(q[rq[i]], d[rd[j]])
                if d_true < d_imp:
                    wins += 1
                imp_stereo.append(d_imp)
                imp_mono.append(hamming(qm[rqm[i]], dm[rdm[j]]))
                if total >= 500:
                    break

        assert total == 500
        assert wins / total >= 0.90
        stereo_rejected = np.mean(np.array(imp_stereo) > self.GATE_FRACTION * 1024)
        mono_rejected = np.mean(np.array(imp_mono) > self.GATE_FRACTION * 512)
        assert stereo_rejected > mono_rejected
        assert time.perf_counter() - t0 < 120.0


class TestTrackingImprovement:
    """Criterion 4: scale normalization lifts the multi-step tracking score
    for both backends at the 1350-feature budget."""

    def test_direction_and_margins(self, tracking_1350):
        report, elapsed = tracking_1350
        assert report.improvement_pct("sn-retina", "std-retina") >= 10.0
        assert report.improvement_pct("sn-gradhist", "std-gradhist") >= 3.0
        assert elapsed < 15 * 60


class TestBudgetTrend:
    """Criterion 5: the retina improvement does not shrink as the feature
    budget grows."""

    def test_non_decreasing_over_budgets(self, corridor100, tracking_1350):
        t0 = time.perf_counter()
        improvements = {1350: tracking_1350[0].improvement_pct("sn-retina", "std-retina")}
        for budget in (300, 2300):
            report = tracking_score(
                corridor100,
                [Variant("sn"), Variant("std", scale=False)],
                eval_cfg(budget),
                t_stride=10,
                max_step=10,
            )
            improvements[budget] = report.improvement_pct("sn", "std")
        curve = [improvements[b] for b in (300, 1350, 2300)]
        assert curve[0] <= curve[1] <= curve[2]
        assert time.perf_counter() - t0 < 30 * 60


class TestInlierCurve:
    """Criterion 6: mean inliers decay with step and the scale-normalized
    stereo variant dominates the standard one at every step."""

    def test_shape_and_dominance(self, corridor100, cache1350):
        t0 = time.perf_counter()
        report = inlier_curve(
            corridor100,
            [SN_STEREO, STD_RETINA],
            eval_cfg(1350),
            steps=(1, 2, 3, 4, 5),
            seed=0,
            t_stride=3,
            cache=cache1350,
        )
        for name, means in report.means.items():
            assert all(a >= b for a, b in zip(means, means[1:])), name
        sn = report.means["sn-stereo"]
        std = report.means["std-retina"]
        assert all(a >= b for a, b in zip(sn, std))
        assert time.perf_counter() - t0 < 15 * 60


class TestRepeatedVo:
    """Criterion 7: over 5 seeded runs, the stereo descriptor's mean
    translation error does not exceed the standard descriptor's."""

    def test_error_ordering(self, corridor100, cache1350):
        t0 = time.perf_counter()
        reports = {}
        for v in (SN_STEREO, STD_RETINA):
            bundles = [cache1350.bundle(v.name, i) for i in range(len(corridor100))]
            reports[v.name] = repeated_vo_experiment(
                corridor100, variant_config(eval_cfg(1350), v),
                runs=5, base_seed=0, bundles=bundles,
            )
        for r in reports.values():
            assert r.best <= r.mean <= r.worst
        assert reports["sn-stereo"].mean <= reports["std-retina"].mean
        assert time.perf_counter() - t0 < 30 * 60


class TestVoAccuracy:
    """Criterion 8: noiseless straight-line endpoint error and rejection of
    injected outliers."""

    def test_endpoint_error(self, corridor100, cache1350):
        t0 = time.perf_counter()
        cache1350.register(SN_RETINA)
        bundles = [cache1350.bundle("sn-retina", i) for i in range(len(corridor100))]
        traj, diags = chain_trajectory(bundles, corridor100.rig, eval_cfg(1350), seed=0)
        path_len = 0.5 * (len(bundles) - 1)
        err = np.linalg.norm(traj[-1].translation - corridor100.gt_poses[-1].translation)
        assert err < 0.005 * path_len
        assert time.perf_counter() - t0 < 5 * 60

    def test_injected_outliers_excluded(self, corridor100, cache1350):
        cache1350.register(SN_RETINA)
        cfg = eval_cfg(1350)
        prev = cache1350.bundle("sn-retina", 0)
        curr = cache1350.bundle("sn-retina", 1)
        rng = stream(11, "acceptance-outliers")
        n = len(curr.correspondences)
        bad = set(rng.choice(n, size=int(round(0.3 * n)), replace=False).tolist())
        corrs = []
        for i, c in enumerate(curr.correspondences):
            if i in bad:
                dx = float(rng.uniform(20, 60)) * (1 if rng.random() < 0.5 else -1)
                dy = float(rng.uniform(20, 60)) * (1 if rng.random() < 0.5 else -1)
                corrs.append(StereoCorrespondence(
                    replace(c.left_feature, x=c.left_feature.x + dx, y=c.left_feature.y + dy),
                    replace(c.right_feature, x=c.right_feature.x + dx, y=c.right_feature.y + dy),
                    c.disparity, c.depth))
            else:
                corrs.append(c)
        tampered = FrameBundle(curr.index, None, None, corrs, curr.descriptors)
        est = estimate_motion(prev, tampered, corridor100.rig, cfg, np.random.default_rng(0))
        inliers = set(est.inliers)
        matched_bad = [j for j, m in enumerate(est.matches) if m.train_index in bad]
        assert len(matched_bad) >= 30
        excluded = sum(j not in inliers for j in matched_bad)
        assert excluded >= 0.95 * len(matched_bad)


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("acceptance-cli")
    scene = corridor_scene(n_frames=6, speed=0.75, seed=1, width=320, height=240)
    save_scene(scene, root / "scene.txt")
    (root / "pipeline.cfg").write_text(
        "detector.max_features = 300\nscale.r_min = 4.0\nscale.r_max = 20.0\n")
    return root


class TestDeterminism:
    """Criterion 9: commands re-run from their manifests reproduce the
    trajectory and report files byte-for-byte, regardless of --threads."""

    def _run(self, workspace, cmd, out, *extra):
        argv = [cmd, "--synthetic", str(workspace / "scene.txt"),
                "--config", str(workspace / "pipeline.cfg"), "--out", str(out), *extra]
        assert main(argv) == EXIT_OK

    def _rerun(self, manifest_dir, out):
        assert main(["rerun", "--manifest", str(manifest_dir / "manifest.txt"),
                     "--out", str(out)]) == EXIT_OK

    def test_vo_rerun_and_threads(self, workspace):
        a, b, c = workspace / "vo-a", workspace / "vo-b", workspace / "vo-c"
        self._run(workspace, "vo", a, "--seed", "3", "--threads", "1")
        self._rerun(a, b)
        self._run(workspace, "vo", c, "--seed", "3", "--threads", "8")
        assert (b / "trajectory.txt").read_bytes() == (a / "trajectory.txt").read_bytes()
        assert (c / "trajectory.txt").read_bytes() == (a / "trajectory.txt").read_bytes()

    def test_experiment_reports_rerun(self, workspace):
        outputs = {
            "track-eval": (["--feature-budget", "150", "--max-step", "2"],
                           ["tracking_scores.csv", "tracking_scores.txt"]),
            "inliers": (["--steps", "1,2"], ["inlier_curve.csv", "inlier_records.csv"]),
            "repeat-vo": (["--runs", "2"], ["translation_error.csv", "translation_error_runs.csv"]),
        }
        for cmd, (extra, files) in outputs.items():
            a = workspace / f"{cmd}-a"
            b = workspace / f"{cmd}-b"
            self._run(workspace, cmd, a, *extra)
            self._rerun(a, b)
            for name in files:
                assert (b / name).read_bytes() == (a / name).read_bytes(), f"{cmd}/{name}"
