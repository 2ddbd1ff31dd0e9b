import numpy as np
import pytest

from stereovo.config import DetectorConfig
from stereovo.detector import Feature, detect, harris_response, threshold_features
from stereovo.errors import ImageTooSmall
from stereovo.image import GrayImage

from util import textured_image


def checkerboard(size: int = 160, square: int = 16) -> GrayImage:
    idx = np.arange(size) // square
    board = (idx[:, None] + idx[None, :]) % 2
    return GrayImage(np.where(board, 200, 60).astype(np.uint8))


class TestDetect:
    def test_constant_image_has_no_corners(self):
        img = GrayImage(np.full((64, 64), 127, dtype=np.uint8))
        assert detect(img, DetectorConfig()) == []

    def test_too_small_image(self):
        img = GrayImage(np.zeros((20, 64), dtype=np.uint8))
        with pytest.raises(ImageTooSmall):
            detect(img, DetectorConfig(border=16))

    def test_single_white_pixel(self):
        px = np.zeros((100, 100), dtype=np.uint8)
        px[50, 50] = 255
        feats = detect(GrayImage(px), DetectorConfig())
        assert len(feats) == 1
        assert abs(feats[0].x - 50) <= 1.0
        assert abs(feats[0].y - 50) <= 1.0

    def test_checkerboard_corners_on_grid(self):
        feats = detect(checkerboard(), DetectorConfig(max_features=500))
        assert len(feats) >= 20
        for f in feats:
            # every detection within 1 px of a physical square corner
            assert abs(f.x - 16 * round(f.x / 16)) <= 1.0
            assert abs(f.y - 16 * round(f.y / 16)) <= 1.0

    def test_sorted_by_response_with_spacing(self):
        cfg = DetectorConfig(max_features=300)
        feats = detect(textured_image(11, 160, 120), cfg)
        assert len(feats) > 30
        responses = [f.response for f in feats]
        assert responses == sorted(responses, reverse=True)
        xy = np.array([[f.x, f.y] for f in feats])
        d2 = np.sum((xy[:, None, :] - xy[None, :, :]) ** 2, axis=2)
        np.fill_diagonal(d2, np.inf)
        assert d2.min() > cfg.nms_radius**2 - 1.0   # integer NMS, subpixel within +/-0.5

    def test_respects_budget_and_border(self):
        cfg = DetectorConfig(max_features=25, border=20)
        feats = detect(textured_image(12, 160, 120), cfg)
        assert len(feats) == 25
        for f in feats:
            assert 20 - 0.5 <= f.x <= 160 - 20 - 0.5
            assert 20 - 0.5 <= f.y <= 120 - 20 - 0.5

    def test_border_left_widens_left_margin_only(self):
        cfg = DetectorConfig(max_features=10_000, border=20, border_left=60)
        feats = detect(textured_image(12, 160, 120), cfg)
        assert len(feats) > 10
        for f in feats:
            assert 60 - 0.5 <= f.x <= 160 - 20 - 0.5
            assert 20 - 0.5 <= f.y <= 120 - 20 - 0.5
        # smaller-than-border values are ignored, not shrunk
        same = detect(textured_image(12, 160, 120), DetectorConfig(max_features=10_000, border=20))
        also = detect(textured_image(12, 160, 120), DetectorConfig(max_features=10_000, border=20, border_left=5))
        assert same == also

    def test_deterministic(self):
        img = textured_image(13, 128, 96)
        cfg = DetectorConfig()
        assert detect(img, cfg) == detect(img, cfg)

    def test_default_size_assigned(self):
        feats = detect(textured_image(14), DetectorConfig(default_size=9.0))
        assert all(f.size == 9.0 for f in feats)

    def test_shift_moves_interior_detections_exactly(self):
        """Two crops of one big image offset by (dx, dy): deep-interior
        detections correspond one-to-one with exactly shifted coordinates."""
        dx, dy = 5, 3
        base = textured_image(15, 200, 200)
        a = GrayImage(base.pixels[0:128, 0:128])
        b = GrayImage(base.pixels[dy : 128 + dy, dx : 128 + dx])
        cfg = DetectorConfig(max_features=10_000)
        fa = {(f.x, f.y) for f in detect(a, cfg) if 40 <= f.x <= 88 and 40 <= f.y <= 88}
        fb = {(f.x + dx, f.y + dy) for f in detect(b, cfg) if 40 - dx <= f.x <= 88 - dx and 40 - dy <= f.y <= 88 - dy}
        assert fa == fb
        assert len(fa) > 5


class TestHarrisResponse:
    def test_shape_and_flat_zero(self):
        img = GrayImage(np.full((32, 48), 99, dtype=np.uint8))
        resp = harris_response(img)
        assert resp.shape == (32, 48)
        assert np.allclose(resp, 0.0)

    def test_corner_beats_edge(self):
        px = np.zeros((64, 64), dtype=np.uint8)
        px[:32, :32] = 255           # corner at (32, 32); edges along x=32 / y=32
        resp = harris_response(GrayImage(px))
        assert resp[32, 32] > resp[32, 10]   # corner response above pure-edge response
        assert resp[32, 10] <= 0 or resp[32, 32] > 10 * resp[32, 10]


class TestThresholdFeatures:
    def _feats(self):
        return [Feature(x=i, y=i, response=r, size=7.0) for i, r in enumerate([5.0, 2.0, 9.0, 0.5])]

    def test_zero_threshold_is_identity(self):
        feats = self._feats()
        assert threshold_features(feats, 0.0) == feats

    def test_above_max_is_empty(self):
        assert threshold_features(self._feats(), 100.0) == []

    def test_nested_sets_order_preserved(self, rng):
        feats = [Feature(x=i, y=0, response=float(r), size=7.0) for i, r in enumerate(rng.uniform(0, 10, 50))]
        loose = threshold_features(feats, 2.0)
        strict = threshold_features(feats, 6.0)
        assert set(strict) <= set(loose)
        assert loose == [f for f in feats if f.response >= 2.0]
