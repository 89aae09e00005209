"""Tracking pipeline tests: init geometry, crop sampling, the per-frame state
machine with oracle heatmaps, and whole-sequence runs."""

import numpy as np
import pytest

from roitrack import tracker
from roitrack.controller import Window
from roitrack.errors import ParameterError
from roitrack.imageops import crop_and_resize
from roitrack.metrics import BBox
from roitrack.model import build_model
from roitrack.scene import SceneConfig, gen_sequence
from roitrack.tracker import TrackerConfig, init_tracker, oracle_roi_fn, run_sequence, track_frame


def flat_frame(h=128, w=128, value=0.5):
    return np.full((h, w, 3), value)


def oracle_config(**kw):
    return TrackerConfig(**kw)


class TestTrackerConfig:
    def test_defaults_valid(self):
        cfg = TrackerConfig()
        assert cfg.grow_threshold == 0.75 and cfg.shrink_threshold == 0.25
        assert abs(cfg.grow_factor * cfg.shrink_factor - 1.0) < 1e-12

    def test_threshold_ordering_enforced(self):
        with pytest.raises(ParameterError):
            TrackerConfig(grow_threshold=0.2, shrink_threshold=0.5)

    def test_from_mapping_rejects_unknown_key(self):
        with pytest.raises(ParameterError, match="typo_key"):
            TrackerConfig.from_mapping({"typo_key": "1"})

    def test_from_mapping_parses(self):
        cfg = TrackerConfig.from_mapping({"template_update_n": "5", "bin_threshold": "0.4"})
        assert cfg.template_update_n == 5 and cfg.bin_threshold == 0.4


class TestInitTracker:
    def test_window_is_twice_the_box(self):
        state = init_tracker(None, flat_frame(), BBox(50, 50, 40, 30), TrackerConfig())
        assert state.window == Window(70.0, 65.0, 80.0, 60.0)
        assert state.frame_index == 0 and not state.lost

    def test_min_clamp_for_tiny_box(self):
        state = init_tracker(None, flat_frame(), BBox(10, 10, 4, 4), TrackerConfig())
        assert state.window.w == 16.0 and state.window.h == 16.0

    def test_deterministic(self):
        params = build_model(0)
        frame = gen_sequence(SceneConfig(frame_w=96, frame_h=96, n_frames=1,
                                         target_w=20, target_h=20, seed=3)).frames[0]
        a = init_tracker(params, frame, BBox(30, 30, 20, 20), TrackerConfig())
        b = init_tracker(params, frame, BBox(30, 30, 20, 20), TrackerConfig())
        assert a.window == b.window
        np.testing.assert_array_equal(a.template_feats.feats, b.template_feats.feats)

    def test_degenerate_box_rejected(self):
        with pytest.raises(ParameterError):
            init_tracker(None, flat_frame(), BBox(0, 0, 0, 10), TrackerConfig())


class TestCropAndResize:
    def test_full_frame_identity(self):
        rng = np.random.default_rng(0)
        frame = rng.uniform(0, 1, (56, 56, 3))
        win = Window(28.0, 28.0, 56.0, 56.0)
        np.testing.assert_array_equal(crop_and_resize(frame, win, 56), frame)

    def test_constant_frame_any_window(self):
        frame = flat_frame(value=0.37)
        for win in [Window(10, 10, 30, 30), Window(-20, 150, 90, 40), Window(64, 64, 500, 500)]:
            crop = crop_and_resize(frame, win, 56)
            np.testing.assert_allclose(crop, 0.37, atol=1e-12)

    def test_checkerboard_bilinear_hand_values(self):
        checker = np.zeros((2, 2, 3))
        checker[0, 0] = checker[1, 1] = 1.0
        win = Window(1.0, 1.0, 2.0, 2.0)
        got = crop_and_resize(checker, win, 4)
        # samples at -0.25, 0.25, 0.75, 1.25 clamp to [0,1]:
        # f(y,x) = (1-x)(1-y) + xy on the unit square
        expected_1d = np.array([0.0, 0.25, 0.75, 1.0])
        expected = np.empty((4, 4))
        for i, y in enumerate(expected_1d):
            for j, x in enumerate(expected_1d):
                expected[i, j] = (1 - x) * (1 - y) + x * y
        np.testing.assert_allclose(got[:, :, 0], expected, atol=1e-12)
        np.testing.assert_allclose(got[:, :, 1], expected, atol=1e-12)

    def test_edge_replication_outside_frame(self):
        frame = np.zeros((8, 8, 3))
        frame[:, 0] = 1.0  # bright left column
        win = Window(-10.0, 4.0, 8.0, 8.0)  # mostly left of the frame
        crop = crop_and_resize(frame, win, 8)
        np.testing.assert_allclose(crop[:, :6], 1.0, atol=1e-12)


class TestTrackFrameOracle:
    def run_oracle(self, cfg, n_frames=100, vel=2.0, size=40.0, ramp=1.0, seed=3):
        rec = gen_sequence(SceneConfig(frame_w=256, frame_h=256, n_frames=n_frames,
                                       target_w=size, target_h=size, scale_ramp=ramp,
                                       n_distractors=0, vel_max=vel, seed=seed))
        result = run_sequence(None, rec, cfg, roi_fn=oracle_roi_fn(rec.boxes))
        return rec, result

    def test_static_target_window_fixed(self):
        rec, result = self.run_oracle(oracle_config(), vel=0.0)
        first = result.rois[0].window
        assert all(r.window == first for r in result.rois)

    def test_moving_target_center_always_inside_window(self):
        rec, result = self.run_oracle(oracle_config(), vel=4.0, seed=11)
        for i, roi_rec in enumerate(result.rois, start=1):
            b = rec.boxes[i]
            w = roi_rec.window
            assert abs(b.cx - w.cx) <= w.w / 2
            assert abs(b.cy - w.cy) <= w.h / 2

    def test_template_constant_when_n_zero(self):
        params = build_model(0)
        rec = gen_sequence(SceneConfig(frame_w=96, frame_h=96, n_frames=12,
                                       target_w=20, target_h=20, vel_max=2.0, seed=5))
        cfg = TrackerConfig(template_update_n=0)
        state = init_tracker(params, rec.frames[0], rec.boxes[0], cfg)
        t0 = state.template_feats.feats.copy()
        for i in range(1, 12):
            state, _, _ = track_frame(state, rec.frames[i], params, cfg)
        np.testing.assert_array_equal(state.template_feats.feats, t0)

    def test_template_refresh_changes_features(self):
        params = build_model(0)
        rec = gen_sequence(SceneConfig(frame_w=96, frame_h=96, n_frames=12,
                                       target_w=20, target_h=20, vel_max=2.0, seed=5))
        cfg = TrackerConfig(template_update_n=3)
        state = init_tracker(params, rec.frames[0], rec.boxes[0], cfg)
        t0 = state.template_feats.feats.copy()
        for i in range(1, 7):
            state, _, _ = track_frame(state, rec.frames[i], params, cfg)
        assert not np.array_equal(state.template_feats.feats, t0)

    def test_frame_dim_change_rejected(self):
        cfg = oracle_config()
        state = init_tracker(None, flat_frame(128, 128), BBox(40, 40, 20, 20), cfg)
        with pytest.raises(ParameterError):
            track_frame(state, flat_frame(100, 128), None, cfg,
                        roi_fn=lambda i, f, w: np.zeros((28, 28)))

    def test_lost_holds_window_and_repeats_box(self):
        cfg = oracle_config()
        state = init_tracker(None, flat_frame(), BBox(40, 40, 30, 30), cfg)

        def empty_roi(i, f, w):
            return np.zeros((28, 28))

        win0 = state.window
        state, pred, _ = track_frame(state, flat_frame(), None, cfg, roi_fn=empty_roi)
        assert state.lost
        assert state.window == win0
        assert pred == BBox(40, 40, 30, 30)

    def test_deterministic(self):
        cfg = oracle_config()
        _, r1 = self.run_oracle(cfg, n_frames=30, seed=9)
        _, r2 = self.run_oracle(cfg, n_frames=30, seed=9)
        assert [s.mean for s in r1.report.sequences] == [s.mean for s in r2.report.sequences]
        for a, b in zip(r1.boxes, r2.boxes):
            assert a == b


class TestRunSequence:
    def test_single_frame_report_flagged(self):
        rec = gen_sequence(SceneConfig(frame_w=96, frame_h=96, n_frames=1,
                                       target_w=20, target_h=20, seed=2))
        result = run_sequence(None, rec, oracle_config(), roi_fn=oracle_roi_fn(rec.boxes))
        assert len(result.boxes) == 1
        assert result.report.total_frames == 0
        assert result.report.empty_sequences == 1

    def test_oracle_run_scores_high(self):
        rec = gen_sequence(SceneConfig(frame_w=256, frame_h=256, n_frames=60,
                                       target_w=40, target_h=36, n_distractors=2,
                                       vel_max=4.0, seed=21))
        result = run_sequence(None, rec, oracle_config(), roi_fn=oracle_roi_fn(rec.boxes))
        assert result.report.dataset_mean >= 0.8  # quantization is the only loss

    def test_prediction_boxes_track_ground_truth(self):
        rec = gen_sequence(SceneConfig(frame_w=256, frame_h=256, n_frames=60,
                                       target_w=40, target_h=40, vel_max=3.0, seed=23))
        result = run_sequence(None, rec, oracle_config(), roi_fn=oracle_roi_fn(rec.boxes))
        errs = [np.hypot(p.cx - g.cx, p.cy - g.cy)
                for p, g in zip(result.boxes[1:], rec.boxes[1:])]
        assert np.mean(errs) < 8.0

    def test_window_bounds_respected(self):
        rec = gen_sequence(SceneConfig(frame_w=128, frame_h=128, n_frames=40,
                                       target_w=30, target_h=30, vel_max=3.0, seed=27))

        def huge_roi(i, f, w):
            return np.ones((28, 28))  # always demands growth

        cfg = oracle_config()
        result = run_sequence(None, rec, cfg, roi_fn=huge_roi)
        for r in result.rois:
            assert r.window.w <= cfg.max_window_scale * 128 + 1e-9
            assert r.window.h <= cfg.max_window_scale * 128 + 1e-9

    def test_model_backed_run_works_end_to_end(self):
        params = build_model(1)
        rec = gen_sequence(SceneConfig(frame_w=96, frame_h=96, n_frames=8,
                                       target_w=20, target_h=20, vel_max=2.0, seed=31))
        result = run_sequence(params, rec, TrackerConfig())
        assert len(result.boxes) == 8
        assert len(result.rois) == 7
        assert all(r.roi.shape == (28, 28) for r in result.rois)
