"""Synthetic scene tests: determinism, motion bounds, scale ramps, distractor
similarity, occlusion, the oracle heatmap and overlay rendering."""

import numpy as np
import pytest

from roitrack import scene
from roitrack.controller import Window
from roitrack.errors import ParameterError
from roitrack.metrics import BBox, rasterize_gt
from roitrack.scene import SceneConfig, gen_sequence, oracle_heatmap, render_overlay


def small_config(**kw):
    base = dict(frame_w=96, frame_h=96, n_frames=20, target_w=20, target_h=20,
                n_distractors=1, vel_max=3.0, seed=5, texture_seed=7)
    base.update(kw)
    return SceneConfig(**base)


class TestGenSequence:
    def test_bitwise_determinism(self):
        a = gen_sequence(small_config())
        b = gen_sequence(small_config())
        assert a.boxes == b.boxes
        for fa, fb in zip(a.frames, b.frames):
            np.testing.assert_array_equal(fa, fb)

    def test_out_of_order_access_matches_sequential(self):
        rec = gen_sequence(small_config())
        later = rec.frames[13]
        again = gen_sequence(small_config())
        seq = [again.frames[i] for i in range(20)]
        np.testing.assert_array_equal(later, seq[13])

    def test_static_when_velocity_zero(self):
        rec = gen_sequence(small_config(vel_max=0.0, scale_ramp=1.0))
        assert all(b == rec.boxes[0] for b in rec.boxes)

    def test_scale_ramp_doubles_over_50_steps(self):
        rec = gen_sequence(SceneConfig(frame_w=256, frame_h=256, n_frames=51,
                                       target_w=40, target_h=40, scale_ramp=1.014,
                                       n_distractors=0, vel_max=2.0, seed=1))
        ratio = rec.boxes[-1].w / rec.boxes[0].w
        assert abs(ratio - 1.014 ** 50) < 1e-9
        assert abs(ratio - 2.0) < 0.02

    def test_velocity_bound_respected(self):
        rec = gen_sequence(small_config(vel_max=2.5, n_frames=60))
        for a, b in zip(rec.boxes, rec.boxes[1:]):
            assert abs(b.cx - a.cx) <= 2.5 + 1e-9
            assert abs(b.cy - a.cy) <= 2.5 + 1e-9

    def test_boxes_stay_inside_frame(self):
        rec = gen_sequence(small_config(vel_max=6.0, n_frames=80))
        for b in rec.boxes:
            assert b.x >= -1e-9 and b.y >= -1e-9
            assert b.x2 <= 96 + 1e-9 and b.y2 <= 96 + 1e-9

    def test_target_too_large_rejected(self):
        with pytest.raises(ParameterError):
            SceneConfig(frame_w=64, frame_h=64, target_w=100, target_h=10)

    def test_ramp_overflow_rejected(self):
        with pytest.raises(ParameterError):
            SceneConfig(frame_w=128, frame_h=128, n_frames=100,
                        target_w=40, target_h=40, scale_ramp=1.05)

    def test_frames_are_quantized_unit_range(self):
        rec = gen_sequence(small_config())
        f = rec.frames[3]
        assert f.shape == (96, 96, 3)
        assert f.min() >= 0.0 and f.max() <= 1.0
        np.testing.assert_array_equal(f, np.rint(f * 255) / 255)

    def test_target_pixels_differ_from_background(self):
        rec = gen_sequence(small_config(n_distractors=0, clutter=0.2))
        f = rec.frames[0]
        b = rec.boxes[0]
        inside = f[int(b.y) + 2 : int(b.y2) - 2, int(b.x) + 2 : int(b.x2) - 2]
        assert abs(inside.mean() - 0.5) > 0.02 or inside.std() > 0.02

    def test_distractor_boxes_recorded(self):
        rec = gen_sequence(small_config(n_distractors=3))
        assert len(rec.distractor_boxes) == 20
        assert all(len(d) == 3 for d in rec.distractor_boxes)


class TestSimilarity:
    @staticmethod
    def center_mean(frame, box):
        # central quarter only, so rect and ellipse sample object pixels alike
        y0 = int(box.cy - box.h / 4)
        x0 = int(box.cx - box.w / 4)
        region = frame[y0 : y0 + max(2, int(box.h / 2)), x0 : x0 + max(2, int(box.w / 2))]
        return region.mean(axis=(0, 1))

    def patch_means(self, similarity, seeds=range(12)):
        pairs = []
        for s in seeds:
            cfg = small_config(similarity=similarity, seed=100 + s, texture_seed=200 + s)
            rec = gen_sequence(cfg)
            f = rec.frames[0]
            t = self.center_mean(f, rec.boxes[0])
            d = self.center_mean(f, rec.distractor_boxes[0][0])
            pairs.append(np.linalg.norm(t - d))
        return np.array(pairs)

    def test_similarity_zero_has_color_margin(self):
        assert (self.patch_means(0.0) >= 0.15).all()

    def test_similarity_one_matches_statistically(self):
        # residual distance at similarity 1 is pure noise realization; it must
        # sit well below the deliberately separated similarity-0 distances
        near = self.patch_means(1.0)
        far = self.patch_means(0.0)
        assert near.mean() < far.mean() / 2

    def test_similarity_endpoints_on_texture_parameters(self):
        from roitrack.scene import _Renderer

        same = _Renderer(small_config(similarity=1.0))
        assert np.array_equal(same.d_colors[0], same.t_color)
        apart = _Renderer(small_config(similarity=0.0))
        assert np.linalg.norm(apart.d_colors[0] - apart.t_color) >= 0.35


class TestOcclusion:
    def test_occluder_changes_target_pixels_only_in_interval(self):
        base = small_config(n_distractors=0, vel_max=0.0,
                            occl_start=8, occl_len=4, occl_coverage=0.8)
        rec = gen_sequence(base)
        b = rec.boxes[0]
        cy, cx = int(b.cy), int(b.cx)
        before = rec.frames[7][cy, cx].copy()
        during = rec.frames[9][cy, cx].copy()
        after = rec.frames[12][cy, cx].copy()
        assert not np.array_equal(before, during)
        np.testing.assert_array_equal(before, after)


class TestOracleHeatmap:
    def test_centered_half_size_box(self):
        win = Window(0, 0, 112, 112)
        box = BBox(-28, -28, 56, 56)
        got = oracle_heatmap(box, win)
        expected = np.zeros((28, 28))
        expected[7:21, 7:21] = 1.0
        np.testing.assert_array_equal(got, expected)

    def test_disjoint_box(self):
        assert not oracle_heatmap(BBox(900, 900, 10, 10), Window(0, 0, 64, 64)).any()

    def test_equals_rasterize_gt(self):
        rng = np.random.default_rng(11)
        for _ in range(1000):
            box = BBox(*rng.uniform(-20, 100, 2), *rng.uniform(1, 80, 2))
            win = Window(*rng.uniform(0, 100, 2), *rng.uniform(10, 200, 2))
            np.testing.assert_array_equal(oracle_heatmap(box, win),
                                          rasterize_gt(box, win))


class TestRenderOverlay:
    def test_zero_roi_touches_only_rectangles(self):
        rec = gen_sequence(small_config())
        frame = rec.frames[0]
        win = Window(48, 48, 40, 40)
        box = BBox(38, 38, 20, 20)
        out = render_overlay(frame, win, np.zeros((28, 28)), box)
        mask = np.ones((96, 96), dtype=bool)
        for x0, y0, x1, y1 in [(28, 28, 68, 68), (38, 38, 58, 58)]:
            mask[y0 - 1 : y1 + 1, x0 - 1 : x1 + 1] = False
        np.testing.assert_array_equal(out[mask], frame[mask])

    def test_heat_confined_to_window(self):
        rec = gen_sequence(small_config())
        frame = rec.frames[0]
        win = Window(48, 48, 30, 30)
        out = render_overlay(frame, win, np.ones((28, 28)), BBox(43, 43, 10, 10))
        outside = np.ones((96, 96), dtype=bool)
        outside[32:65, 32:65] = False
        np.testing.assert_array_equal(out[outside], frame[outside])
        assert not np.array_equal(out[40:56, 40:56], frame[40:56, 40:56])

    def test_golden_overlay(self, tmp_path):
        import os

        from roitrack import seqio

        golden = os.path.join(os.path.dirname(__file__), "data", "golden_overlay.png")
        rec = gen_sequence(small_config(seed=42, texture_seed=43))
        out = render_overlay(rec.frames[5], Window(48, 48, 44, 44),
                             oracle_heatmap(rec.boxes[5], Window(48, 48, 44, 44)),
                             rec.boxes[5])
        fresh = tmp_path / "overlay.png"
        seqio.save_image(fresh, out)
        np.testing.assert_array_equal(seqio.load_image(fresh), seqio.load_image(golden))
