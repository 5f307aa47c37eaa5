import unittest

import numpy as np
from hypothesis import given
from hypothesis import settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from proposalloc.exceptions import AllUnknown
from proposalloc.exceptions import InvalidData
from proposalloc.exceptions import NoBackground
from proposalloc.exceptions import OutOfBounds
from proposalloc.exceptions import Overlap
from proposalloc.imaging import Box
from proposalloc.imaging import GrayMap
from proposalloc.pseudolabels import PixelLabel
from proposalloc.pseudolabels import PseudoLabelMask
from proposalloc.pseudolabels import SamplingConfig
from proposalloc.pseudolabels import build_pseudo_mask
from proposalloc.pseudolabels import sample_background
from proposalloc.pseudolabels import sample_foreground
from proposalloc.pseudolabels import sample_pseudo_labels


def as_set(pixels: np.ndarray):
    return {tuple(p) for p in pixels.tolist()}


class SamplingConfigTest(unittest.TestCase):
    def test_fractions(self):
        cfg = SamplingConfig()
        self.assertEqual(cfg.foreground_pool(100), 30)
        self.assertEqual(cfg.background_pool(1), 1)

    def test_absolute_counts_clipped(self):
        cfg = SamplingConfig(n_plus=50, n_minus=7)
        self.assertEqual(cfg.foreground_pool(12), 12)
        self.assertEqual(cfg.background_pool(100), 7)

    def test_invalid(self):
        with self.assertRaises(InvalidData):
            SamplingConfig(samples_per_side=0)
        with self.assertRaises(InvalidData):
            SamplingConfig(n_plus=0)


class ForegroundTest(unittest.TestCase):
    def test_exhaustive(self):
        box = Box(1, 2, 4, 4)
        cfg = SamplingConfig(n_plus=6, samples_per_side=6)
        e = GrayMap(np.random.default_rng(0).random((6, 6)))
        pixels = sample_foreground(e, box, cfg, np.random.default_rng(1))
        expected = {(x, y) for x in range(1, 4) for y in range(2, 4)}
        self.assertEqual(as_set(pixels), expected)

    def test_single_candidate(self):
        values = np.zeros((5, 5))
        values[3, 2] = 1.0
        cfg = SamplingConfig(n_plus=1, samples_per_side=10)
        rng = np.random.default_rng(2)
        for _ in range(20):
            pixels = sample_foreground(GrayMap(values), Box(0, 0, 5, 5), cfg, rng)
            self.assertEqual(pixels.tolist(), [[2, 3]])

    def test_multinomial_frequencies(self):
        e = GrayMap(np.array([[1.0, 2.0, 3.0]]))
        cfg = SamplingConfig(n_plus=3, samples_per_side=1)
        rng = np.random.default_rng(3)
        draws = 100_000
        counts = np.zeros(3)
        for _ in range(draws):
            counts[sample_foreground(e, Box(0, 0, 3, 1), cfg, rng)[0, 0]] += 1
        distance = 0.5 * np.abs(counts / draws - np.array([1, 2, 3]) / 6.0).sum()
        self.assertLess(distance, 0.02)

    def test_non_positive_activations(self):
        e = GrayMap(np.array([[-2.0, -1.0, 0.0, 1.0]]))
        cfg = SamplingConfig(n_plus=4, samples_per_side=4)
        pixels = sample_foreground(e, Box(0, 0, 4, 1), cfg, np.random.default_rng(4))
        self.assertEqual(as_set(pixels), {(0, 0), (1, 0), (2, 0), (3, 0)})

    def test_box_out_of_bounds(self):
        with self.assertRaises(OutOfBounds):
            sample_foreground(
                GrayMap(np.zeros((4, 4))),
                Box(0, 0, 5, 4),
                SamplingConfig(),
                np.random.default_rng(0),
            )

    @settings(max_examples=100, deadline=None)
    @given(
        arrays(np.float64, (9, 9), elements=st.floats(-1, 1)),
        st.integers(0, 4),
        st.integers(0, 4),
        st.integers(2, 5),
        st.integers(0, 2**32 - 1),
    )
    def test_inside_box_and_top_candidates(self, values, x0, y0, side, seed):
        box = Box(x0, y0, x0 + side, y0 + side)
        cfg = SamplingConfig(samples_per_side=5)
        e = GrayMap(values)
        pixels = sample_foreground(e, box, cfg, np.random.default_rng(seed))
        inside = values[box.y0 : box.y1, box.x0 : box.x1].ravel()
        cutoff = np.sort(inside)[::-1][cfg.foreground_pool(box.area) - 1]
        self.assertEqual(len(as_set(pixels)), len(pixels))
        self.assertEqual(len(pixels), min(5, cfg.foreground_pool(box.area)))
        for x, y in pixels.tolist():
            self.assertTrue(box.x0 <= x < box.x1 and box.y0 <= y < box.y1)
            self.assertGreaterEqual(values[y, x], cutoff)


class BackgroundTest(unittest.TestCase):
    def test_covered(self):
        with self.assertRaises(NoBackground):
            sample_background(
                GrayMap(np.zeros((4, 4))),
                [Box(0, 0, 4, 2), Box(0, 2, 4, 4)],
                SamplingConfig(),
                np.random.default_rng(0),
            )

    def test_single_exterior_pixel(self):
        cfg = SamplingConfig(n_minus=1)
        rng = np.random.default_rng(1)
        for _ in range(10):
            pixels = sample_background(
                GrayMap(np.ones((3, 3))), [Box(0, 0, 3, 2), Box(0, 2, 2, 3)], cfg, rng
            )
            self.assertEqual(pixels.tolist(), [[2, 2]])

    def test_uniform(self):
        cfg = SamplingConfig(n_minus=100, samples_per_side=1)
        rng = np.random.default_rng(5)
        e = GrayMap(np.zeros((10, 20)))
        draws = 100_000
        counts = np.zeros((10, 10))
        for _ in range(draws):
            x, y = sample_background(e, [Box(10, 0, 20, 10)], cfg, rng)[0]
            counts[y, x] += 1
        np.testing.assert_allclose(counts / draws, 0.01, atol=0.003)

    @settings(max_examples=100, deadline=None)
    @given(
        arrays(np.float64, (8, 8), elements=st.floats(-1, 1)),
        st.lists(
            st.tuples(st.integers(0, 6), st.integers(0, 6)), min_size=1, max_size=3
        ),
        st.integers(0, 2**32 - 1),
    )
    def test_outside_boxes_and_low_candidates(self, values, corners, seed):
        boxes = [Box(x, y, x + 2, y + 2) for x, y in corners]
        covered = np.zeros((8, 8), dtype=bool)
        for box in boxes:
            covered[box.y0 : box.y1, box.x0 : box.x1] = True
        cfg = SamplingConfig(samples_per_side=6)
        rng = np.random.default_rng(seed)
        pixels = sample_background(GrayMap(values), boxes, cfg, rng)
        exterior = np.sort(values[~covered])
        cutoff = exterior[cfg.background_pool(exterior.size) - 1]
        self.assertEqual(len(as_set(pixels)), len(pixels))
        for x, y in pixels.tolist():
            self.assertFalse(covered[y, x])
            self.assertLessEqual(values[y, x], cutoff)


class BalancedDrawTest(unittest.TestCase):
    def test_small_box_limits_both_sides(self):
        e = GrayMap(np.random.default_rng(7).random((32, 32)))
        box = Box(4, 4, 9, 9)
        rng = np.random.default_rng(8)
        fg, bg = sample_pseudo_labels(e, box, [box], SamplingConfig(), rng)
        self.assertEqual(len(fg), 8)
        self.assertEqual(len(bg), 8)

    def test_small_exterior_limits_both_sides(self):
        e = GrayMap(np.random.default_rng(9).random((10, 10)))
        box = Box(0, 0, 10, 9)
        cfg = SamplingConfig(n_plus=40, samples_per_side=20)
        fg, bg = sample_pseudo_labels(e, box, [box], cfg, np.random.default_rng(1))
        self.assertEqual(len(fg), 3)
        self.assertEqual(len(bg), 3)

    def test_no_exterior(self):
        e = GrayMap(np.random.default_rng(2).random((6, 6)))
        box = Box(0, 0, 6, 6)
        rng = np.random.default_rng(3)
        fg, bg = sample_pseudo_labels(e, box, [box], SamplingConfig(), rng)
        self.assertEqual(len(fg), 10)
        self.assertEqual(bg.shape, (0, 2))

    def test_count_beyond_pool(self):
        with self.assertRaises(InvalidData):
            sample_foreground(
                GrayMap(np.zeros((4, 4))),
                Box(0, 0, 2, 2),
                SamplingConfig(n_plus=2),
                np.random.default_rng(0),
                count=3,
            )

    @settings(max_examples=200, deadline=None)
    @given(
        arrays(np.float64, (12, 12), elements=st.floats(-1, 1)),
        st.lists(
            st.tuples(st.integers(0, 9), st.integers(0, 9), st.integers(1, 3)),
            min_size=1,
            max_size=3,
        ),
        st.integers(1, 15),
        st.integers(0, 2**32 - 1),
    )
    def test_equal_sides(self, values, boxes, per_side, seed):
        boxes = [Box(x, y, x + side, y + side) for x, y, side in boxes]
        cfg = SamplingConfig(samples_per_side=per_side)
        e = GrayMap(values)
        rng = np.random.default_rng(seed)
        fg, bg = sample_pseudo_labels(e, boxes[0], boxes, cfg, rng)
        self.assertEqual(len(fg), len(bg))
        self.assertLessEqual(len(fg), per_side)
        build_pseudo_mask(fg, bg, 12, 12)


class BuildMaskTest(unittest.TestCase):
    def test_small_mask(self):
        mask = build_pseudo_mask(np.array([[1, 1]]), np.array([[0, 0]]), 2, 2)
        expected = [
            [PixelLabel.BG, PixelLabel.UNKNOWN],
            [PixelLabel.UNKNOWN, PixelLabel.FG],
        ]
        np.testing.assert_array_equal(mask.labels, expected)

    def test_foreground_only(self):
        mask = build_pseudo_mask(np.array([[0, 1], [2, 0]]), np.empty((0, 2)), 3, 2)
        self.assertEqual(int(mask.labeled.sum()), 2)
        self.assertFalse((mask.labels == PixelLabel.BG).any())

    def test_overlap(self):
        with self.assertRaises(Overlap):
            build_pseudo_mask(np.array([[1, 1]]), np.array([[1, 1]]), 2, 2)

    def test_out_of_bounds(self):
        with self.assertRaises(OutOfBounds):
            build_pseudo_mask(np.array([[2, 0]]), np.empty((0, 2)), 2, 2)

    def test_all_unknown(self):
        with self.assertRaises(AllUnknown):
            build_pseudo_mask(np.empty((0, 2)), np.empty((0, 2)), 2, 2)

    def test_balanced_and_resampled(self):
        rng = np.random.default_rng(6)
        e = GrayMap(rng.random((16, 16)))
        box = Box(4, 4, 12, 12)
        cfg = SamplingConfig()
        seen = set()
        for _ in range(5):
            fg, bg = sample_pseudo_labels(e, box, [box], cfg, rng)
            self.assertEqual(len(fg), len(bg))
            mask = build_pseudo_mask(fg, bg, 16, 16)
            seen.add(mask.labels.tobytes())
        self.assertGreater(len(seen), 1)

    def test_rendering(self):
        mask = PseudoLabelMask(np.array([[1, 0, -1]]))
        np.testing.assert_allclose(mask.to_image().data[0, :, 0], [1.0, 0.0, 128 / 255])


if __name__ == "__main__":
    unittest.main()
