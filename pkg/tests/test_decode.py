"""
Tests for per-level argmax decoding, joint path selection and raster outputs.
"""
import tempfile
import unittest
from pathlib import Path

import numpy as np
from PIL import Image

from hieraseg.decode import (
    argmax_per_level,
    consistency_rate,
    decode,
    jsps_decode,
    path_scores,
    read_level_logits,
    read_level_rasters,
    render_preview,
    write_level_logits,
    write_level_rasters,
)
from hieraseg.exceptions import ShapeError, StorageError, ValidationError
from hieraseg.hierarchy import LevelLabels, aggregate_flat_prediction, fixture_path, load_hierarchy
from hieraseg.numeric.ops import stable_sigmoid
from hieraseg.numeric.tensor import Tensor

SIZES = (4, 9, 18)


def random_logits(seed, height=4, width=4, batch=1):
    rng = np.random.default_rng(seed)
    return [rng.normal(size=(batch, c, height, width)) for c in SIZES]


def path_oracle(hierarchy, logits):
    """Enumerate every path at every pixel; keep the first strictly best one."""
    batch, _, height, width = logits[0].shape
    sig = [stable_sigmoid(l) for l in logits]
    out = [np.zeros((batch, height, width), dtype=np.int64) for _ in logits]
    for b, i, j in np.ndindex(batch, height, width):
        best, best_score = None, -np.inf
        for path in hierarchy.paths:
            score = sig[0][b, path[0], i, j]
            for level in range(1, len(path)):
                score = score + sig[level][b, path[level], i, j]
            if score > best_score:
                best, best_score = path, score
        for level, cls in enumerate(best):
            out[level][b, i, j] = cls
    return out


class TestArgmaxPerLevel(unittest.TestCase):
    def setUp(self):
        self.h = load_hierarchy(fixture_path("mm5b.json"))

    def test_one_hot_path(self):
        """Test that logits one-hot on a valid path decode to that path."""
        path = self.h.paths[7]
        logits = [np.zeros((1, c, 2, 2)) for c in SIZES]
        for level, cls in enumerate(path):
            logits[level][:, cls] = 1.0
        labels = argmax_per_level(logits)
        for level, cls in enumerate(path):
            np.testing.assert_array_equal(labels[level], cls)

    def test_zero_logits_pick_class_zero(self):
        """Test that ties go to class 0 at every level."""
        labels = argmax_per_level([Tensor(np.zeros((1, c, 3, 3))) for c in SIZES])
        for level in range(3):
            np.testing.assert_array_equal(labels[level], 0)

    def test_matches_loop(self):
        """Test random logits against a per-pixel loop argmax."""
        logits = random_logits(0)
        labels = argmax_per_level(logits)
        for level, array in enumerate(logits):
            for b, i, j in np.ndindex(1, 4, 4):
                values = list(array[b, :, i, j])
                self.assertEqual(labels[level][b, i, j], values.index(max(values)))

    def test_mismatched_rasters(self):
        """Test that levels with different spatial shapes are rejected."""
        with self.assertRaises(ShapeError):
            argmax_per_level([np.zeros((1, 4, 2, 2)), np.zeros((1, 9, 3, 3))])
        with self.assertRaises(ValidationError):
            argmax_per_level([])


class TestConsistencyRate(unittest.TestCase):
    def setUp(self):
        self.h = load_hierarchy(fixture_path("mm5b.json"))

    def test_jsps_and_aggregation_are_consistent(self):
        """Test that path decoding and flat aggregation always score 1.0."""
        logits = random_logits(1, 8, 8)
        self.assertEqual(consistency_rate(jsps_decode(logits, self.h), self.h), 1.0)
        flat = LevelLabels.single(logits[2].argmax(axis=1), 2, 3)
        self.assertEqual(consistency_rate(aggregate_flat_prediction(self.h, flat), self.h), 1.0)

    def test_water_over_dry_cropland(self):
        """Test that water paired with dry cropland counts as inconsistent."""
        water = self.h.class_index("L1", "water")
        cropland = self.h.class_index("L2", "cropland")
        dry = self.h.class_index("L3", "dry_cropland")
        pred = LevelLabels((np.array([[water]]), np.array([[cropland]]), np.array([[dry]])))
        self.assertEqual(consistency_rate(pred, self.h), 0.0)


class TestJsps(unittest.TestCase):
    def setUp(self):
        self.h = load_hierarchy(fixture_path("mm5b.json"))

    def test_zero_logits(self):
        """Test that every path scores L/2 on zero logits and path 0 wins."""
        logits = [np.zeros((1, c, 2, 3)) for c in SIZES]
        scores = path_scores(logits, self.h)
        self.assertEqual(scores.num_paths, 18)
        np.testing.assert_array_equal(scores.scores, 1.5)
        np.testing.assert_array_equal(scores.best(), 0)
        decoded = jsps_decode(logits, self.h)
        for level in range(3):
            np.testing.assert_array_equal(decoded[level], self.h.paths[0][level])

    def test_dominant_path(self):
        """Test that +20 on one full path and -20 elsewhere selects that path."""
        path = self.h.paths[11]
        logits = [np.full((1, c, 2, 2), -20.0) for c in SIZES]
        for level, cls in enumerate(path):
            logits[level][:, cls] = 20.0
        decoded = jsps_decode(logits, self.h)
        for level, cls in enumerate(path):
            np.testing.assert_array_equal(decoded[level], cls)

    def test_matches_enumeration_oracle(self):
        """Test 16x16 random logits against exhaustive path enumeration."""
        logits = random_logits(2, 16, 16)
        decoded = jsps_decode(logits, self.h)
        oracle = path_oracle(self.h, logits)
        for level in range(3):
            np.testing.assert_array_equal(decoded[level], oracle[level])

    def test_matches_oracle_with_ties(self):
        """Test coarsely quantized logits, where many paths tie, against the oracle."""
        rng = np.random.default_rng(3)
        logits = [rng.integers(-1, 2, (1, c, 8, 8)).astype(float) for c in SIZES]
        decoded = jsps_decode(logits, self.h)
        oracle = path_oracle(self.h, logits)
        for level in range(3):
            np.testing.assert_array_equal(decoded[level], oracle[level])

    def test_level_shift_matches_oracle(self):
        """Test that shifting one level's logits still agrees with the oracle."""
        logits = random_logits(4, 8, 8)
        logits[1] = logits[1] + 3.0
        decoded = jsps_decode(logits, self.h)
        oracle = path_oracle(self.h, logits)
        for level in range(3):
            np.testing.assert_array_equal(decoded[level], oracle[level])

    def test_beats_naive_argmax(self):
        """Test a pixel where the fine argmax sits in another branch than the coarse levels favour."""
        water = self.h.class_index("L1", "water")
        natural_water = self.h.class_index("L2", "natural_water")
        dry = self.h.class_index("L3", "dry_cropland")
        river = self.h.class_index("L3", "river")
        logits = [np.full((1, c, 1, 1), -5.0) for c in SIZES]
        logits[0][0, water] = 5.0
        logits[1][0, natural_water] = 5.0
        logits[2][0, dry] = 6.0
        logits[2][0, river] = 2.0

        naive = argmax_per_level(logits)
        self.assertEqual(int(naive[2][0, 0, 0]), dry)
        self.assertEqual(consistency_rate(naive, self.h), 0.0)

        joint = jsps_decode(logits, self.h)
        self.assertEqual(
            (int(joint[0][0, 0, 0]), int(joint[1][0, 0, 0]), int(joint[2][0, 0, 0])),
            (water, natural_water, river),
        )

    def test_tiling_and_determinism(self):
        """Test that the result does not depend on the band height and repeats exactly."""
        logits = random_logits(5, 10, 6, batch=2)
        reference = jsps_decode(logits, self.h, tile_rows=16)
        for rows in (1, 3, 10):
            tiled = jsps_decode(logits, self.h, tile_rows=rows)
            for level in range(3):
                np.testing.assert_array_equal(tiled[level], reference[level])
        again = jsps_decode(logits, self.h, tile_rows=16)
        np.testing.assert_array_equal(again[2], reference[2])

    def test_softmax_scores(self):
        """Test that softmax scoring also yields consistent paths."""
        decoded = decode(random_logits(6, 8, 8), self.h, mode="jsps", scores="softmax")
        self.assertEqual(consistency_rate(decoded, self.h), 1.0)
        with self.assertRaises(ValidationError):
            decode(random_logits(6), self.h, scores="tanh")

    def test_channel_checks(self):
        """Test that level and channel mismatches are rejected."""
        with self.assertRaises(ValidationError):
            jsps_decode(random_logits(7)[:2], self.h)
        bad = random_logits(7)
        bad[1] = np.zeros((1, 8, 4, 4))
        with self.assertRaises(ShapeError):
            jsps_decode(bad, self.h)
        with self.assertRaises(ValidationError):
            decode(random_logits(7), self.h, mode="beam")

    def test_pixel_permutation_equivariance(self):
        """Test that shuffling logit pixels shuffles the decoded rasters the same way, for both modes."""
        logits = random_logits(9, 4, 4, batch=2)
        order = np.random.default_rng(10).permutation(32)
        shuffled = [
            l.transpose(1, 0, 2, 3).reshape(c, 32)[:, order].reshape(c, 2, 4, 4).transpose(1, 0, 2, 3)
            for l, c in zip(logits, SIZES)
        ]
        for mode in ("argmax", "jsps"):
            with self.subTest(mode=mode):
                reference = decode(logits, self.h, mode=mode)
                permuted = decode(shuffled, self.h, mode=mode)
                for level in range(3):
                    np.testing.assert_array_equal(
                        permuted[level], reference[level].reshape(32)[order].reshape(2, 4, 4)
                    )

    def test_decode_dispatch(self):
        """Test that decode() routes to argmax and jsps."""
        logits = random_logits(8)
        np.testing.assert_array_equal(decode(logits, self.h, mode="argmax")[2], argmax_per_level(logits)[2])
        np.testing.assert_array_equal(decode(logits, self.h)[2], jsps_decode(logits, self.h)[2])


class TestOutputs(unittest.TestCase):
    def setUp(self):
        self.h = load_hierarchy(fixture_path("mm5b.json"))
        self.tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self.tmp.cleanup)
        self.dir = Path(self.tmp.name)

    def test_rasters_round_trip(self):
        """Test that written level rasters and previews read back."""
        labels = jsps_decode(random_logits(9, 4, 4, batch=2), self.h)
        written = write_level_rasters(labels, self.dir / "pred", self.h, previews=True)
        self.assertEqual(len(written), 3 + 3 * 2)
        again = read_level_rasters(self.dir / "pred", self.h)
        for level in range(3):
            np.testing.assert_array_equal(again[level], labels[level])
        with Image.open(self.dir / "pred" / "previews" / "L3_1.png") as image:
            self.assertEqual(image.mode, "P")
            self.assertEqual(image.size, (4, 4))

    def test_partial_rasters(self):
        """Test that a fine-only prediction reads back with coarse levels absent."""
        labels = LevelLabels.single(np.zeros((1, 2, 2), dtype=np.int64), 2, 3)
        write_level_rasters(labels, self.dir / "flat", self.h)
        again = read_level_rasters(self.dir / "flat", self.h)
        self.assertEqual(again.present, (2,))
        with self.assertRaises(StorageError):
            read_level_rasters(self.dir / "empty", self.h)

    def test_logits_round_trip(self):
        """Test that written logits read back and are checked against the hierarchy."""
        logits = random_logits(10)
        write_level_logits([Tensor(l) for l in logits], self.dir / "logits")
        for a, b in zip(read_level_logits(self.dir / "logits", self.h), logits):
            np.testing.assert_array_equal(a, b)
        with self.assertRaises(ShapeError):
            read_level_logits(self.dir / "logits", load_hierarchy(fixture_path("crop.json")))

    def test_preview_palette(self):
        """Test that previews use the hierarchy palette and index 255 for ignore."""
        raster = np.array([[0, 255], [1, 0]])
        image = render_preview(raster, self.h, 0)
        self.assertEqual(image.getpixel((0, 0)), 0)
        self.assertEqual(image.getpixel((1, 0)), 255)
        self.assertEqual(tuple(image.getpalette()[:3]), self.h.color_of(0, 0))


if __name__ == "__main__":
    unittest.main()
