import unittest

import numpy as np

from advemu.exceptions import ConfigError, DataError, ShapeError
from advemu.grid import GridSpec, SpeciesField, SpeciesKind
from advemu.patches import (
    PatchMeta,
    SplitPolicy,
    Thresholds,
    assemble_patches,
    classify_extreme,
    extract_patches,
    split_dataset,
)


class TestExtractPatches(unittest.TestCase):

    def test_default_domain(self):
        field = SpeciesField(np.zeros((128, 192, 16), dtype=np.float32), species_id=3)
        patches = extract_patches(field)
        self.assertEqual(len(patches), 24)
        for index, patch in enumerate(patches):
            self.assertEqual(patch.values.shape, (32, 32, 16))
            self.assertEqual(patch.patch_index, index)
            self.assertEqual((patch.patch_row, patch.patch_col), divmod(index, 6))
            self.assertEqual(patch.species_id, 3)

    def test_row_major_placement(self):
        values = np.arange(8 * 12 * 2, dtype=np.float64).reshape(8, 12, 2)
        patches = extract_patches(values, rows=2, cols=3, depth=2)
        np.testing.assert_array_equal(patches[0].values, values[:4, :4])
        np.testing.assert_array_equal(patches[2].values, values[:4, 8:])
        np.testing.assert_array_equal(patches[4].values, values[4:, 4:8])

    def test_reassembly_is_exact(self):
        values = np.random.default_rng(0).random((8, 12, 4)).astype(np.float32)
        patches = extract_patches(values, rows=4, cols=6, depth=4)
        np.testing.assert_array_equal(assemble_patches(patches, 4, 6), values)

    def test_deep_fields_keep_lowest_levels(self):
        values = np.random.default_rng(1).random((8, 12, 20))
        patches = extract_patches(values, rows=4, cols=6)
        self.assertEqual(patches[0].values.shape, (2, 2, 16))
        np.testing.assert_array_equal(assemble_patches(patches, 4, 6), values[:, :, :16])

    def test_large_domain(self):
        patches = extract_patches(np.zeros((232, 396, 2), dtype=np.float32), rows=4, cols=6)
        self.assertEqual(patches[0].values.shape, (58, 66, 2))

    def test_indivisible_domain(self):
        with self.assertRaises(ShapeError) as context:
            extract_patches(np.zeros((128, 192, 2)), rows=5, cols=6)
        self.assertEqual(context.exception.axis, "x")
        self.assertIn("232", str(context.exception))

    def test_grid_check(self):
        grid = GridSpec(8, 12, 2, 1.0, 1.0)
        with self.assertRaises(ShapeError):
            extract_patches(np.zeros((8, 10, 2)), grid=grid, rows=2, cols=2)


class TestClassifyExtreme(unittest.TestCase):

    def setUp(self):
        self.thr = Thresholds()

    def test_ozone_threshold_is_inclusive(self):
        self.assertTrue(classify_extreme(np.full((2, 2, 2), 0.055), SpeciesKind.OZONE, self.thr))
        self.assertFalse(classify_extreme(np.full((2, 2, 2), 0.0549), SpeciesKind.OZONE, self.thr))

    def test_single_precision_boundary(self):
        patch = np.full((2, 2, 2), 0.055, dtype=np.float32)
        self.assertTrue(classify_extreme(patch, "ozone_kind", self.thr))

    def test_pm_threshold(self):
        patch = np.full((2, 2, 2), 5.0)
        self.assertFalse(classify_extreme(patch, SpeciesKind.PM, self.thr))
        patch[1, 0, 1] = 12.1
        self.assertTrue(classify_extreme(patch, SpeciesKind.PM, self.thr))

    def test_monotone(self):
        patch = np.random.default_rng(2).uniform(0.0, 0.06, (4, 4, 2))
        if classify_extreme(patch, SpeciesKind.OZONE, self.thr):
            self.assertTrue(classify_extreme(patch * 1.5, SpeciesKind.OZONE, self.thr))
        self.assertTrue(classify_extreme(patch + 0.06, SpeciesKind.OZONE, self.thr))

    def test_unknown_kind(self):
        with self.assertRaises(DataError):
            classify_extreme(np.zeros((2, 2, 2)), "nox_kind", self.thr)

    def test_threshold_validation(self):
        with self.assertRaises(ConfigError) as context:
            Thresholds(ozone_ppm=0.0)
        self.assertEqual(context.exception.key, "thresholds.ozone_ppm")


class TestSplit(unittest.TestCase):

    def setUp(self):
        self.metas = [
            PatchMeta(0, SpeciesKind.OZONE, t, r, c)
            for t in range(7) for r in range(4) for c in range(6)
        ]

    def test_sizes(self):
        splits = split_dataset(self.metas, SplitPolicy())
        self.assertEqual(len(splits["test"]), 72)
        self.assertEqual(len(splits["val"]), 19)
        self.assertEqual(len(splits["train"]), 77)

    def test_partition(self):
        splits = split_dataset(self.metas, SplitPolicy(seed=3))
        keys = [m.key() for name in ("train", "val", "test") for m in splits[name]]
        self.assertEqual(len(keys), len(self.metas))
        self.assertEqual(set(keys), {m.key() for m in self.metas})

    def test_test_split_is_later_in_time(self):
        splits = split_dataset(self.metas, SplitPolicy())
        last_pool = max(m.time_index for m in splits["train"] + splits["val"])
        self.assertLess(last_pool, min(m.time_index for m in splits["test"]))

    def test_deterministic(self):
        first = split_dataset(self.metas, SplitPolicy(seed=5))
        second = split_dataset(self.metas, SplitPolicy(seed=5))
        self.assertEqual(first["val"], second["val"])
        other = split_dataset(self.metas, SplitPolicy(seed=6))
        self.assertNotEqual(first["val"], other["val"])

    def test_too_few_timesteps(self):
        metas = [m for m in self.metas if m.time_index < 6]
        with self.assertRaises(DataError) as context:
            split_dataset(metas, SplitPolicy())
        self.assertIn("cut_timesteps", str(context.exception))

    def test_custom_cut(self):
        metas = [m for m in self.metas if m.time_index < 3]
        splits = split_dataset(metas, SplitPolicy(cut_timesteps=2, val_fraction=0.0))
        self.assertEqual(len(splits["train"]), 48)
        self.assertEqual(len(splits["val"]), 0)
        self.assertEqual(len(splits["test"]), 24)

    def test_policy_validation(self):
        with self.assertRaises(ConfigError):
            SplitPolicy(val_fraction=1.0)
        with self.assertRaises(ConfigError):
            SplitPolicy(trainval_parts=7)


if __name__ == "__main__":
    unittest.main()
