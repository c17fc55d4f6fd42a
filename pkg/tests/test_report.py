import json
import math
import shutil
import tempfile
import unittest
from pathlib import Path

import numpy as np
import pandas as pd

from advemu.exceptions import ConfigError, DataError, NumericError
from advemu.report import (
    SLICE_COLUMNS,
    HistConfig,
    MetricsReport,
    emit_report,
    histogram_csv,
    histogram_stages,
    occupied_span,
    root_sweep,
    sample_slices,
)


def make_report(**overrides):
    strata = {"all": 0.1, "extreme": 0.2, "nonextreme": 0.05}
    data = {
        "rmse": {"root_space": dict(strata)},
        "persistence": {"root_space": {"all": 0.2, "extreme": 0.4, "nonextreme": 0.1}},
        "skill": {"root_space": {"all": 0.5, "extreme": 0.5, "nonextreme": 0.5}},
        "counts": {"all": 10, "extreme": 3, "non_extreme": 7},
        "rmse_per_level": [{"level": 0, "rmse": 0.01}],
        "mass": [{"species_id": 0, "mass_pct_diff": 1.5, "included": 10, "excluded": 0}],
        "mass_pct_diff_mean": 1.5,
        "config": {"seed": 0},
    }
    data.update(overrides)
    return MetricsReport(**data)


class TestHistogram(unittest.TestCase):

    def test_two_values_two_bins(self):
        table = histogram_csv(np.array([0.0, 1.0]), bins=2)
        self.assertEqual(list(table["count"]), [1, 1])
        self.assertEqual(list(table["bin_lo"]), [0.0, 0.5])
        self.assertEqual(list(table["bin_hi"]), [0.5, 1.0])

    def test_constant_values_fill_one_bin(self):
        table = histogram_csv(np.full(20, 0.3), bins=10)
        self.assertEqual(table["count"].sum(), 20)
        self.assertEqual(occupied_span(table), 1)

    def test_log_column(self):
        table = histogram_csv(np.array([0.0, 0.0, 0.0, 1.0]), bins=3, log_y=True)
        self.assertAlmostEqual(table.loc[0, "log10_count"], math.log10(3))
        self.assertTrue(math.isnan(table.loc[1, "log10_count"]))

    def test_fixed_range(self):
        table = histogram_csv(np.array([0.1]), bins=4, value_range=(-1.0, 1.0))
        self.assertEqual(list(table["count"]), [0, 0, 1, 0])

    def test_invalid_values(self):
        with self.assertRaises(DataError):
            histogram_csv(np.array([]))
        with self.assertRaises(NumericError):
            histogram_csv(np.array([0.0, np.nan]))

    def test_root_difference_spreads_small_residuals(self):
        rng = np.random.default_rng(0)
        inputs = rng.random(4000)
        outputs = inputs + rng.uniform(-0.02, 0.02, 4000)
        stages = histogram_stages(inputs, outputs, n=3, bins=50)
        self.assertEqual(set(stages), {"input", "output", "difference", "root_difference"})
        self.assertGreater(occupied_span(stages["root_difference"]), occupied_span(stages["difference"]))

    def test_root_sweep_widens_with_root(self):
        rng = np.random.default_rng(1)
        inputs = rng.random(4000)
        outputs = inputs + rng.uniform(-0.02, 0.02, 4000)
        sweep = root_sweep(inputs, outputs, roots=(1, 3, 9), bins=50)
        spans = [occupied_span(sweep[n]) for n in (1, 3, 9)]
        self.assertTrue(spans[0] < spans[1] <= spans[2])

    def test_config_validation(self):
        self.assertEqual(HistConfig().bins, 50)
        with self.assertRaises(ConfigError):
            HistConfig(bins=0)
        with self.assertRaises(ConfigError):
            HistConfig(roots=(2,))


class TestMetricsReport(unittest.TestCase):

    def setUp(self):
        self.tmp = tempfile.mkdtemp()

    def tearDown(self):
        shutil.rmtree(self.tmp)

    def test_counts_must_add_up(self):
        with self.assertRaises(DataError):
            make_report(counts={"all": 10, "extreme": 3, "non_extreme": 6})

    def test_non_finite_entries(self):
        with self.assertRaises(NumericError):
            make_report(mass_pct_diff_mean=float("nan"))

    def test_absent_strata_are_allowed(self):
        report = make_report(rmse={"root_space": {"all": 0.1, "extreme": None, "nonextreme": 0.1}})
        self.assertIsNone(report.rmse["root_space"]["extreme"])

    def test_emit_is_reproducible(self):
        path = Path(self.tmp) / "eval" / "report.json"
        json_path, text_path, first = emit_report(make_report(), path)
        _, _, second = emit_report(make_report(), path)
        self.assertEqual(first, second)
        data = json.loads(json_path.read_text())
        self.assertEqual(data["counts"]["extreme"], 3)
        text = text_path.read_text()
        self.assertIn("mass percent difference", text)

    def test_summary_marks_absent_strata(self):
        report = make_report(rmse={"root_space": {"all": 0.1, "extreme": None, "nonextreme": 0.1}})
        _, text_path, _ = emit_report(report, Path(self.tmp) / "report.json")
        self.assertIn("absent", text_path.read_text())


class TestSampleSlices(unittest.TestCase):

    def setUp(self):
        rng = np.random.default_rng(4)
        self.inputs = rng.random((5, 3, 2, 4))
        self.truths = self.inputs + 0.01
        self.preds = self.inputs - 0.01
        self.metas = pd.DataFrame({"species_id": [1, 0, 1, 0, 1], "extreme": [True, False, False, False, True]})

    def test_first_sample_of_each_group(self):
        """Test if every species and stratum contributes its first sample at the chosen level."""
        slices = sample_slices(self.inputs, self.truths, self.preds, self.metas, level=3)
        self.assertEqual(list(slices.columns), SLICE_COLUMNS)
        self.assertEqual(len(slices), 3 * 3 * 2)
        firsts = slices.groupby(["species_id", "stratum"])["sample"].unique()
        self.assertEqual(
            {key: list(value) for key, value in firsts.items()},
            {(0, "nonextreme"): [1], (1, "extreme"): [0], (1, "nonextreme"): [2]},
        )
        cell = slices[(slices["sample"] == 2) & (slices["i"] == 2) & (slices["j"] == 1)].iloc[0]
        self.assertAlmostEqual(cell["input"], self.inputs[2, 2, 1, 3])
        self.assertAlmostEqual(cell["truth"], self.truths[2, 2, 1, 3])
        self.assertAlmostEqual(cell["prediction"], self.preds[2, 2, 1, 3])

    def test_more_samples_per_group(self):
        """Test if a larger group size takes samples in dataset order."""
        slices = sample_slices(self.inputs, self.truths, self.preds, self.metas, per_group=2)
        self.assertEqual(sorted(slices.loc[slices["stratum"] == "extreme", "sample"].unique()), [0, 4])
        self.assertEqual(set(slices["level"]), {0})

    def test_level_outside_depth(self):
        """Test if a slice level beyond the patch depth is rejected."""
        with self.assertRaises(DataError):
            sample_slices(self.inputs, self.truths, self.preds, self.metas, level=4)


if __name__ == "__main__":
    unittest.main()
