import unittest

from advemu.bench import V100_MS_PER_BATCH, DomainSpec, bench_inference, environment, extrapolate_runtime
from advemu.exceptions import ConfigError
from advemu.unet import UNetConfig, build


class TestDomainSpec(unittest.TestCase):

    def test_conus(self):
        domain = DomainSpec.conus()
        self.assertEqual(domain.total_patches, 17568)
        self.assertEqual(domain.batches, 549)

    def test_conus_reference_runtime(self):
        seconds = extrapolate_runtime(V100_MS_PER_BATCH, DomainSpec.conus())
        self.assertAlmostEqual(seconds, 2.6, delta=0.026)

    def test_single_batch(self):
        domain = DomainSpec(rows=1, cols=1, levels=16, patch_depth=16, species=1, batch_size=32)
        self.assertEqual(domain.batches, 1)
        self.assertAlmostEqual(extrapolate_runtime(12.5, domain), 0.0125)

    def test_partial_batches_round_up(self):
        self.assertEqual(DomainSpec(species=1, batch_size=5).batches, 5)

    def test_runtime_grows_with_species(self):
        runtimes = [extrapolate_runtime(4.0, DomainSpec(species=s)) for s in (1, 2, 4, 8, 16)]
        self.assertTrue(all(b > a for a, b in zip(runtimes, runtimes[1:])))
        self.assertAlmostEqual(runtimes[-1], 2 * runtimes[-2])

    def test_validation(self):
        with self.assertRaises(ConfigError) as context:
            DomainSpec(levels=20, patch_depth=16)
        self.assertEqual(context.exception.key, "bench.domain.levels")
        with self.assertRaises(ConfigError):
            DomainSpec(species=0)


class TestBenchInference(unittest.TestCase):

    def setUp(self):
        self.model = build(UNetConfig(levels=2, base_channels=2, patch=(4, 4, 4)))

    def test_result_fields(self):
        result = bench_inference(self.model, batch_size=2, repeats=3, warmup=1)
        self.assertLessEqual(result["ms_min"], result["ms_per_batch"])
        self.assertLessEqual(result["ms_per_batch"], result["ms_max"])
        self.assertGreater(result["ms_min"], 0.0)
        self.assertEqual((result["batch_size"], result["repeats"], result["warmup"]), (2, 3, 1))
        self.assertEqual(result["environment"]["device"], "cpu")
        self.assertGreaterEqual(result["environment"]["threads"], 1)

    def test_single_repeat_without_warmup(self):
        result = bench_inference(self.model, batch_size=1, repeats=1, warmup=0)
        self.assertEqual(result["ms_min"], result["ms_max"])

    def test_invalid_settings(self):
        with self.assertRaises(ConfigError):
            bench_inference(self.model, repeats=0)

    def test_environment(self):
        self.assertTrue({"device", "threads", "torch", "python"} <= set(environment()))


if __name__ == "__main__":
    unittest.main()
