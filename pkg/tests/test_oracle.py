import unittest

import numpy as np

from advemu.config import GridConfig
from advemu.exceptions import CFLError, ConfigError, DataError, NumericError
from advemu.grid import GridSpec, SpeciesField, WindField, total_mass
from advemu.oracle import StepParams, advect_fv, advect_sl, courant_number, gen_dataset, step
from advemu.synth import SynthConfig, gen_species_init, gen_stream, wind_from_stream
from advemu.transform import log_chain, minmax_fit


def impulse(grid, index=(3, 2, 1), dtype=np.float64):
    values = np.zeros(grid.shape, dtype=dtype)
    values[index] = 1.0
    return SpeciesField(values, species_id=0)


class TestStepParams(unittest.TestCase):

    def test_defaults(self):
        p = StepParams()
        self.assertEqual((p.dt, p.scheme, p.steps_per_pair), (600.0, "fv_upwind", 3))

    def test_validation(self):
        with self.assertRaises(ConfigError):
            StepParams(dt=0.0)
        with self.assertRaises(ConfigError):
            StepParams(scheme="spectral")
        with self.assertRaises(ConfigError):
            StepParams(steps_per_pair=0)


class TestFiniteVolume(unittest.TestCase):

    def setUp(self):
        self.grid = GridSpec(16, 24, 4, 12000.0, 12000.0, (50.0, 80.0, 120.0, 200.0))
        self.wind = wind_from_stream(gen_stream(self.grid, SynthConfig(seed=4)), self.grid)
        self.p = StepParams(dt=600.0)
        field = gen_species_init(self.grid, SynthConfig(seed=4, n_species=2))[1]
        self.field = field.with_values(field.values.astype(np.float64))

    def test_zero_wind_is_identity(self):
        field = gen_species_init(self.grid, SynthConfig(n_species=1))[0]
        out = advect_fv(field, WindField.zeros(self.grid), self.grid, self.p)
        np.testing.assert_array_equal(out.values, field.values)
        self.assertEqual(out.values.dtype, np.float32)

    def test_unit_cfl_shifts_one_cell(self):
        grid = GridSpec(8, 6, 3, 1000.0, 1000.0)
        wind = WindField.uniform(grid, u=10.0)
        c = impulse(grid)
        out = advect_fv(c, wind, grid, StepParams(dt=100.0))
        np.testing.assert_array_equal(out.values, np.roll(c.values, 1, axis=0))

    def test_cfl_violation(self):
        grid = GridSpec(8, 6, 3, 1000.0, 1000.0)
        wind = WindField.uniform(grid, u=20.0)
        with self.assertRaises(CFLError) as context:
            advect_fv(impulse(grid), wind, grid, StepParams(dt=100.0))
        self.assertAlmostEqual(context.exception.cfl, 2.0)

    def test_diagonal_impulse_stays_non_negative(self):
        """Test if a diagonal wind at an outflow Courant number below one keeps an impulse non-negative."""
        grid = GridSpec(8, 6, 3, 1000.0, 1000.0)
        wind = WindField.uniform(grid, u=4.0, v=4.0)
        self.assertAlmostEqual(courant_number(wind, grid, 100.0), 0.8)
        c = impulse(grid)
        out = advect_fv(c, wind, grid, StepParams(dt=100.0)).values
        self.assertGreaterEqual(out.min(), 0.0)
        self.assertAlmostEqual(out[3, 2, 1], 0.2)
        self.assertAlmostEqual(out[4, 2, 1], 0.4)
        self.assertAlmostEqual(out[3, 3, 1], 0.4)

    def test_diagonal_cfl_sums_over_axes(self):
        """Test if the CFL gate sums the Courant numbers of both draining faces."""
        grid = GridSpec(8, 6, 3, 1000.0, 1000.0)
        wind = WindField.uniform(grid, u=10.0, v=10.0)
        with self.assertRaises(CFLError) as context:
            advect_fv(impulse(grid), wind, grid, StepParams(dt=100.0))
        self.assertAlmostEqual(context.exception.cfl, 2.0)

    def test_nan_input(self):
        values = np.ones(self.grid.shape)
        values[1, 1, 1] = np.nan
        with self.assertRaises(NumericError):
            advect_fv(values, self.wind, self.grid, self.p)

    def test_mass_conservation(self):
        before = total_mass(self.field, self.grid)
        out = advect_fv(self.field, self.wind, self.grid, self.p)
        self.assertLessEqual(abs(total_mass(out, self.grid) - before) / before, 1e-10)

        c = self.field
        for _ in range(100):
            c = advect_fv(c, self.wind, self.grid, self.p)
        self.assertLessEqual(abs(total_mass(c, self.grid) - before) / before, 1e-8)

    def test_mass_drift_at_default_grid(self):
        """Test if a hundred steps on the default desk grid keep the total mass to round-off."""
        grid = GridConfig().spec()
        self.assertEqual(grid.shape, (128, 192, 16))
        synth = SynthConfig(seed=0, n_species=1)
        wind = wind_from_stream(gen_stream(grid, synth), grid)
        self.assertLessEqual(courant_number(wind, grid, self.p.dt), 1.0)
        field = gen_species_init(grid, synth)[0]
        c = field.with_values(field.values.astype(np.float64))
        before = total_mass(c, grid)
        for _ in range(100):
            c = advect_fv(c, wind, grid, self.p)
        self.assertLessEqual(abs(total_mass(c, grid) - before) / before, 1e-8)
        self.assertGreaterEqual(c.values.min(), 0.0)

    def test_constant_is_preserved(self):
        c = SpeciesField(np.full(self.grid.shape, 3.0), species_id=0)
        out = advect_fv(c, self.wind, self.grid, self.p)
        np.testing.assert_allclose(out.values, 3.0, rtol=0, atol=1e-10)

    def test_linear_scaling(self):
        field = gen_species_init(self.grid, SynthConfig(seed=4, n_species=1))[0]
        base = advect_fv(field, self.wind, self.grid, self.p).values.astype(np.float64)
        for a in (0.1, 7.0, 1000.0):
            scaled = field.with_values((a * field.values).astype(np.float32))
            out = advect_fv(scaled, self.wind, self.grid, self.p).values.astype(np.float64)
            error = np.abs(out - a * base).max() / np.abs(a * base).max()
            self.assertLessEqual(error, 1e-5)

    def test_steps_compose(self):
        p = StepParams(dt=600.0, steps_per_pair=3)
        expected = self.field
        for _ in range(3):
            expected = advect_fv(expected, self.wind, self.grid, p)
        np.testing.assert_array_equal(step(self.field, self.wind, self.grid, p).values, expected.values)


class TestSemiLagrangian(unittest.TestCase):

    def setUp(self):
        self.grid = GridSpec(16, 24, 4, 12000.0, 12000.0, (50.0, 80.0, 120.0, 200.0))
        self.wind = wind_from_stream(gen_stream(self.grid, SynthConfig(seed=9)), self.grid)
        self.p = StepParams(dt=600.0, scheme="semi_lagrangian")

    def test_zero_wind_is_identity(self):
        c = impulse(self.grid)
        out = advect_sl(c, WindField.zeros(self.grid), self.grid, self.p)
        np.testing.assert_allclose(out.values, c.values, rtol=0, atol=1e-12)

    def test_whole_cell_displacement(self):
        grid = GridSpec(8, 6, 3, 1000.0, 1000.0)
        c = impulse(grid)
        out = advect_sl(c, WindField.uniform(grid, u=10.0), grid, StepParams(dt=100.0, scheme="semi_lagrangian"))
        np.testing.assert_allclose(out.values, np.roll(c.values, 1, axis=0), rtol=0, atol=1e-12)

    def test_blob_centroid_moves_with_the_wind(self):
        grid = GridSpec(32, 4, 1, 1000.0, 1000.0)
        x = np.arange(grid.nx).reshape(-1, 1, 1)
        values = np.broadcast_to(np.exp(-((x - 16.0) / 3.0) ** 2), grid.shape).astype(np.float64)
        c = SpeciesField(values, species_id=0)
        out = advect_sl(c, WindField.uniform(grid, u=4.0), grid, StepParams(dt=100.0, scheme="semi_lagrangian"))

        def centroid(q):
            column = q[:, 0, 0]
            return (np.arange(grid.nx) * column).sum() / column.sum()

        self.assertLess(abs(centroid(out.values) - centroid(values) - 0.4), 0.5)

    def test_affine_invariance(self):
        field = gen_species_init(self.grid, SynthConfig(seed=9, n_species=1))[0]
        base = advect_sl(field, self.wind, self.grid, self.p).values.astype(np.float64)
        for a, b in ((2.0, 0.3), (0.01, 5.0)):
            shifted = field.with_values((a * field.values + b).astype(np.float32))
            out = advect_sl(shifted, self.wind, self.grid, self.p).values.astype(np.float64)
            self.assertLessEqual(np.abs(out - (a * base + b)).max(), 1e-5)

    def test_log_chain_commutes_at_second_order(self):
        # Interpolating a nonlinear map of the field differs from mapping the
        # interpolated field by a term that shrinks with the square of the spacing.
        errors = []
        for n in (30, 90):
            grid = GridSpec(n, 2, 1, 30000.0 / n, 1000.0)
            x = (np.arange(n) * grid.dx).reshape(-1, 1, 1)
            values = np.broadcast_to(1.0 + np.exp(-((x - 15000.0) / 3000.0) ** 2), grid.shape).astype(np.float64)
            c = SpeciesField(values, species_id=0)
            params = minmax_fit([c], "per_species")
            wind = WindField.uniform(grid, u=5.0)
            p = StepParams(dt=100.0, scheme="semi_lagrangian")
            advected_then_mapped = log_chain(advect_sl(c, wind, grid, p), params)
            mapped_then_advected = advect_sl(log_chain(c, params), wind, grid, p).values
            errors.append(np.abs(advected_then_mapped - mapped_then_advected).max())
        self.assertGreater(errors[0], 0.0)
        self.assertLess(errors[1], errors[0] / 3.0)


class TestDataset(unittest.TestCase):

    def setUp(self):
        self.grid = GridSpec(8, 12, 3, 12000.0, 12000.0, (50.0, 100.0, 200.0))
        self.p = StepParams(dt=600.0, steps_per_pair=2)

    def test_too_few_timesteps(self):
        with self.assertRaises(DataError):
            gen_dataset(self.grid, SynthConfig(n_species=1), self.p, 1)

    def test_ordering_and_chaining(self):
        synth = SynthConfig(n_species=3, module_noise=0.0)
        pairs = gen_dataset(self.grid, synth, self.p, 3)
        self.assertEqual(len(pairs), 9)
        self.assertEqual([(r.time_index, r.species_id) for r in pairs],
                         [(t, s) for t in range(3) for s in range(3)])
        for s in range(3):
            np.testing.assert_array_equal(pairs[3 + s].input.values, pairs[s].output.values)

    def test_pairs_conserve_mass(self):
        synth = SynthConfig(n_species=2)
        for record in gen_dataset(self.grid, synth, StepParams(steps_per_pair=1), 3):
            before = total_mass(record.input, self.grid)
            after = total_mass(record.output, self.grid)
            self.assertLessEqual(abs(after - before) / before, 1e-10)

    def test_thread_count_does_not_change_results(self):
        synth = SynthConfig(n_species=4, seed=21)
        single = gen_dataset(self.grid, synth, self.p, 2, threads=1, dtype=np.float32)
        pooled = gen_dataset(self.grid, synth, self.p, 2, threads=3, dtype=np.float32)
        for a, b in zip(single, pooled):
            np.testing.assert_array_equal(a.input.values, b.input.values)
            np.testing.assert_array_equal(a.output.values, b.output.values)
        self.assertEqual(single[0].output.values.dtype, np.float32)

    def test_courant_number(self):
        wind = WindField.uniform(self.grid, u=3.0, v=-6.0)
        self.assertAlmostEqual(courant_number(wind, self.grid, 600.0), (3.0 + 6.0) * 600.0 / 12000.0)
        along_x = WindField.uniform(self.grid, u=-6.0)
        self.assertAlmostEqual(courant_number(along_x, self.grid, 600.0), 6.0 * 600.0 / 12000.0)


if __name__ == "__main__":
    unittest.main()
