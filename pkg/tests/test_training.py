import os
import shutil
import tempfile
import unittest

import numpy as np
import pandas as pd
import torch

from advemu.dataset import AQGDataset
from advemu.exceptions import (
    CheckpointMismatchError,
    ChecksumError,
    ConfigError,
    DataError,
    FormatError,
    NonFiniteLossError,
)
from advemu.grid import SpeciesKind
from advemu.patches import PatchMeta, PatchSample
from advemu.training import TrainConfig, evaluate, gradient_check, load_checkpoint, save_checkpoint, to_tensors, train
from advemu.unet import UNetConfig, build


def tiny_config(**overrides):
    return UNetConfig(**{"levels": 4, "base_channels": 2, "in_channels": 5, "patch": (8, 8, 8), **overrides})


def make_dataset(count, target=0.05, seed=0):
    rng = np.random.default_rng(seed)
    samples = [
        PatchSample(
            rng.random((5, 8, 8, 8)).astype(np.float32),
            np.full((8, 8, 8), target, dtype=np.float32),
            PatchMeta(index % 2, SpeciesKind.OZONE, index, 0, 0),
        )
        for index in range(count)
    ]
    return AQGDataset.from_samples(samples)


def same_parameters(a, b):
    return all(torch.equal(p, q) for p, q in zip(a.parameters(), b.parameters()))


class TestTrainConfig(unittest.TestCase):

    def test_defaults(self):
        tc = TrainConfig()
        self.assertEqual((tc.lr, tc.beta1, tc.beta2, tc.eps), (0.001, 0.9, 0.999, 1e-8))
        self.assertEqual((tc.batch_size, tc.epochs), (32, 20))

    def test_validation(self):
        with self.assertRaises(ConfigError) as context:
            TrainConfig(lr=-1.0)
        self.assertEqual(context.exception.key, "train.lr")
        with self.assertRaises(ConfigError):
            TrainConfig(batch_size=0)
        with self.assertRaises(ConfigError):
            TrainConfig(beta2=1.0)


class TestTrain(unittest.TestCase):

    def setUp(self):
        self.datasets = {"train": make_dataset(16, seed=0), "val": make_dataset(8, seed=1)}

    def test_to_tensors(self):
        x, y = to_tensors(self.datasets["train"])
        self.assertEqual(tuple(x.shape), (16, 5, 8, 8, 8))
        self.assertEqual(tuple(y.shape), (16, 1, 8, 8, 8))
        self.assertEqual(y.dtype, torch.float32)

    def test_zero_epochs_keeps_parameters(self):
        model, history = train(build(tiny_config()), self.datasets, TrainConfig(epochs=0))
        self.assertEqual(len(history), 1)
        self.assertEqual(list(history.columns), ["epoch", "train_mse", "val_mse", "frac_beyond_unit"])
        self.assertTrue(same_parameters(model, build(tiny_config())))
        self.assertAlmostEqual(history.loc[0, "val_mse"], 0.05**2, places=8)

    def test_zero_learning_rate_keeps_parameters(self):
        model, history = train(build(tiny_config()), self.datasets, TrainConfig(lr=0.0, epochs=2, batch_size=8))
        self.assertEqual(list(history["epoch"]), [0, 1, 2])
        self.assertTrue(same_parameters(model, build(tiny_config())))

    def test_same_seed_same_history(self):
        tc = TrainConfig(epochs=2, batch_size=4, seed=3)
        _, first = train(build(tiny_config()), self.datasets, tc)
        _, second = train(build(tiny_config()), self.datasets, tc)
        pd.testing.assert_frame_equal(first, second)

    def test_overfits_a_small_dataset(self):
        datasets = {"train": make_dataset(32, seed=2), "val": make_dataset(8, seed=3)}
        model, history = train(build(tiny_config()), datasets, TrainConfig(lr=0.003, epochs=200, batch_size=32))
        x, y = to_tensors(datasets["train"])
        mse, beyond = evaluate(model, x, y)
        self.assertLess(mse, 1e-4)
        self.assertEqual(beyond, 0.0)
        self.assertLess(history["val_mse"].min(), history.loc[0, "val_mse"])

    def test_best_validation_state_is_kept(self):
        model, history = train(build(tiny_config()), self.datasets, TrainConfig(epochs=3, batch_size=8))
        x, y = to_tensors(self.datasets["val"])
        mse, _ = evaluate(model, x, y)
        self.assertAlmostEqual(mse, history["val_mse"].min(), places=9)

    def test_empty_split(self):
        datasets = {"train": self.datasets["train"],
                    "val": AQGDataset.from_samples([], channels=5, patch_shape=(8, 8, 8))}
        with self.assertRaises(DataError):
            train(build(tiny_config()), datasets, TrainConfig(epochs=1))

    def test_non_finite_loss_names_the_batch(self):
        train_set = make_dataset(4, seed=4)
        train_set.records["target"][2, 0, 0, 0] = np.nan
        datasets = {"train": train_set, "val": self.datasets["val"]}
        with self.assertRaises(NonFiniteLossError) as context:
            train(build(tiny_config()), datasets, TrainConfig(epochs=1, batch_size=4))
        self.assertEqual(len(context.exception.batch_meta), 4)
        self.assertIn("time_index", context.exception.batch_meta.columns)


class TestCheckpoint(unittest.TestCase):

    def setUp(self):
        self.tmp = tempfile.mkdtemp()
        self.path = os.path.join(self.tmp, "model", "best.ckpt")
        self.model = build(tiny_config(zero_init_final=False, seed=7))

    def tearDown(self):
        shutil.rmtree(self.tmp)

    def test_roundtrip(self):
        digest = save_checkpoint(self.model, self.path, epoch=4, extra={"val_mse": 0.5})
        model, header = load_checkpoint(self.path, tiny_config(zero_init_final=False))
        self.assertTrue(same_parameters(model, self.model))
        self.assertEqual(header["epoch"], 4)
        self.assertEqual(header["extra"], {"val_mse": 0.5})
        self.assertEqual(len(digest), 64)
        x = torch.rand((2, 5, 8, 8, 8))
        model.eval()
        self.model.eval()
        with torch.no_grad():
            self.assertTrue(torch.equal(model(x), self.model(x)))

    def test_deterministic_bytes(self):
        first = save_checkpoint(self.model, self.path)
        second = save_checkpoint(build(tiny_config(zero_init_final=False, seed=7)), self.path)
        self.assertEqual(first, second)

    def test_corrupted_content(self):
        save_checkpoint(self.model, self.path)
        size = os.path.getsize(self.path)
        with open(self.path, "r+b") as handle:
            handle.seek(size - 100)
            byte = handle.read(1)
            handle.seek(size - 100)
            handle.write(bytes([byte[0] ^ 0x01]))
        with self.assertRaises(ChecksumError):
            load_checkpoint(self.path)

    def test_bad_magic(self):
        save_checkpoint(self.model, self.path)
        with open(self.path, "r+b") as handle:
            handle.write(b"NOPE")
        with self.assertRaises(FormatError) as context:
            load_checkpoint(self.path)
        self.assertEqual(context.exception.offset, 0)

    def test_unsupported_version(self):
        save_checkpoint(self.model, self.path)
        with open(self.path, "r+b") as handle:
            handle.seek(4)
            handle.write(np.array([9], dtype="<u4").tobytes())
        with self.assertRaises(FormatError) as context:
            load_checkpoint(self.path)
        self.assertEqual(context.exception.offset, 4)

    def test_truncated(self):
        save_checkpoint(self.model, self.path)
        with open(self.path, "r+b") as handle:
            handle.truncate(10)
        with self.assertRaises(FormatError):
            load_checkpoint(self.path)

    def test_configuration_mismatch(self):
        save_checkpoint(self.model, self.path)
        with self.assertRaises(CheckpointMismatchError) as context:
            load_checkpoint(self.path, tiny_config(zero_init_final=False, base_channels=4, patch=(8, 8, 16)))
        mismatches = context.exception.mismatches
        self.assertIn("base_channels: checkpoint 2, config 4", mismatches)
        self.assertIn("patch axis z: checkpoint 8, config 16", mismatches)
        self.assertFalse(any(m.startswith("patch axis x") for m in mismatches))

    def test_seed_is_not_a_mismatch(self):
        save_checkpoint(self.model, self.path)
        model, _ = load_checkpoint(self.path, tiny_config(zero_init_final=False, seed=0))
        self.assertTrue(same_parameters(model, self.model))


class TestGradientCheck(unittest.TestCase):

    def test_analytic_gradients_match_finite_differences(self):
        report = gradient_check(tiny_config(), n_params=100)
        self.assertEqual(len(report), 100)
        self.assertEqual(report[["name", "index"]].drop_duplicates().shape[0], 100)
        failures = report[~report["ok"]]
        self.assertTrue(failures.empty, failures.to_string())


if __name__ == "__main__":
    unittest.main()
