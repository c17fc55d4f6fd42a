"""
Inference timing and full-domain runtime extrapolation.
"""
import logging
import math
import os
import platform
import time
from dataclasses import asdict, dataclass

import numpy as np
import torch

from advemu.exceptions import ConfigError
from advemu.unet import forward

logger = logging.getLogger(__name__)

# Reference timing of one 32-patch batch on a V100 GPU.
V100_MS_PER_BATCH = 4.74


@dataclass(frozen=True)
class DomainSpec:
    """
    Domain to extrapolate a per-batch inference time to.

    Args:
        rows (int): Patch rows.
        cols (int): Patch columns.
        levels (int): Total vertical levels.
        patch_depth (int): Levels per patch.
        species (int): Species predicted per timestep.
        batch_size (int): Patches per inference batch.
    """

    rows: int = 4
    cols: int = 6
    levels: int = 16
    patch_depth: int = 16
    species: int = 8
    batch_size: int = 32

    def __post_init__(self):
        for name, value in asdict(self).items():
            if value < 1:
                raise ConfigError(f"must be positive, got {value}", key=f"bench.domain.{name}")
        if self.levels % self.patch_depth:
            raise ConfigError(
                f"levels={self.levels} is not divisible by patch_depth={self.patch_depth}",
                key="bench.domain.levels")

    @classmethod
    def conus(cls):
        """Full CONUS configuration: 4 x 6 patches, 64 levels in blocks of 16, 183 species."""
        return cls(rows=4, cols=6, levels=64, patch_depth=16, species=183, batch_size=32)

    @property
    def total_patches(self):
        return self.rows * self.cols * (self.levels // self.patch_depth) * self.species

    @property
    def batches(self):
        return math.ceil(self.total_patches / self.batch_size)


def extrapolate_runtime(ms_per_batch, d):
    """Seconds per transport timestep for domain ``d``: ``ceil(patches / batch) * ms / 1000``."""
    return d.batches * ms_per_batch / 1000.0


def environment():
    """Description of where a benchmark ran."""
    return {
        "device": "cpu",
        "threads": torch.get_num_threads(),
        "cpu_count": os.cpu_count(),
        "torch": torch.__version__,
        "python": platform.python_version(),
        "machine": platform.machine(),
    }


def bench_inference(model, batch_size=32, repeats=50, warmup=5, seed=0):
    """
    Median wall-clock time of one inference batch.

    Args:
        model (UNet3D): Model to time.
        batch_size (int): Samples per batch.
        repeats (int): Timed iterations.
        warmup (int): Untimed iterations run first.
        seed (int): Seed for the random batch.

    Returns:
        dict: ``ms_per_batch`` (median), ``ms_min``, ``ms_max``, ``batch_size``,
        ``repeats``, ``warmup`` and the ``environment`` block.
    """
    if batch_size < 1 or repeats < 1 or warmup < 0:
        raise ConfigError(f"need batch_size >= 1, repeats >= 1, warmup >= 0; "
                          f"got {batch_size}, {repeats}, {warmup}", key="bench")
    cfg = model.cfg
    generator = torch.Generator().manual_seed(seed)
    batch = torch.rand((batch_size, cfg.in_channels) + cfg.patch, generator=generator)
    for _ in range(warmup):
        forward(model, batch)
    timings = []
    for _ in range(repeats):
        start = time.perf_counter()
        forward(model, batch)
        timings.append((time.perf_counter() - start) * 1000.0)
    result = {
        "ms_per_batch": float(np.median(timings)),
        "ms_min": float(np.min(timings)),
        "ms_max": float(np.max(timings)),
        "batch_size": batch_size,
        "repeats": repeats,
        "warmup": warmup,
        "environment": environment(),
    }
    logger.info("Inference: %.3f ms per batch of %d (median of %d)", result["ms_per_batch"], batch_size, repeats)
    return result
