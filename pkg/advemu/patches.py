"""
Patch tiling, extreme classification and dataset splitting.
"""
import logging
from dataclasses import dataclass

import numpy as np

from advemu.exceptions import ConfigError, DataError, ShapeError
from advemu.grid import SpeciesField, SpeciesKind

logger = logging.getLogger(__name__)

SPLITS = ("train", "val", "test")


@dataclass(frozen=True)
class Thresholds:
    """AQI-derived extreme thresholds; a patch is extreme when its maximum matches or exceeds them."""

    ozone_ppm: float = 0.055
    pm25_ugm3: float = 12.1

    def __post_init__(self):
        for name in ("ozone_ppm", "pm25_ugm3"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"must be positive, got {getattr(self, name)}", key=f"thresholds.{name}")

    def for_kind(self, kind):
        try:
            kind = SpeciesKind(kind)
        except ValueError:
            raise DataError(f"unknown species kind '{kind}'") from None
        return self.ozone_ppm if kind is SpeciesKind.OZONE else self.pm25_ugm3


@dataclass(frozen=True)
class PatchMeta:
    """Provenance of one patch sample."""

    species_id: int
    kind: SpeciesKind
    time_index: int
    patch_row: int
    patch_col: int
    extreme: bool = False

    def __post_init__(self):
        object.__setattr__(self, "kind", SpeciesKind(self.kind))

    def key(self):
        return (self.species_id, self.time_index, self.patch_row, self.patch_col)


@dataclass(frozen=True)
class Patch:
    """One species' raw values inside one patch."""

    values: np.ndarray
    species_id: int
    patch_row: int
    patch_col: int
    patch_index: int
    kind: SpeciesKind = SpeciesKind.OZONE
    time_index: int = 0


@dataclass(frozen=True)
class PatchSample:
    """
    One training pair.

    Args:
        input_channels (numpy.ndarray): Array [C, px, py, pz].
        target (numpy.ndarray): Root-space residual [px, py, pz] in [-1, 1].
        meta (PatchMeta): Provenance and extreme flag.
    """

    input_channels: np.ndarray
    target: np.ndarray
    meta: PatchMeta


def tile(array, rows, cols, depth=16):
    """
    Split the horizontal extent of a 3D array into ``rows`` x ``cols`` blocks.

    Only the lowest ``depth`` levels are kept when the array is deeper.

    Returns:
        numpy.ndarray: Array of shape (rows, cols, nx // rows, ny // cols, min(nz, depth)).

    Raises:
        ShapeError: If nx is not divisible by rows or ny by cols.
    """
    array = np.asarray(array)
    if array.ndim != 3:
        raise ShapeError(f"expected a 3D array, got shape {array.shape}")
    nx, ny, nz = array.shape
    if rows < 1 or nx % rows:
        raise ShapeError(
            f"nx={nx} is not divisible by rows={rows}; the horizontal extent must tile evenly "
            "the way 232 / 4 = 58 and 396 / 6 = 66 do", axis="x")
    if cols < 1 or ny % cols:
        raise ShapeError(
            f"ny={ny} is not divisible by cols={cols}; the horizontal extent must tile evenly "
            "the way 232 / 4 = 58 and 396 / 6 = 66 do", axis="y")
    pz = min(nz, depth)
    px, py = nx // rows, ny // cols
    return array[:, :, :pz].reshape(rows, px, cols, py, pz).transpose(0, 2, 1, 3, 4)


def untile(blocks):
    """Inverse of :func:`tile`."""
    rows, cols, px, py, pz = blocks.shape
    return blocks.transpose(0, 2, 1, 3, 4).reshape(rows * px, cols * py, pz)


def extract_patches(field, grid=None, rows=4, cols=6, depth=16, time_index=0):
    """
    Non-overlapping patches covering the whole horizontal domain.

    Args:
        field (SpeciesField | numpy.ndarray): Field to split.
        grid (GridSpec): Optional grid to check the field's shape against.
        rows (int): Patch rows along x.
        cols (int): Patch columns along y.
        depth (int): Number of lowest levels kept.
        time_index (int): Recorded in each patch.

    Returns:
        list[Patch]: Row-major list of ``rows * cols`` patches.
    """
    if isinstance(field, SpeciesField):
        values, species_id, kind = field.values, field.species_id, field.kind
    else:
        values, species_id, kind = np.asarray(field), -1, SpeciesKind.OZONE
    if grid is not None:
        grid.check_shape(values, "species field")
    blocks = tile(values, rows, cols, depth)
    return [
        Patch(blocks[r, c], species_id, r, c, r * cols + c, kind, time_index)
        for r in range(rows) for c in range(cols)
    ]


def assemble_patches(patches, rows, cols):
    """Reassemble a row-major list of patches into one field."""
    if len(patches) != rows * cols:
        raise ShapeError(f"expected {rows * cols} patches, got {len(patches)}")
    first = np.asarray(patches[0].values if isinstance(patches[0], Patch) else patches[0])
    blocks = np.empty((rows, cols) + first.shape, dtype=first.dtype)
    for index, patch in enumerate(patches):
        blocks[index // cols, index % cols] = patch.values if isinstance(patch, Patch) else patch
    return untile(blocks)


def classify_extreme(patch, kind, thr):
    """
    Whether the patch maximum matches or exceeds the kind's threshold.

    The patch must be in physical units. For pm-kind species the species'
    own field stands in for total PM2.5. The comparison happens in the
    patch's own precision so a stored 0.055 counts as 0.055.

    Raises:
        DataError: If ``kind`` is not a known species kind.
    """
    threshold = thr.for_kind(kind)
    values = np.asarray(patch.values if isinstance(patch, Patch) else patch)
    if values.size == 0:
        raise DataError("cannot classify an empty patch")
    dtype = values.dtype if np.issubdtype(values.dtype, np.floating) else np.float64
    return bool(values.max() >= np.asarray(threshold, dtype=dtype))


@dataclass(frozen=True)
class SplitPolicy:
    """
    Temporal train/val/test split.

    The first ``trainval_parts / total_parts`` of timesteps form the
    train+val pool, split at random by patch; the rest is the test set.

    Args:
        trainval_parts (int): Numerator of the train+val share of timesteps.
        total_parts (int): Denominator of that share.
        val_fraction (float): Share of the pool held out for validation.
        seed (int): Seed for the random pool split.
        cut_timesteps (int): Explicit number of train+val timesteps; overrides the ratio.
    """

    trainval_parts: int = 4
    total_parts: int = 7
    val_fraction: float = 0.2
    seed: int = 0
    cut_timesteps: int = 0

    def __post_init__(self):
        if not 0 < self.trainval_parts < self.total_parts:
            raise ConfigError(
                f"need 0 < trainval_parts < total_parts, got {self.trainval_parts}/{self.total_parts}",
                key="split.trainval_parts")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ConfigError(f"must lie in [0, 1), got {self.val_fraction}", key="split.val_fraction")
        if self.cut_timesteps < 0:
            raise ConfigError(f"must be >= 0, got {self.cut_timesteps}", key="split.cut_timesteps")

    def cut(self, n_timesteps):
        """Number of leading timesteps that go to train+val."""
        if self.cut_timesteps:
            if not 0 < self.cut_timesteps < n_timesteps:
                raise DataError(f"cut_timesteps={self.cut_timesteps} must lie in (0, {n_timesteps})")
            return self.cut_timesteps
        if n_timesteps < self.total_parts:
            raise DataError(
                f"the default split needs at least {self.total_parts} timesteps, got {n_timesteps}; "
                "set split.cut_timesteps for a custom cut")
        return n_timesteps * self.trainval_parts // self.total_parts


def _time_index(item):
    meta = getattr(item, "meta", item)
    return meta.time_index


def split_dataset(pairs, policy):
    """
    Partition time-ordered samples into train, val and test.

    Args:
        pairs (list): Items with a ``time_index`` (directly or via ``.meta``).
        policy (SplitPolicy): Split settings.

    Returns:
        dict[str, list]: ``train``, ``val`` and ``test`` lists, each in input order.
    """
    times = sorted({_time_index(item) for item in pairs})
    cut = policy.cut(len(times))
    boundary = times[cut]
    pool = [i for i, item in enumerate(pairs) if _time_index(item) < boundary]
    test = [i for i, item in enumerate(pairs) if _time_index(item) >= boundary]
    rng = np.random.default_rng(policy.seed)
    order = rng.permutation(len(pool))
    n_val = int(round(policy.val_fraction * len(pool)))
    val = sorted(pool[k] for k in order[:n_val])
    train = sorted(pool[k] for k in order[n_val:])
    logger.info("Split %d samples: %d train, %d val, %d test", len(pairs), len(train), len(val), len(test))
    return {
        "train": [pairs[i] for i in train],
        "val": [pairs[i] for i in val],
        "test": [pairs[i] for i in test],
    }
