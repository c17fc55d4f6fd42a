"""
Normalization and target construction.

Min-max groups are keyed by ``(species_id, level, patch)``; ``-1`` in the
level or patch column means the group spans all levels or all patches.
"""
import logging
import math
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from advemu.exceptions import ConfigError, DataError, MissingParamsError, NumericError, ShapeError

logger = logging.getLogger(__name__)

MODES = ("per_species", "per_species_per_level", "per_patch")
TRANSFORMS = ("linear", "log")
DEFAULT_ROOTS = (1, 3, 5, 7, 9, 15)
UNIT_RANGE = (0.0, 1.0)
LOG_RANGE = (1.0, math.e)
ALL = -1


@dataclass(frozen=True)
class RootSpec:
    """Odd root applied to residuals."""

    n: int = 3

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 1 or self.n % 2 == 0:
            raise ConfigError(f"must be an odd positive integer, got {self.n}", key="root.n")
        if self.n not in DEFAULT_ROOTS:
            logger.info("Root n=%d is outside the default set %s", self.n, DEFAULT_ROOTS)


@dataclass(frozen=True)
class AffineParams:
    """Affine map ``a c + b``; ``a`` is dimensionless and ``b`` is in species units."""

    a: float
    b: float = 0.0

    def __post_init__(self):
        if self.a == 0 or not np.isfinite(self.a) or not np.isfinite(self.b):
            raise DataError(f"affine scale must be finite and non-zero, got a={self.a}, b={self.b}")


@dataclass(frozen=True, eq=False)
class NormParams:
    """
    Fitted min/max per normalization group.

    Args:
        mode (str): One of ``per_species``, ``per_species_per_level``, ``per_patch``.
        table (pandas.DataFrame): Columns ``species_id, level, patch, min, max, degenerate``.
    """

    mode: str
    table: pd.DataFrame = field(repr=False)

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"must be one of {MODES}, got '{self.mode}'", key="norm.mode")
        table = self.table if "species_id" in self.table.columns else self.table.reset_index()
        table = table[["species_id", "level", "patch", "min", "max"]].astype(
            {"species_id": int, "level": int, "patch": int, "min": float, "max": float})
        if (table["max"] < table["min"]).any():
            raise DataError("normalization table has max < min")
        table["degenerate"] = table["max"] == table["min"]
        object.__setattr__(self, "table", table.set_index(["species_id", "level", "patch"]).sort_index())

    def bounds(self, species_id, nz, patch_index=None):
        """
        Per-level lower and upper bounds for one species (and patch).

        Returns:
            tuple[numpy.ndarray, numpy.ndarray]: Arrays of length ``nz``.

        Raises:
            MissingParamsError: If a needed group was never fitted.
        """
        levels = range(nz) if self.mode != "per_species" else [ALL] * nz
        if self.mode == "per_patch":
            if patch_index is None:
                raise MissingParamsError(f"per_patch parameters need a patch index (species {species_id})")
            patch = int(patch_index)
        else:
            patch = ALL
        keys = [(int(species_id), int(level), patch) for level in levels]
        missing = [key for key in dict.fromkeys(keys) if key not in self.table.index]
        if missing:
            names = ", ".join(f"species {s} level {'all' if l == ALL else l} patch {'all' if p == ALL else p}"
                              for s, l, p in missing)
            raise MissingParamsError(f"no normalization parameters for {names}")
        rows = self.table.loc[keys]
        return rows["min"].to_numpy(np.float64), rows["max"].to_numpy(np.float64)

    def to_dict(self):
        return {
            "mode": self.mode,
            "groups": self.table.reset_index().drop(columns="degenerate").to_dict(orient="records"),
        }

    @classmethod
    def from_dict(cls, data):
        return cls(data["mode"], pd.DataFrame(data["groups"], columns=["species_id", "level", "patch", "min", "max"]))


def _unpack(c, species_id=None, patch_index=None):
    if hasattr(c, "values") and not isinstance(c, np.ndarray):
        return np.asarray(c.values), c.species_id, getattr(c, "patch_index", patch_index)
    if species_id is None:
        raise DataError("species_id is required when normalizing a bare array")
    return np.asarray(c), species_id, patch_index


def minmax_fit(fields, mode):
    """
    Exact group minima and maxima over ``fields``.

    Args:
        fields (Iterable): Objects with ``species_id`` and 3D ``values``; ``per_patch``
            mode also needs ``patch_index``. Pass the training split only.
        mode (str): Grouping mode.

    Returns:
        NormParams: The fitted parameters.

    Raises:
        DataError: If there is nothing to fit or a group holds no finite value.
    """
    if mode not in MODES:
        raise ConfigError(f"must be one of {MODES}, got '{mode}'", key="norm.mode")
    lows, highs = {}, {}
    for item in fields:
        values, species_id, patch_index = _unpack(item)
        if values.ndim != 3:
            raise ShapeError(f"expected a 3D field, got shape {values.shape}")
        if mode == "per_patch" and patch_index is None:
            raise DataError(f"per_patch fitting needs patch samples, species {species_id} has no patch index")
        if mode == "per_species":
            keyed = {(species_id, ALL, ALL): values}
        else:
            patch = int(patch_index) if mode == "per_patch" else ALL
            keyed = {(species_id, k, patch): values[:, :, k] for k in range(values.shape[2])}
        for key, group in keyed.items():
            finite = group[np.isfinite(group)]
            if finite.size == 0:
                raise DataError(f"normalization group species {key[0]} level {key[1]} patch {key[2]} has no finite values")
            lo, hi = float(finite.min()), float(finite.max())
            lows[key] = min(lows.get(key, lo), lo)
            highs[key] = max(highs.get(key, hi), hi)
    if not lows:
        raise DataError("no fields to fit normalization parameters on")
    table = pd.DataFrame(
        [(s, l, p, lows[(s, l, p)], highs[(s, l, p)]) for s, l, p in lows],
        columns=["species_id", "level", "patch", "min", "max"],
    )
    params = NormParams(mode, table)
    degenerate = int(params.table["degenerate"].sum())
    if degenerate:
        logger.warning("%d normalization groups are degenerate (max == min)", degenerate)
    return params


def count_exceedance(c, params, species_id=None, patch_index=None):
    """Number of cells outside their group's fitted [min, max]."""
    values, species_id, patch_index = _unpack(c, species_id, patch_index)
    lo, hi = params.bounds(species_id, values.shape[-1], patch_index)
    return int(np.count_nonzero((values < lo) | (values > hi)))


def minmax_apply(c, params, target_range=UNIT_RANGE, species_id=None, patch_index=None):
    """
    Map each group's [min, max] linearly onto ``target_range``.

    Values outside the fitted range are extrapolated, not clipped; count
    them with :func:`count_exceedance`. Degenerate groups map to the low
    end of the range.

    Returns:
        numpy.ndarray: float64 array shaped like ``c``.
    """
    values, species_id, patch_index = _unpack(c, species_id, patch_index)
    lo, hi = params.bounds(species_id, values.shape[-1], patch_index)
    low, high = target_range
    span = hi - lo
    scale = np.divide(high - low, span, out=np.zeros_like(span), where=span > 0)
    return low + (values.astype(np.float64) - lo) * scale


def minmax_invert(c, params, target_range=UNIT_RANGE, species_id=None, patch_index=None):
    """Inverse of :func:`minmax_apply`; degenerate groups return their fitted value."""
    values, species_id, patch_index = _unpack(c, species_id, patch_index)
    lo, hi = params.bounds(species_id, values.shape[-1], patch_index)
    low, high = target_range
    return lo + (values.astype(np.float64) - low) * (hi - lo) / (high - low)


def log_chain(c, params, species_id=None, patch_index=None):
    """
    ``ln(minmax_[1, e](c))``, which lies in [0, 1] on the fitted data.

    Raises:
        NumericError: If an out-of-range value maps to a non-positive argument.
    """
    scaled = minmax_apply(c, params, LOG_RANGE, species_id, patch_index)
    if np.any(scaled <= 0):
        raise NumericError(f"log chain argument is non-positive (min {scaled.min():.6g})")
    return np.log(scaled)


def log_chain_invert(c_prime, params, species_id=None, patch_index=None):
    values, species_id, patch_index = _unpack(c_prime, species_id, patch_index)
    return minmax_invert(np.exp(values), params, LOG_RANGE, species_id, patch_index)


def normalize(c, params, transform="linear", species_id=None, patch_index=None):
    """Map raw concentrations into the model's [0, 1] space."""
    if transform == "log":
        return log_chain(c, params, species_id, patch_index)
    return minmax_apply(c, params, UNIT_RANGE, species_id, patch_index)


def denormalize(c, params, transform="linear", species_id=None, patch_index=None):
    """Map model-space values back to physical units."""
    if transform == "log":
        return log_chain_invert(c, params, species_id, patch_index)
    return minmax_invert(c, params, UNIT_RANGE, species_id, patch_index)


def _root_n(n):
    return n.n if isinstance(n, RootSpec) else RootSpec(int(n)).n


def root_diff_target(input, output, n=3):
    """
    Signed n'th root of the residual: ``sign(d) |d|**(1/n)`` with ``d = output - input``.

    Raises:
        ShapeError: If the arrays differ in shape.
    """
    input, output = np.asarray(input), np.asarray(output)
    if input.shape != output.shape:
        raise ShapeError(f"input shape {input.shape} differs from output shape {output.shape}")
    d = output.astype(np.float64) - input.astype(np.float64)
    return np.sign(d) * np.abs(d) ** (1.0 / _root_n(n))


def root_diff_invert(input, target, n=3, tolerance=0.05):
    """
    Reconstruct the output from an input and a root-space target.

    Targets beyond ``1 + tolerance`` in magnitude only trigger a warning.
    """
    target = np.asarray(target, dtype=np.float64)
    beyond = int(np.count_nonzero(np.abs(target) > 1.0 + tolerance))
    if beyond:
        logger.warning("%d root-space values exceed |t| > %.2f", beyond, 1.0 + tolerance)
    return np.asarray(input, dtype=np.float64) + np.sign(target) * np.abs(target) ** _root_n(n)


def affine_apply(c, ap):
    return ap.a * np.asarray(c, dtype=np.float64) + ap.b


def affine_invert(c, ap):
    return (np.asarray(c, dtype=np.float64) - ap.b) / ap.a


def spread_moments(d, n=3):
    """
    Count, sums and sums of squares of residuals and their root targets.

    Moments of separate chunks add up, so the spread of a whole split can be
    accumulated without holding it in memory.

    Raises:
        DataError: If some ``|d| >= 1``.
    """
    d = np.asarray(d, dtype=np.float64).ravel()
    if np.any(np.abs(d) >= 1):
        raise DataError("spread amplification needs every |d| < 1")
    target = np.sign(d) * np.abs(d) ** (1.0 / _root_n(n))
    return np.array([d.size, d.sum(), np.dot(d, d), target.sum(), np.dot(target, target)])


def ratio_from_moments(moments):
    """``std(root(d)) / std(d)`` from accumulated :func:`spread_moments`."""
    count, total, squares, root_total, root_squares = moments
    if count == 0 or squares == 0:
        raise DataError("spread is undefined for all-zero residuals")
    variance = max(squares / count - (total / count) ** 2, 0.0)
    root_variance = max(root_squares / count - (root_total / count) ** 2, 0.0)
    return math.sqrt(root_variance / variance) if variance > 0 else math.inf


def spread_ratio(d, n=3):
    """
    ``std(root(d)) / std(d)`` for residuals with every ``|d| < 1``.

    Raises:
        DataError: If the residuals are all zero or some ``|d| >= 1``.
    """
    return ratio_from_moments(spread_moments(d, n))
