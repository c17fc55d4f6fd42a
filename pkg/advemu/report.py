"""
Histogram tables and the evaluation report files.
"""
import hashlib
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from advemu.exceptions import ConfigError, DataError, NumericError
from advemu.transform import DEFAULT_ROOTS, root_diff_target

logger = logging.getLogger(__name__)

STAGES = ("input", "output", "difference", "root_difference")
ROOT_RANGE = (-1.0, 1.0)


@dataclass(frozen=True)
class HistConfig:
    """
    Histogram settings.

    Args:
        bins (int): Fixed-width bins per histogram.
        log_y (bool): Add a log10 count column for log-scaled plots.
        levels (tuple[int]): Patch levels to emit; empty means every level.
        roots (tuple[int]): Roots of the n-sweep.
    """

    bins: int = 50
    log_y: bool = True
    levels: tuple = ()
    roots: tuple = DEFAULT_ROOTS

    def __post_init__(self):
        object.__setattr__(self, "levels", tuple(int(k) for k in self.levels))
        object.__setattr__(self, "roots", tuple(int(n) for n in self.roots))
        if self.bins < 1:
            raise ConfigError(f"must be >= 1, got {self.bins}", key="hist.bins")
        if any(n < 1 or n % 2 == 0 for n in self.roots):
            raise ConfigError(f"roots must be odd positive integers, got {self.roots}", key="hist.roots")


def histogram_csv(values, bins=50, log_y=False, value_range=None):
    """
    Fixed-width histogram as a table.

    Args:
        values (numpy.ndarray): Finite values.
        bins (int): Number of bins.
        log_y (bool): Add a ``log10_count`` column (empty for zero counts).
        value_range (tuple[float, float]): Bin range; defaults to [min, max].

    Returns:
        pandas.DataFrame: Columns bin_lo, bin_hi, count (and log10_count).

    Raises:
        DataError: If ``values`` is empty.
        NumericError: If ``values`` contains NaN or infinity.
    """
    values = np.asarray(values, dtype=np.float64).ravel()
    if values.size == 0:
        raise DataError("cannot build a histogram of no values")
    if not np.all(np.isfinite(values)):
        raise NumericError(f"histogram input has {np.count_nonzero(~np.isfinite(values))} non-finite values")
    if value_range is None:
        value_range = (values.min(), values.max())
    counts, edges = np.histogram(values, bins=bins, range=value_range)
    table = pd.DataFrame({"bin_lo": edges[:-1], "bin_hi": edges[1:], "count": counts})
    if log_y:
        table["log10_count"] = np.log10(counts.astype(np.float64), where=counts > 0,
                                        out=np.full(len(counts), np.nan))
    return table


def occupied_span(table):
    """Number of bins between the first and last non-empty bin, inclusive."""
    occupied = np.flatnonzero(table["count"].to_numpy() > 0)
    return int(occupied[-1] - occupied[0] + 1) if occupied.size else 0


def histogram_stages(inputs, outputs, n=3, bins=50, log_y=False):
    """
    Histograms of the four pipeline stages of one group of cells.

    Input and output use their own range; the difference and root-difference
    stages share the root-space range [-1, 1] so their spans are comparable.

    :param inputs: Normalized input concentrations.
    :param outputs: Normalized output concentrations.
    :param n: Root of the root-difference stage.
    :return: Dict stage name to histogram table.
    """
    inputs = np.asarray(inputs, dtype=np.float64)
    outputs = np.asarray(outputs, dtype=np.float64)
    return {
        "input": histogram_csv(inputs, bins, log_y),
        "output": histogram_csv(outputs, bins, log_y),
        "difference": histogram_csv(outputs - inputs, bins, log_y, ROOT_RANGE),
        "root_difference": histogram_csv(root_diff_target(inputs, outputs, n), bins, log_y, ROOT_RANGE),
    }


def root_sweep(inputs, outputs, roots=DEFAULT_ROOTS, bins=50, log_y=False):
    """Root-space histograms of the same residuals for each root in ``roots``."""
    return {n: histogram_csv(root_diff_target(inputs, outputs, n), bins, log_y, ROOT_RANGE) for n in roots}


@dataclass
class MetricsReport:
    """
    Evaluation results of one model on one split.

    ``rmse`` and ``persistence`` map a convention (``normalized_output`` or
    ``root_space``) to per-stratum values; absent strata are None.
    """

    rmse: dict
    persistence: dict
    skill: dict
    counts: dict
    rmse_per_level: list = field(default_factory=list)
    mass: list = field(default_factory=list)
    mass_pct_diff_mean: float = None
    range_exceedance: int = 0
    frac_beyond_unit: float = 0.0
    timing: dict = None
    config: dict = field(default_factory=dict)
    checksums: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.counts["all"] != self.counts["extreme"] + self.counts["non_extreme"]:
            raise DataError(f"stratum counts do not add up: {self.counts}")
        for name, value in _numbers(self.to_dict()):
            if not math.isfinite(value):
                raise NumericError(f"report entry {name} is not finite ({value})")

    def to_dict(self):
        return asdict(self)


def _numbers(data, prefix=""):
    if isinstance(data, dict):
        for key, value in data.items():
            yield from _numbers(value, f"{prefix}{key}.")
    elif isinstance(data, (list, tuple)):
        for index, value in enumerate(data):
            yield from _numbers(value, f"{prefix}{index}.")
    elif isinstance(data, float):
        yield prefix.rstrip("."), data


def _fmt(value):
    return "absent" if value is None else f"{value:.6g}"


def summary_text(report):
    lines = ["advemu evaluation report", ""]
    counts = report.counts
    lines.append(f"samples: {counts['all']} (extreme {counts['extreme']}, non-extreme {counts['non_extreme']})")
    lines.append("")
    lines.append(f"{'convention':<20}{'stratum':<12}{'model':>12}{'persistence':>14}{'skill':>10}")
    for convention, strata in report.rmse.items():
        for stratum, value in strata.items():
            lines.append(f"{convention:<20}{stratum:<12}{_fmt(value):>12}"
                         f"{_fmt(report.persistence[convention][stratum]):>14}"
                         f"{_fmt(report.skill[convention][stratum]):>10}")
    if report.rmse_per_level:
        lines.append("")
        lines.append("per-level RMSE (normalized output): " + ", ".join(
            f"{row['level']}: {row['rmse']:.4g}" for row in report.rmse_per_level))
    if report.mass_pct_diff_mean is not None:
        lines.append("")
        lines.append(f"mass percent difference, mean over species: {report.mass_pct_diff_mean:.6g}%")
        for row in report.mass:
            lines.append(f"  species {row['species_id']}: {row['mass_pct_diff']:.6g}% "
                         f"({row['included']} patches, {row['excluded']} excluded)")
    lines.append("")
    lines.append(f"range exceedance cells: {report.range_exceedance}")
    lines.append(f"fraction |prediction| > 1: {report.frac_beyond_unit:.6g}")
    if report.timing:
        lines.append("")
        for key, value in report.timing.items():
            if not isinstance(value, dict):
                lines.append(f"{key}: {value}")
    return "\n".join(lines) + "\n"


def emit_report(report, path):
    """
    Write the report as JSON and a plain-text summary next to it.

    The JSON is key-sorted and carries no timestamps, so identical inputs
    give identical files.

    :param report: The MetricsReport.
    :param path: Destination of the JSON file; the summary gets a ``.txt`` suffix.
    :return: Tuple (json path, summary path, SHA-256 of the JSON).
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = json.dumps(report.to_dict(), indent=4, sort_keys=True).encode("utf-8")
    path.write_bytes(payload)
    summary = path.with_suffix(".txt")
    summary.write_text(summary_text(report))
    logger.info("Wrote report to %s", path)
    return path, summary, hashlib.sha256(payload).hexdigest()


SLICE_COLUMNS = ["species_id", "stratum", "sample", "level", "i", "j", "input", "truth", "prediction"]


def sample_slices(inputs, truths, preds, metas, level=0, per_group=1):
    """
    Horizontal slices of the first samples of every species and stratum.

    :param inputs: Normalized input concentrations [N, px, py, pz].
    :param truths: Normalized true outputs, same shape.
    :param preds: Normalized predicted outputs, same shape.
    :param metas: Sample meta frame with species_id and extreme columns.
    :param level: Patch level of the slices.
    :param per_group: Samples per species and stratum.
    :return: DataFrame with one row per cell and the columns of ``SLICE_COLUMNS``.
    """
    inputs, truths, preds = (np.asarray(a, dtype=np.float64) for a in (inputs, truths, preds))
    if not inputs.shape == truths.shape == preds.shape:
        raise DataError(f"slice arrays differ in shape: {inputs.shape}, {truths.shape}, {preds.shape}")
    if not 0 <= level < inputs.shape[-1]:
        raise DataError(f"slice level {level} outside the patch depth {inputs.shape[-1]}")
    strata = np.where(metas["extreme"].to_numpy(bool), "extreme", "nonextreme")
    groups = pd.DataFrame({"species_id": metas["species_id"].to_numpy(), "stratum": strata})
    i, j = np.meshgrid(np.arange(inputs.shape[1]), np.arange(inputs.shape[2]), indexing="ij")
    frames = []
    for (species_id, stratum), index in sorted(groups.groupby(["species_id", "stratum"]).indices.items()):
        for sample in index[:per_group]:
            frames.append(pd.DataFrame({
                "species_id": int(species_id),
                "stratum": stratum,
                "sample": int(sample),
                "level": level,
                "i": i.ravel(),
                "j": j.ravel(),
                "input": inputs[sample, :, :, level].ravel(),
                "truth": truths[sample, :, :, level].ravel(),
                "prediction": preds[sample, :, :, level].ravel(),
            }))
    if not frames:
        return pd.DataFrame(columns=SLICE_COLUMNS)
    return pd.concat(frames, ignore_index=True)[SLICE_COLUMNS]
