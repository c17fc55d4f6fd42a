"""
Evaluation metrics: stratified RMSE in two conventions, per-level RMSE,
the persistence baseline and the mass percent difference.
"""
import logging
import math
from collections import namedtuple

import numpy as np
import pandas as pd

from advemu.exceptions import ConfigError, DataError, NumericError, ShapeError
from advemu.grid import total_mass
from advemu.transform import denormalize, root_diff_invert

logger = logging.getLogger(__name__)

CONVENTIONS = ("normalized_output", "root_space")

RmseStrata = namedtuple("RmseStrata", ["all", "extreme", "nonextreme", "counts"])


def _as_cells(array):
    array = np.asarray(array, dtype=np.float64)
    if array.ndim == 5:
        if array.shape[1] != 1:
            raise ShapeError(f"expected a single output channel, got {array.shape[1]}", axis="channel")
        array = array[:, 0]
    if array.ndim != 4:
        raise ShapeError(f"expected [N, px, py, pz] samples, got shape {array.shape}")
    return array


def extreme_mask(metas):
    """Boolean extreme flag per sample from PatchMeta objects, a meta frame or a flag array."""
    if isinstance(metas, pd.DataFrame):
        return metas["extreme"].to_numpy(bool)
    metas = list(metas) if not isinstance(metas, np.ndarray) else metas
    if len(metas) and hasattr(metas[0], "extreme"):
        return np.array([meta.extreme for meta in metas], dtype=bool)
    return np.asarray(metas, dtype=bool)


def reconstruct(inputs, targets, n=3):
    """Normalized outputs implied by root-space targets: ``input + sign(t) |t|**n``."""
    return root_diff_invert(_as_cells(inputs), _as_cells(targets), n)


def _aligned(preds, targets, metas, convention, inputs, n):
    if convention not in CONVENTIONS:
        raise ConfigError(f"must be one of {CONVENTIONS}, got '{convention}'", key="eval.convention")
    preds, targets = _as_cells(preds), _as_cells(targets)
    if preds.shape != targets.shape:
        raise ShapeError(f"predictions {preds.shape} and targets {targets.shape} differ")
    extreme = extreme_mask(metas)
    if len(extreme) != len(preds):
        raise ShapeError(f"{len(extreme)} meta records for {len(preds)} samples", axis="sample")
    if convention == "normalized_output":
        if inputs is None:
            raise DataError("the normalized_output convention needs the normalized inputs")
        inputs = _as_cells(inputs)
        preds, targets = root_diff_invert(inputs, preds, n), root_diff_invert(inputs, targets, n)
    return preds, targets, extreme


def rmse_stratified(preds, targets, metas, convention="root_space", inputs=None, n=3):
    """
    Root-mean-square error over all cells of each stratum.

    Args:
        preds (numpy.ndarray): Root-space predictions [N, (1,) px, py, pz].
        targets (numpy.ndarray): Root-space targets, same shape.
        metas: Extreme flags, as PatchMeta list, meta frame or bool array.
        convention (str): ``root_space`` compares targets directly;
            ``normalized_output`` first reconstructs outputs from ``inputs``.
        inputs (numpy.ndarray): Normalized input concentrations [N, px, py, pz].
        n (int): Root used by the targets.

    Returns:
        RmseStrata: ``all``, ``extreme`` and ``nonextreme`` RMSE (None for an
        empty stratum) and sample ``counts`` per stratum.

    Raises:
        NumericError: If an RMSE is not finite.
    """
    preds, targets, extreme = _aligned(preds, targets, metas, convention, inputs, n)
    cells = int(np.prod(preds.shape[1:])) if preds.ndim > 1 else 1
    squares = ((preds - targets) ** 2).reshape(len(preds), -1).sum(axis=1)

    def stratum(mask):
        count = int(mask.sum())
        if count == 0:
            return None
        value = math.sqrt(float(squares[mask].sum()) / (count * cells))
        if not math.isfinite(value):
            raise NumericError(f"{convention} RMSE is not finite ({value})")
        return value

    counts = {"all": len(preds), "extreme": int(extreme.sum()), "non_extreme": int((~extreme).sum())}
    return RmseStrata(stratum(np.ones(len(preds), bool)), stratum(extreme), stratum(~extreme), counts)


def rmse_per_level(preds, targets, convention="normalized_output", inputs=None, n=3):
    """
    RMSE per vertical level of the patch.

    :return: DataFrame with columns level, rmse.
    """
    preds, targets, _ = _aligned(preds, targets, np.zeros(len(_as_cells(preds)), bool), convention, inputs, n)
    squares = (preds - targets) ** 2
    values = np.sqrt(squares.mean(axis=(0, 1, 2))) if len(preds) else np.full(preds.shape[-1], np.nan)
    return pd.DataFrame({"level": np.arange(preds.shape[-1]), "rmse": values})


def persistence(targets):
    """Zero-difference predictions shaped like ``targets``."""
    return np.zeros_like(np.asarray(targets, dtype=np.float64))


def skill(model, baseline):
    """
    Relative improvement over the baseline per stratum: ``1 - model / baseline``.

    Strata that are absent or have a zero baseline are reported as None.
    """
    result = {}
    for name in ("all", "extreme", "nonextreme"):
        m, b = getattr(model, name), getattr(baseline, name)
        result[name] = None if m is None or not b else 1.0 - m / b
    return result


def mass_pct_diff(pred_output_norm, truth_output_norm, params, grid, metas, transform="linear"):
    """
    Percent difference in total mass between predicted and true outputs.

    Both fields are de-normalized to physical units with the normalization
    used to build the dataset, each patch's mass is taken on the patch grid
    and ``100 |M_pred - M_truth| / M_truth`` is averaged per species.
    Patches with zero true mass are excluded and counted.

    Args:
        pred_output_norm (numpy.ndarray): Predicted normalized outputs [N, px, py, pz].
        truth_output_norm (numpy.ndarray): True normalized outputs [N, px, py, pz].
        params (NormParams): Normalization parameters.
        grid (GridSpec): Full-domain grid; the patch grid is derived from it.
        metas (pandas.DataFrame | list): Per-sample metadata with species_id, patch_row, patch_col.
        transform (str): Value transform used by the dataset.

    Returns:
        pandas.DataFrame: Indexed by species_id with columns mass_pct_diff, included, excluded.

    Raises:
        NumericError: If every patch of a species has zero true mass.
    """
    pred, truth = _as_cells(pred_output_norm), _as_cells(truth_output_norm)
    if pred.shape != truth.shape:
        raise ShapeError(f"predicted outputs {pred.shape} and true outputs {truth.shape} differ")
    frame = metas if isinstance(metas, pd.DataFrame) else pd.DataFrame(
        [{"species_id": m.species_id, "patch_row": m.patch_row, "patch_col": m.patch_col} for m in metas])
    if len(frame) != len(pred):
        raise ShapeError(f"{len(frame)} meta records for {len(pred)} samples", axis="sample")
    _, px, py, pz = pred.shape if len(pred) else (0, 1, 1, 1)
    patch_grid = grid.subgrid(px, py, pz)
    cols = grid.ny // py

    rows = []
    for index, meta in enumerate(frame.itertuples(index=False)):
        species_id = int(meta.species_id)
        patch_index = int(meta.patch_row) * cols + int(meta.patch_col)
        masses = [
            total_mass(denormalize(values[index], params, transform, species_id, patch_index), patch_grid)
            for values in (pred, truth)
        ]
        rows.append((species_id, *masses))
    table = pd.DataFrame(rows, columns=["species_id", "pred_mass", "truth_mass"])
    if table.empty:
        raise DataError("no samples to compute mass differences on")

    summary = []
    for species_id, group in table.groupby("species_id"):
        included = group[group["truth_mass"] != 0]
        if included.empty:
            raise NumericError(f"mass undefined for species {species_id}: every true patch has zero mass")
        pct = 100.0 * (included["pred_mass"] - included["truth_mass"]).abs() / included["truth_mass"].abs()
        summary.append({
            "species_id": species_id,
            "mass_pct_diff": float(pct.mean()),
            "included": len(included),
            "excluded": len(group) - len(included),
        })
    result = pd.DataFrame(summary).set_index("species_id")
    excluded = int(result["excluded"].sum())
    if excluded:
        logger.warning("%d patches with zero true mass were excluded from the mass metric", excluded)
    return result

