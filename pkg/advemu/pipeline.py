"""
End-to-end pipelines behind the command-line subcommands.

Output layout under ``ExperimentConfig.out_dir``::

    data/{train,val,test}.aqg (+ .json manifests)
    model/best.ckpt, model/history.csv
    eval/report.json, eval/report.txt (+ eval/samples.csv with --samples)
    bench/bench.json
    hist/species_SSS/level_KK/*.csv, hist/summary.csv
"""
import dataclasses
import itertools
import json
import logging
from contextlib import ExitStack
from dataclasses import asdict
from pathlib import Path

import numpy as np
import pandas as pd

from advemu.bench import V100_MS_PER_BATCH, DomainSpec, bench_inference, extrapolate_runtime
from advemu.dataset import AQGWriter, file_checksum, read_aqg
from advemu.exceptions import DataError, NumericError
from advemu.feature import BASE_CHANNELS, STATIC_CHANNELS, Feature
from advemu.metrics import (
    CONVENTIONS,
    mass_pct_diff,
    persistence,
    reconstruct,
    rmse_per_level,
    rmse_stratified,
    skill,
)
from advemu.oracle import gen_dataset
from advemu.patches import SPLITS, PatchMeta, PatchSample, classify_extreme, extract_patches, split_dataset
from advemu.report import MetricsReport, emit_report, histogram_stages, occupied_span, root_sweep, sample_slices
from advemu.synth import gen_surface_fields
from advemu.training import load_checkpoint, predict, save_checkpoint, to_tensors, train
from advemu.transform import (
    NormParams,
    count_exceedance,
    minmax_fit,
    normalize,
    ratio_from_moments,
    root_diff_target,
    spread_moments,
)
from advemu.unet import build, count_params

logger = logging.getLogger(__name__)


def data_path(cfg, split):
    return cfg.out / "data" / f"{split}.aqg"


def checkpoint_path(cfg):
    return cfg.out / "model" / "best.ckpt"


def norm_params_of(dataset):
    """Normalization parameters recorded in a dataset manifest."""
    if "norm_params" not in dataset.manifest:
        raise DataError("dataset manifest has no normalization parameters")
    return NormParams.from_dict(dataset.manifest["norm_params"])


def generate(cfg):
    """
    Generate pairs, cut them into patch samples and write the three splits.

    Patches are classified on raw inputs, normalization is fitted on the
    training split only and the root target is checked to widen the
    training residuals before the run is reported.

    Args:
        cfg (ExperimentConfig): Experiment settings.

    Returns:
        dict: Per split the file path, stratum counts and checksum, plus the spread ratio.

    Raises:
        NumericError: If the root target does not widen the residual spread.
    """
    grid = cfg.grid.spec()
    rows, cols, depth = cfg.grid.rows, cfg.grid.cols, cfg.grid.depth
    pairs = gen_dataset(grid, cfg.synth, cfg.step, cfg.timesteps - 1, cfg.threads, dtype=np.float32)
    winds = {pair.time_index: pair.wind for pair in pairs}

    def patches_of(pair):
        inputs = extract_patches(pair.input, grid, rows, cols, depth, pair.time_index)
        outputs = extract_patches(pair.output, grid, rows, cols, depth, pair.time_index)
        for before, after in zip(inputs, outputs):
            yield (pair.species_id, pair.time_index, before.patch_row, before.patch_col), before, after

    metas = {}
    for pair in pairs:
        for key, before, _ in patches_of(pair):
            metas[key] = PatchMeta(pair.species_id, pair.input.kind, pair.time_index, before.patch_row,
                                   before.patch_col, classify_extreme(before, before.kind, cfg.thresholds))
    splits = split_dataset(list(metas.values()), cfg.split)
    assignment = {meta.key(): name for name, items in splits.items() for meta in items}

    params = minmax_fit(
        (patch for pair in pairs for key, before, after in patches_of(pair)
         if assignment[key] == "train" for patch in (before, after)),
        cfg.norm.mode,
    )
    static = gen_surface_fields(grid, cfg.synth) if cfg.norm.static_channels else None
    feature = Feature(grid, rows, cols, depth, static)
    feature.fit(winds[t] for t in sorted({meta.time_index for meta in splits["train"]}))

    manifest = {
        "norm_params": params.to_dict(),
        "transform": cfg.norm.transform,
        "root_n": cfg.root.n,
        "thresholds": asdict(cfg.thresholds),
        "synth": asdict(cfg.synth),
        "features": feature.to_dict(),
        "config": cfg.to_dict(),
    }
    transform = cfg.norm.transform
    moments = {name: np.zeros(5) for name in SPLITS}
    exceedance = dict.fromkeys(SPLITS, 0)
    writers = {
        name: AQGWriter(data_path(cfg, name), feature.n_channels, cfg.grid.patch_shape, {**manifest, "split": name})
        for name in SPLITS
    }
    with ExitStack() as stack:
        for writer in writers.values():
            stack.enter_context(writer)
        for time_index, group in itertools.groupby(pairs, key=lambda pair: pair.time_index):
            for pair in group:
                for key, before, after in patches_of(pair):
                    split = assignment[key]
                    norm_in = normalize(before, params, transform)
                    norm_out = normalize(after, params, transform)
                    exceedance[split] += count_exceedance(before, params) + count_exceedance(after, params)
                    moments[split] += spread_moments(norm_out - norm_in, cfg.root)
                    channels = feature.build(norm_in, winds[time_index], time_index, *key[2:])
                    target = root_diff_target(norm_in, norm_out, cfg.root).astype(np.float32)
                    writers[split].append(PatchSample(channels, target, metas[key]))
            feature.release(time_index)
        ratios = {name: ratio_from_moments(moments[name]) for name in SPLITS if moments[name][0] > 0}
        for name, writer in writers.items():
            writer.manifest["range_exceedance"] = exceedance[name]
            writer.manifest["spread_ratio"] = ratios.get(name)
            if exceedance[name]:
                logger.warning("%s split: %d values outside the fitted normalization range", name, exceedance[name])

    for name, ratio in ratios.items():
        if cfg.root.n > 1 and not ratio > 1.0:
            raise NumericError(f"root n={cfg.root.n} does not widen the {name} residuals (spread ratio {ratio:.6g})")
        logger.info("Root n=%d widens the %s residual spread by %.3fx", cfg.root.n, name, ratio)
    ratio = ratios.get("train")
    result = {
        name: {"path": str(writer.path), "strata": writer.manifest["strata"], "checksum": writer.checksum}
        for name, writer in writers.items()
    }
    result["spread_ratio"] = ratio
    return result


def train_model(cfg, resume=None):
    """
    Train on the generated train/val splits and save the best checkpoint.

    Returns:
        tuple[Path, pandas.DataFrame]: Checkpoint path and training history.
    """
    datasets = {name: read_aqg(data_path(cfg, name)) for name in ("train", "val")}
    unet_cfg = cfg.unet_for(datasets["train"].channels, datasets["train"].patch_shape)
    if resume is not None:
        model, _ = load_checkpoint(resume, unet_cfg)
        logger.info("Resuming from %s", resume)
    else:
        model = build(unet_cfg)
    logger.info("Training a U-Net with %d parameters", count_params(model))
    model, history = train(model, datasets, cfg.train)
    best_epoch = int(history.loc[history["val_mse"].idxmin(), "epoch"])
    path = checkpoint_path(cfg)
    save_checkpoint(model, path, epoch=best_epoch, extra={
        "train": asdict(cfg.train),
        "dataset_checksum": datasets["train"].manifest.get("checksum_sha256"),
    })
    history.to_csv(path.parent / "history.csv", index=False)
    return path, history


def build_report(preds, targets, inputs, metas, params, grid, n=3, transform="linear", **extra):
    """
    Score root-space predictions against targets.

    :param preds: Root-space predictions [N, px, py, pz].
    :param targets: Root-space targets [N, px, py, pz].
    :param inputs: Normalized input concentrations [N, px, py, pz].
    :param metas: Sample meta frame.
    :param params: Normalization parameters of the dataset.
    :param grid: Full-domain grid.
    :param n: Root of the targets.
    :param transform: Value transform of the dataset.
    :return: The MetricsReport.
    """
    zero = persistence(targets)
    rmse, baseline, skills = {}, {}, {}
    for convention in CONVENTIONS:
        model_strata = rmse_stratified(preds, targets, metas, convention, inputs, n)
        zero_strata = rmse_stratified(zero, targets, metas, convention, inputs, n)
        rmse[convention] = model_strata._asdict()
        baseline[convention] = zero_strata._asdict()
        skills[convention] = skill(model_strata, zero_strata)
    counts = rmse["root_space"]["counts"]
    for strata in list(rmse.values()) + list(baseline.values()):
        strata.pop("counts")
    mass = mass_pct_diff(reconstruct(inputs, preds, n), reconstruct(inputs, targets, n), params, grid, metas, transform)
    levels = rmse_per_level(preds, targets, "normalized_output", inputs, n)
    return MetricsReport(
        rmse=rmse,
        persistence=baseline,
        skill=skills,
        counts=counts,
        rmse_per_level=[{"level": int(row.level), "rmse": float(row.rmse)} for row in levels.itertuples()],
        mass=[{"species_id": int(species_id), "mass_pct_diff": float(row.mass_pct_diff),
               "included": int(row.included), "excluded": int(row.excluded)}
              for species_id, row in mass.iterrows()],
        mass_pct_diff_mean=float(mass["mass_pct_diff"].mean()),
        frac_beyond_unit=float(np.mean(np.abs(preds) > 1.0)),
        **extra,
    )


def evaluate_model(cfg, checkpoint=None, data=None, samples=0, sample_level=0):
    """
    Evaluate a checkpoint on the test split and write the report.

    With ``samples > 0`` the first ``samples`` patches of every species and
    stratum are also dumped as horizontal slices to ``eval/samples.csv``.

    Returns:
        tuple[MetricsReport, Path, str]: The report, its JSON path and its checksum.
    """
    data = Path(data) if data else data_path(cfg, "test")
    checkpoint = Path(checkpoint) if checkpoint else checkpoint_path(cfg)
    dataset = read_aqg(data)
    if len(dataset) == 0:
        raise DataError(f"{data}: no samples to evaluate")
    manifest = dataset.manifest
    model, _ = load_checkpoint(checkpoint, cfg.unet_for(dataset.channels, dataset.patch_shape))
    inputs, _ = to_tensors(dataset)
    preds = predict(model, inputs, cfg.train.batch_size).numpy()[:, 0].astype(np.float64)
    targets = np.asarray(dataset.targets, dtype=np.float64)
    norm_inputs = np.asarray(dataset.inputs[:, 0], dtype=np.float64)
    metas = dataset.get_meta_frame()
    n = manifest.get("root_n", cfg.root.n)
    report = build_report(
        preds,
        targets,
        norm_inputs,
        metas,
        norm_params_of(dataset),
        cfg.grid.spec(),
        n,
        manifest.get("transform", cfg.norm.transform),
        range_exceedance=int(manifest.get("range_exceedance", 0)),
        config=cfg.to_dict(),
        checksums={"dataset": manifest.get("checksum_sha256"), "checkpoint": file_checksum(checkpoint)},
    )
    path, _, checksum = emit_report(report, cfg.out / "eval" / "report.json")
    if samples > 0:
        slices = sample_slices(norm_inputs, reconstruct(norm_inputs, targets, n), reconstruct(norm_inputs, preds, n),
                               metas, sample_level, samples)
        slices.to_csv(path.parent / "samples.csv", index=False)
        logger.info("Wrote %d sample slice cells to %s", len(slices), path.parent / "samples.csv")
    return report, path, checksum


def benchmark(cfg, checkpoint=None):
    """
    Time inference and extrapolate it to the configured and the CONUS domain.

    Without a checkpoint a freshly built model of the configured shape is timed.

    Returns:
        tuple[dict, Path]: The benchmark record and its path.
    """
    if checkpoint is not None:
        model, _ = load_checkpoint(checkpoint)
    else:
        channels = len(BASE_CHANNELS) + (len(STATIC_CHANNELS) if cfg.norm.static_channels else 0)
        model = build(cfg.unet_for(channels, cfg.grid.patch_shape))
    timing = bench_inference(model, cfg.bench.batch_size, cfg.bench.repeats, cfg.bench.warmup, cfg.seed)
    conus = DomainSpec.conus()
    domains = {
        "configured": cfg.domain(timing["batch_size"]),
        "conus": dataclasses.replace(conus, batch_size=timing["batch_size"]),
    }
    record = {
        "timing": timing,
        "parameters": count_params(model),
        "domains": {
            name: {
                **asdict(domain),
                "total_patches": domain.total_patches,
                "batches": domain.batches,
                "seconds_per_timestep": extrapolate_runtime(timing["ms_per_batch"], domain),
            }
            for name, domain in domains.items()
        },
        "reference": {
            "ms_per_batch": V100_MS_PER_BATCH,
            "batch_size": conus.batch_size,
            "batches": conus.batches,
            "seconds_per_timestep": extrapolate_runtime(V100_MS_PER_BATCH, conus),
        },
    }
    path = cfg.out / "bench" / "bench.json"
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(record, indent=4, sort_keys=True))
    return record, path


def histograms(cfg, data=None):
    """
    Four-stage histograms and the root sweep per species and level.

    Outputs are reconstructed from the stored root-space targets.

    Returns:
        pandas.DataFrame: Occupied-bin span of every emitted histogram.
    """
    dataset = read_aqg(Path(data) if data else data_path(cfg, "train"))
    if len(dataset) == 0:
        raise DataError("no samples to build histograms from")
    n = dataset.manifest.get("root_n", cfg.root.n)
    inputs = np.asarray(dataset.inputs[:, 0], dtype=np.float64)
    outputs = reconstruct(inputs, dataset.targets, n)
    depth = inputs.shape[-1]
    levels = cfg.hist.levels or tuple(range(depth))
    if max(levels) >= depth or min(levels) < 0:
        raise DataError(f"hist.levels {levels} outside the patch depth {depth}")
    root = cfg.out / "hist"
    rows = []
    for species_id, index in sorted(dataset.get_meta_frame().groupby("species_id").indices.items()):
        for level in levels:
            before, after = inputs[index, :, :, level], outputs[index, :, :, level]
            folder = root / f"species_{species_id:03d}" / f"level_{level:02d}"
            folder.mkdir(parents=True, exist_ok=True)
            tables = histogram_stages(before, after, n, cfg.hist.bins, cfg.hist.log_y)
            tables.update({f"root_n{k}": table for k, table in
                           root_sweep(before, after, cfg.hist.roots, cfg.hist.bins, cfg.hist.log_y).items()})
            for name, table in tables.items():
                table.to_csv(folder / f"{name}.csv", index=False)
                rows.append({"species_id": int(species_id), "level": level, "histogram": name,
                             "occupied_bins": occupied_span(table)})
    summary = pd.DataFrame(rows)
    summary.to_csv(root / "summary.csv", index=False)
    logger.info("Wrote %d histograms to %s", len(summary), root)
    return summary
