import argparse
import logging
from pathlib import Path

import torch

from advemu.config import PRESETS, load_config
from advemu.exceptions import AdvemuError
from advemu.pipeline import benchmark, evaluate_model, generate, histograms, train_model

logger = logging.getLogger(__name__)

IO_EXIT_CODE = 5


def _fmt(value):
    return "absent" if value is None else f"{value:.6g}"


def cmd_gen(cfg, args):
    result = generate(cfg)
    print(f"Spread ratio of the n={cfg.root.n} root target: {result['spread_ratio']:.4f}")
    for split in ("train", "val", "test"):
        strata = result[split]["strata"]
        print(f"{split}: {strata['all']} patches ({strata['extreme']} extreme, "
              f"{strata['non_extreme']} non-extreme) saved to {result[split]['path']}")
    return 0


def cmd_train(cfg, args):
    path, history = train_model(cfg, resume=args.resume)
    last = history.iloc[-1]
    best = history.loc[history["val_mse"].idxmin()]
    print(f"Epoch {int(last['epoch'])}: train MSE {last['train_mse']:.6g}, val MSE {last['val_mse']:.6g}")
    print(f"Best validation MSE {best['val_mse']:.6g} at epoch {int(best['epoch'])}")
    print(f"Checkpoint saved to {path}")
    return 0


def cmd_eval(cfg, args):
    report, path, checksum = evaluate_model(cfg, checkpoint=args.checkpoint, data=args.data,
                                            samples=args.samples, sample_level=args.sample_level)
    for convention, strata in report.rmse.items():
        print(f"RMSE ({convention}): all {_fmt(strata['all'])}, extreme {_fmt(strata['extreme'])}, "
              f"non-extreme {_fmt(strata['nonextreme'])}")
    print(f"Mean mass percent difference: {report.mass_pct_diff_mean:.6g}%")
    print(f"Report saved to {path} (sha256 {checksum})")
    return 0


def cmd_bench(cfg, args):
    record, path = benchmark(cfg, checkpoint=args.checkpoint)
    timing = record["timing"]
    print(f"Inference: {timing['ms_per_batch']:.3f} ms per batch of {timing['batch_size']} "
          f"({timing['environment']['threads']} threads)")
    for name, domain in record["domains"].items():
        print(f"{name}: {domain['batches']} batches, {domain['seconds_per_timestep']:.3f} s per timestep")
    print(f"Benchmark saved to {path}")
    return 0


def cmd_hist(cfg, args):
    summary = histograms(cfg, data=args.data)
    print(f"{len(summary)} histograms saved to {cfg.out / 'hist'}")
    return 0


COMMANDS = {
    "gen": cmd_gen,
    "train": cmd_train,
    "eval": cmd_eval,
    "bench": cmd_bench,
    "hist": cmd_hist,
}


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="TOML experiment configuration")
    common.add_argument("--out", type=Path, help="Output directory (overrides out_dir)")
    common.add_argument("--seed", type=int, help="Seed for generation, splitting and training")
    common.add_argument("--threads", type=int, help="Worker threads")
    common.add_argument("--preset", choices=PRESETS, default="desk", help="Base configuration (default: desk)")
    verbosity = common.add_mutually_exclusive_group()
    verbosity.add_argument("-v", "--verbose", action="store_true", help="Log debug messages")
    verbosity.add_argument("-q", "--quiet", action="store_true", help="Log warnings and errors only")

    parser = argparse.ArgumentParser(prog="advemu", description="Advective transport emulator laboratory")
    commands = parser.add_subparsers(dest="command", required=True)
    commands.add_parser("gen", parents=[common], help="Generate the train/val/test datasets")
    train = commands.add_parser("train", parents=[common], help="Train the U-Net")
    train.add_argument("--resume", type=Path, help="Continue from this checkpoint")
    evaluate = commands.add_parser("eval", parents=[common], help="Evaluate a checkpoint on the test split")
    evaluate.add_argument("--checkpoint", type=Path, help="Checkpoint (default: OUT/model/best.ckpt)")
    evaluate.add_argument("--data", type=Path, help="Dataset (default: OUT/data/test.aqg)")
    evaluate.add_argument("--samples", type=int, default=0,
                          help="Patches per species and stratum dumped to OUT/eval/samples.csv (default: 0, none)")
    evaluate.add_argument("--sample-level", type=int, default=0, help="Patch level of the dumped slices")
    bench = commands.add_parser("bench", parents=[common], help="Time inference and extrapolate runtimes")
    bench.add_argument("--checkpoint", type=Path, help="Checkpoint (default: a freshly built model)")
    hist = commands.add_parser("hist", parents=[common], help="Emit histogram CSVs")
    hist.add_argument("--data", type=Path, help="Dataset (default: OUT/data/train.aqg)")
    return parser


def overrides_from(args):
    overrides = {}
    if args.out is not None:
        overrides["out_dir"] = str(args.out)
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.threads is not None:
        overrides["threads"] = args.threads
    return overrides


def main(argv=None):
    """
    Run one subcommand.

    Returns:
        int: 0 on success, 2 for configuration errors, 3 for data and format
        errors, 4 for numeric errors and 5 for I/O errors.
    """
    args = build_parser().parse_args(argv)
    level = logging.DEBUG if args.verbose else logging.WARNING if args.quiet else logging.INFO
    logging.basicConfig(level=level, format="%(asctime)s - %(levelname)s - %(message)s")
    logging.getLogger("advemu").setLevel(level)
    try:
        cfg = load_config(args.config, args.preset, overrides_from(args))
        torch.set_num_threads(cfg.threads)
        return COMMANDS[args.command](cfg, args)
    except AdvemuError as error:
        logger.error("%s: %s", type(error).__name__, error)
        return error.exit_code
    except OSError as error:
        logger.error("I/O error: %s", error)
        return IO_EXIT_CODE
