"""
Training loop, checkpoint files and gradient verification for the U-Net.

Checkpoint layout (little-endian)::

    "AQCK" | version u32 | header length u32 | JSON header
    | float32 tensors in state-dict order | SHA-256 of everything before
"""
import copy
import hashlib
import json
import logging
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import pandas as pd
import torch
from torch.utils.data import DataLoader, TensorDataset

from advemu.exceptions import (
    CheckpointMismatchError,
    ChecksumError,
    ConfigError,
    DataError,
    FormatError,
    NonFiniteLossError,
)
from advemu.unet import UNetConfig, build

logger = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"AQCK"
CHECKPOINT_VERSION = 1
PREFIX_DTYPE = np.dtype([("magic", "S4"), ("version", "<u4"), ("header_length", "<u4")])
DIGEST_SIZE = 32


@dataclass(frozen=True)
class TrainConfig:
    """
    Optimizer and schedule settings.

    Args:
        lr (float): Adam learning rate.
        beta1 (float): Adam first-moment decay.
        beta2 (float): Adam second-moment decay.
        eps (float): Adam epsilon.
        batch_size (int): Samples per step.
        epochs (int): Passes over the training split.
        seed (int): Seed for the shuffling order.
    """

    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 32
    epochs: int = 20
    seed: int = 0

    def __post_init__(self):
        if self.lr < 0:
            raise ConfigError(f"must be >= 0, got {self.lr}", key="train.lr")
        for name in ("beta1", "beta2"):
            if not 0.0 <= getattr(self, name) < 1.0:
                raise ConfigError(f"must lie in [0, 1), got {getattr(self, name)}", key=f"train.{name}")
        if self.batch_size < 1:
            raise ConfigError(f"must be >= 1, got {self.batch_size}", key="train.batch_size")
        if self.epochs < 0:
            raise ConfigError(f"must be >= 0, got {self.epochs}", key="train.epochs")


def to_tensors(dataset):
    """Inputs [N, C, px, py, pz] and targets [N, 1, px, py, pz] as float32 tensors."""
    inputs = torch.from_numpy(np.array(dataset.inputs, dtype=np.float32))
    targets = torch.from_numpy(np.array(dataset.targets, dtype=np.float32)).unsqueeze(1)
    return inputs, targets


def predict(model, inputs, batch_size=32):
    """Root-space predictions for a stacked input tensor, in evaluation mode."""
    model.eval()
    outputs = []
    dtype = next(model.parameters()).dtype
    with torch.inference_mode():
        for start in range(0, len(inputs), batch_size):
            outputs.append(model(inputs[start:start + batch_size].to(dtype)))
    if not outputs:
        return torch.zeros((0, model.cfg.out_channels) + model.cfg.patch)
    return torch.cat(outputs)


def evaluate(model, inputs, targets, batch_size=32):
    """
    Mean squared error and fraction of |prediction| > 1 over a split.

    Returns:
        tuple[float, float]: (mse, fraction beyond the unit bound).
    """
    if len(inputs) == 0:
        return float("nan"), float("nan")
    predictions = predict(model, inputs, batch_size).double()
    mse = torch.mean((predictions - targets.double()) ** 2).item()
    beyond = torch.mean((predictions.abs() > 1.0).double()).item()
    return mse, beyond


def train(model, datasets, tc):
    """
    Fit the model with MSE loss and Adam.

    The model ends up holding the parameters of the epoch with the lowest
    validation MSE (the initial parameters count as epoch 0).

    Args:
        model (UNet3D): Model to train in place.
        datasets (dict): ``train`` and ``val`` AQGDataset objects.
        tc (TrainConfig): Optimizer settings.

    Returns:
        tuple[UNet3D, pandas.DataFrame]: The model and the per-epoch history with
        columns epoch, train_mse, val_mse, frac_beyond_unit.

    Raises:
        DataError: If a split is empty.
        NonFiniteLossError: If a batch produces a non-finite loss.
    """
    for split in ("train", "val"):
        if split not in datasets or len(datasets[split]) == 0:
            raise DataError(f"the {split} split is empty")
    train_x, train_y = to_tensors(datasets["train"])
    val_x, val_y = to_tensors(datasets["val"])
    meta = datasets["train"].get_meta_frame()
    indices = torch.arange(len(train_x))
    loader = DataLoader(
        TensorDataset(train_x, train_y, indices),
        batch_size=tc.batch_size,
        shuffle=True,
        generator=torch.Generator().manual_seed(tc.seed),
    )
    optimizer = torch.optim.Adam(model.parameters(), lr=tc.lr, betas=(tc.beta1, tc.beta2), eps=tc.eps)
    loss_fn = torch.nn.MSELoss()

    train_mse, _ = evaluate(model, train_x, train_y, tc.batch_size)
    val_mse, beyond = evaluate(model, val_x, val_y, tc.batch_size)
    history = [{"epoch": 0, "train_mse": train_mse, "val_mse": val_mse, "frac_beyond_unit": beyond}]
    best_val, best_state = val_mse, copy.deepcopy(model.state_dict())
    logger.info("epoch 0: train_mse=%.6g val_mse=%.6g", train_mse, val_mse)

    for epoch in range(1, tc.epochs + 1):
        model.train()
        total, count = 0.0, 0
        for x, y, index in loader:
            optimizer.zero_grad()
            loss = loss_fn(model(x), y)
            if not torch.isfinite(loss):
                raise NonFiniteLossError(loss.item(), meta.iloc[index.numpy()])
            loss.backward()
            optimizer.step()
            total += loss.item() * len(x)
            count += len(x)
        val_mse, beyond = evaluate(model, val_x, val_y, tc.batch_size)
        history.append({"epoch": epoch, "train_mse": total / count, "val_mse": val_mse, "frac_beyond_unit": beyond})
        logger.info("epoch %d: train_mse=%.6g val_mse=%.6g beyond=%.4f", epoch, total / count, val_mse, beyond)
        if val_mse < best_val:
            best_val, best_state = val_mse, copy.deepcopy(model.state_dict())

    model.load_state_dict(best_state)
    return model, pd.DataFrame(history)


def save_checkpoint(model, path, epoch=0, extra=None):
    """
    Write the model parameters with a config echo and checksum.

    Args:
        model (UNet3D): Model to save.
        path (str | Path): Destination file.
        epoch (int): Epoch recorded in the header.
        extra (dict): Additional JSON-serializable header entries.

    Returns:
        str: SHA-256 hex digest stored at the end of the file.
    """
    state = model.state_dict()
    header = {
        "version": CHECKPOINT_VERSION,
        "config": model.cfg.to_dict(),
        "params": [[name, list(tensor.shape)] for name, tensor in state.items()],
        "epoch": int(epoch),
        "extra": extra or {},
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    prefix = np.zeros(1, dtype=PREFIX_DTYPE)
    prefix[0] = (CHECKPOINT_MAGIC, CHECKPOINT_VERSION, len(header_bytes))
    body = b"".join(tensor.detach().cpu().numpy().astype("<f4").tobytes() for tensor in state.values())
    payload = prefix.tobytes() + header_bytes + body
    digest = hashlib.sha256(payload).digest()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(payload + digest)
    logger.info("Saved checkpoint to %s", path)
    return digest.hex()


def _config_mismatches(saved, cfg):
    mismatches = []
    expected = cfg.to_dict()
    for key in sorted(set(saved) | set(expected)):
        if key == "seed":
            continue
        if key == "patch":
            for axis, a, b in zip(("x", "y", "z"), saved.get(key, []), expected[key]):
                if a != b:
                    mismatches.append(f"patch axis {axis}: checkpoint {a}, config {b}")
        elif saved.get(key) != expected.get(key):
            mismatches.append(f"{key}: checkpoint {saved.get(key)}, config {expected.get(key)}")
    return mismatches


def load_checkpoint(path, cfg=None):
    """
    Rebuild a model from a checkpoint.

    Args:
        path (str | Path): Checkpoint file.
        cfg (UNetConfig): If given, the checkpoint must match it.

    Returns:
        tuple[UNet3D, dict]: The model and the checkpoint header.

    Raises:
        FormatError: On bad magic, unsupported version or truncation.
        ChecksumError: If the stored digest does not match the content.
        CheckpointMismatchError: If the checkpoint does not fit ``cfg``.
    """
    payload = Path(path).read_bytes()
    if len(payload) < PREFIX_DTYPE.itemsize + DIGEST_SIZE:
        raise FormatError(f"{path}: truncated checkpoint", offset=len(payload))
    prefix = np.frombuffer(payload, dtype=PREFIX_DTYPE, count=1)[0]
    if prefix["magic"] != CHECKPOINT_MAGIC:
        raise FormatError(f"{path}: bad magic {bytes(prefix['magic'])!r}", offset=0)
    if prefix["version"] != CHECKPOINT_VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {int(prefix['version'])}", offset=4)
    content, digest = payload[:-DIGEST_SIZE], payload[-DIGEST_SIZE:]
    if hashlib.sha256(content).digest() != digest:
        raise ChecksumError(f"{path}: checkpoint checksum mismatch", offset=len(content))
    start = PREFIX_DTYPE.itemsize
    end = start + int(prefix["header_length"])
    try:
        header = json.loads(content[start:end].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as error:
        raise FormatError(f"{path}: unreadable header ({error})", offset=start) from None
    saved_cfg = UNetConfig(**header["config"])
    if cfg is not None:
        mismatches = _config_mismatches(header["config"], cfg)
        if mismatches:
            raise CheckpointMismatchError(mismatches)
    model = build(saved_cfg)
    state = model.state_dict()
    offset = end
    loaded = {}
    mismatches = []
    for name, shape in header["params"]:
        if name not in state or list(state[name].shape) != shape:
            mismatches.append(f"{name}: checkpoint shape {shape}, model shape "
                              f"{list(state[name].shape) if name in state else 'missing'}")
            continue
        size = int(np.prod(shape)) * 4
        if offset + size > len(content):
            raise FormatError(f"{path}: truncated tensor {name}", offset=len(content))
        array = np.frombuffer(content, dtype="<f4", count=size // 4, offset=offset).reshape(shape)
        loaded[name] = torch.from_numpy(array.astype(np.float32))
        offset += size
    if mismatches or set(loaded) != set(state):
        raise CheckpointMismatchError(mismatches or ["parameter names differ"])
    if offset != len(content):
        raise FormatError(f"{path}: {len(content) - offset} unexpected bytes after tensors", offset=offset)
    model.load_state_dict(loaded)
    return model, header


def gradient_check(cfg, n_params=100, h=1e-7, rtol=1e-3, atol=1e-8, seed=0):
    """
    Compare autograd gradients with central finite differences in float64.

    The output projection is randomly initialized so gradients reach
    every layer.

    Args:
        cfg (UNetConfig): Architecture to check.
        n_params (int): Number of scalar parameters sampled.
        h (float): Finite-difference step.
        rtol (float): Allowed relative error.
        atol (float): Absolute floor for vanishing gradients.
        seed (int): Seed for the inputs and the parameter sample.

    Returns:
        pandas.DataFrame: One row per sampled parameter with columns name, index,
        analytic, numeric, rel_error, ok.
    """
    cfg = UNetConfig(**{**asdict(cfg), "zero_init_final": False})
    model = build(cfg).double()
    generator = torch.Generator().manual_seed(seed)
    x = torch.rand((1, cfg.in_channels) + cfg.patch, generator=generator, dtype=torch.float64)
    y = torch.rand((1, cfg.out_channels) + cfg.patch, generator=generator, dtype=torch.float64) * 2 - 1
    loss_fn = torch.nn.MSELoss()

    model.zero_grad()
    loss_fn(model(x), y).backward()
    named = [(name, p) for name, p in model.named_parameters()]
    sizes = np.array([p.numel() for _, p in named])
    rng = np.random.default_rng(seed)
    flat_choices = rng.choice(sizes.sum(), size=min(n_params, int(sizes.sum())), replace=False)
    bounds = np.cumsum(sizes)

    rows = []
    with torch.no_grad():
        for flat in np.sort(flat_choices):
            which = int(np.searchsorted(bounds, flat, side="right"))
            name, param = named[which]
            index = int(flat - (bounds[which] - sizes[which]))
            view = param.view(-1)
            original = view[index].item()
            view[index] = original + h
            plus = loss_fn(model(x), y).item()
            view[index] = original - h
            minus = loss_fn(model(x), y).item()
            view[index] = original
            numeric = (plus - minus) / (2 * h)
            analytic = param.grad.view(-1)[index].item()
            error = abs(analytic - numeric)
            scale = max(abs(analytic), abs(numeric))
            rows.append({
                "name": name,
                "index": index,
                "analytic": analytic,
                "numeric": numeric,
                "rel_error": error / scale if scale > 0 else 0.0,
                "ok": error <= rtol * scale + atol,
            })
    return pd.DataFrame(rows)
