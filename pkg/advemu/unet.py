"""
3D U-Net emulator.

Each encoder level applies two 3x3x3 convolutions with ReLU and then halves
every axis that is still at least 2 cells long; axes that reach 1 stop
downsampling. The decoder mirrors the encoder with transposed convolutions
and skip concatenation, and a zero-initialized 1x1x1 projection produces
the output, so a fresh model predicts no change.
"""
from dataclasses import asdict, dataclass

import torch
from torch import nn

from advemu.exceptions import ConfigError, ShapeError

AXES = ("x", "y", "z")
ACTIVATIONS = ("identity", "tanh")


@dataclass(frozen=True)
class UNetConfig:
    """
    Architecture settings.

    Args:
        levels (int): Down/up blocks.
        base_channels (int): Width of the first level; widths double per level.
        in_channels (int): Input channels per sample.
        out_channels (int): Output channels.
        patch (tuple[int, int, int]): Patch size (px, py, pz).
        final_activation (str): ``identity`` or ``tanh``.
        zero_init_final (bool): Start the output projection at zero.
        seed (int): Seed for parameter initialization.
    """

    levels: int = 4
    base_channels: int = 8
    in_channels: int = 5
    out_channels: int = 1
    patch: tuple = (32, 32, 16)
    final_activation: str = "identity"
    zero_init_final: bool = True
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "patch", tuple(int(p) for p in self.patch))
        if self.levels < 1:
            raise ConfigError(f"must be >= 1, got {self.levels}", key="unet.levels")
        for name in ("base_channels", "in_channels", "out_channels"):
            if getattr(self, name) < 1:
                raise ConfigError(f"must be >= 1, got {getattr(self, name)}", key=f"unet.{name}")
        if len(self.patch) != 3 or min(self.patch) < 1:
            raise ConfigError(f"must be three positive sizes, got {self.patch}", key="unet.patch")
        if self.final_activation not in ACTIVATIONS:
            raise ConfigError(f"must be one of {ACTIVATIONS}, got '{self.final_activation}'",
                              key="unet.final_activation")

    def widths(self):
        return [self.base_channels * 2**level for level in range(self.levels + 1)]

    def pool_factors(self):
        """
        Per-level downsampling factors for each axis.

        Raises:
            ShapeError: If an axis has an odd size greater than 1 where it must be halved.
        """
        size = list(self.patch)
        factors = []
        for level in range(self.levels):
            level_factors = []
            for axis, n in enumerate(size):
                if n == 1:
                    level_factors.append(1)
                    continue
                if n % 2:
                    raise ShapeError(
                        f"patch size {self.patch[axis]} cannot be halved at level {level} (size {n} is odd)",
                        axis=AXES[axis])
                level_factors.append(2)
                size[axis] = n // 2
            factors.append(tuple(level_factors))
        return factors

    def to_dict(self):
        data = asdict(self)
        data["patch"] = list(self.patch)
        return data

    @classmethod
    def paper_shape(cls, **overrides):
        """Full-scale widths: base 64, doubling per level."""
        return cls(**{"levels": 4, "base_channels": 64, **overrides})


def double_conv(in_channels, out_channels):
    return nn.Sequential(
        nn.Conv3d(in_channels, out_channels, kernel_size=3, padding=1),
        nn.ReLU(inplace=True),
        nn.Conv3d(out_channels, out_channels, kernel_size=3, padding=1),
        nn.ReLU(inplace=True),
    )


class UNet3D(nn.Module):
    def __init__(self, cfg):
        super().__init__()
        self.cfg = cfg
        widths = cfg.widths()
        self.factors = cfg.pool_factors()
        self.encoders = nn.ModuleList()
        self.pools = nn.ModuleList()
        in_channels = cfg.in_channels
        for level in range(cfg.levels):
            self.encoders.append(double_conv(in_channels, widths[level]))
            self.pools.append(nn.MaxPool3d(kernel_size=self.factors[level], stride=self.factors[level]))
            in_channels = widths[level]
        self.bottleneck = double_conv(widths[cfg.levels - 1], widths[cfg.levels])
        self.ups = nn.ModuleList()
        self.decoders = nn.ModuleList()
        for level in reversed(range(cfg.levels)):
            self.ups.append(nn.ConvTranspose3d(widths[level + 1], widths[level],
                                               kernel_size=self.factors[level], stride=self.factors[level]))
            self.decoders.append(double_conv(2 * widths[level], widths[level]))
        self.head = nn.Conv3d(widths[0], cfg.out_channels, kernel_size=1)
        if cfg.zero_init_final:
            nn.init.zeros_(self.head.weight)
            nn.init.zeros_(self.head.bias)

    def forward(self, x):
        skips = []
        for encoder, pool in zip(self.encoders, self.pools):
            x = encoder(x)
            skips.append(x)
            x = pool(x)
        x = self.bottleneck(x)
        for up, decoder, skip in zip(self.ups, self.decoders, reversed(skips)):
            x = decoder(torch.cat([up(x), skip], dim=1))
        x = self.head(x)
        if self.cfg.final_activation == "tanh":
            x = torch.tanh(x)
        return x


def build(cfg):
    """
    Build a U-Net with parameters initialized deterministically from ``cfg.seed``.

    The global torch RNG state is left untouched.
    """
    cfg.pool_factors()
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(cfg.seed)
        return UNet3D(cfg)


def count_params(model):
    return sum(p.numel() for p in model.parameters() if p.requires_grad)


def forward(model, batch):
    """
    Evaluate the model on a batch without tracking gradients.

    Args:
        model (UNet3D): The model.
        batch (torch.Tensor | numpy.ndarray): Inputs [B, C, px, py, pz].

    Returns:
        torch.Tensor: Predictions [B, out_channels, px, py, pz].

    Raises:
        ShapeError: If the batch does not match the model configuration.
    """
    batch = torch.as_tensor(batch)
    expected = (model.cfg.in_channels,) + model.cfg.patch
    if batch.ndim != 5 or tuple(batch.shape[1:]) != expected:
        raise ShapeError(f"batch has shape {tuple(batch.shape)}, expected (B, {', '.join(map(str, expected))})")
    dtype = next(model.parameters()).dtype
    model.eval()
    with torch.inference_mode():
        return model(batch.to(dtype))
