"""
Experiment configuration: a tree of frozen dataclasses loaded from TOML.
"""
import dataclasses
import logging
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from dataclasses import asdict, dataclass, field
from pathlib import Path

from advemu.bench import DomainSpec
from advemu.exceptions import ConfigError, ShapeError
from advemu.grid import GridSpec
from advemu.oracle import StepParams
from advemu.patches import SplitPolicy, Thresholds
from advemu.report import HistConfig
from advemu.synth import SynthConfig
from advemu.training import TrainConfig
from advemu.transform import MODES, TRANSFORMS, RootSpec
from advemu.unet import UNetConfig

logger = logging.getLogger(__name__)

PRESETS = ("desk", "paper-shape")
SEEDED_SECTIONS = ("synth", "split", "train", "unet")
DEFAULT_THICKNESS = tuple(round(40.0 * 1.25**k, 3) for k in range(16))


@dataclass(frozen=True)
class GridConfig:
    """
    Grid geometry and patch layout.

    Args:
        nx (int): Cells along x.
        ny (int): Cells along y.
        nz (int): Vertical levels.
        dx (float): Spacing along x in meters.
        dy (float): Spacing along y in meters.
        layer_thickness (tuple[float]): Level thicknesses in meters, lowest first.
        rows (int): Patch rows along x.
        cols (int): Patch columns along y.
        depth (int): Lowest levels kept per patch.
    """

    nx: int = 128
    ny: int = 192
    nz: int = 16
    dx: float = 12000.0
    dy: float = 12000.0
    layer_thickness: tuple = DEFAULT_THICKNESS
    rows: int = 4
    cols: int = 6
    depth: int = 16

    def __post_init__(self):
        object.__setattr__(self, "layer_thickness", tuple(float(t) for t in self.layer_thickness))
        if self.depth < 1:
            raise ConfigError(f"must be >= 1, got {self.depth}", key="grid.depth")
        try:
            self.spec().check_patch_grid(self.rows, self.cols)
        except ShapeError as error:
            raise ConfigError(str(error), key="grid.rows" if error.axis == "x" else "grid.cols") from None

    def spec(self):
        return GridSpec(self.nx, self.ny, self.nz, self.dx, self.dy, self.layer_thickness)

    @property
    def patch_shape(self):
        return (self.nx // self.rows, self.ny // self.cols, min(self.depth, self.nz))


@dataclass(frozen=True)
class NormConfig:
    """
    Normalization settings.

    Args:
        mode (str): Min-max grouping.
        transform (str): ``linear`` min-max or the ``log`` chain.
        static_channels (bool): Add the static surface channels to the inputs.
    """

    mode: str = "per_species_per_level"
    transform: str = "linear"
    static_channels: bool = False

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"must be one of {MODES}, got '{self.mode}'", key="norm.mode")
        if self.transform not in TRANSFORMS:
            raise ConfigError(f"must be one of {TRANSFORMS}, got '{self.transform}'", key="norm.transform")


@dataclass(frozen=True)
class BenchConfig:
    batch_size: int = 32
    repeats: int = 50
    warmup: int = 5

    def __post_init__(self):
        if self.batch_size < 1 or self.repeats < 1 or self.warmup < 0:
            raise ConfigError(
                f"need batch_size >= 1, repeats >= 1, warmup >= 0; got {self.batch_size}, "
                f"{self.repeats}, {self.warmup}", key="bench")


SECTIONS = {
    "grid": GridConfig,
    "synth": SynthConfig,
    "step": StepParams,
    "thresholds": Thresholds,
    "norm": NormConfig,
    "root": RootSpec,
    "unet": UNetConfig,
    "train": TrainConfig,
    "split": SplitPolicy,
    "hist": HistConfig,
    "bench": BenchConfig,
}
SCALARS = {"out_dir": str, "seed": int, "threads": int, "timesteps": int}


@dataclass(frozen=True)
class ExperimentConfig:
    """
    Everything one experiment needs; echoed into every manifest and report.

    ``timesteps`` counts recorded snapshots, so a run has ``timesteps - 1``
    transport pairs per species.
    """

    grid: GridConfig = field(default_factory=GridConfig)
    synth: SynthConfig = field(default_factory=SynthConfig)
    step: StepParams = field(default_factory=StepParams)
    thresholds: Thresholds = field(default_factory=Thresholds)
    norm: NormConfig = field(default_factory=NormConfig)
    root: RootSpec = field(default_factory=RootSpec)
    unet: UNetConfig = field(default_factory=UNetConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    split: SplitPolicy = field(default_factory=SplitPolicy)
    hist: HistConfig = field(default_factory=HistConfig)
    bench: BenchConfig = field(default_factory=BenchConfig)
    out_dir: str = "out"
    seed: int = 0
    threads: int = 1
    timesteps: int = 49

    def __post_init__(self):
        if self.timesteps < 3:
            raise ConfigError(f"must be >= 3, got {self.timesteps}", key="timesteps")
        if self.threads < 1:
            raise ConfigError(f"must be >= 1, got {self.threads}", key="threads")
        if self.seed < 0:
            raise ConfigError(f"must be >= 0, got {self.seed}", key="seed")

    @property
    def out(self):
        return Path(self.out_dir)

    def unet_for(self, channels, patch_shape):
        """The U-Net configuration matching a dataset's channels and patch size."""
        return dataclasses.replace(self.unet, in_channels=int(channels), patch=tuple(patch_shape))

    def domain(self, batch_size=None):
        """The configured domain for runtime extrapolation."""
        depth = min(self.grid.depth, self.grid.nz)
        return DomainSpec(self.grid.rows, self.grid.cols, self.grid.nz, depth,
                          self.synth.n_species, batch_size or self.bench.batch_size)

    def to_dict(self):
        return asdict(self)


def _check_type(value, expected, key):
    if expected is bool:
        ok = isinstance(value, bool)
    elif expected is int:
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif expected is float:
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
        value = float(value) if ok else value
    elif expected is tuple:
        ok = isinstance(value, (list, tuple))
        value = tuple(value) if ok else value
    else:
        ok = isinstance(value, expected)
    if not ok:
        raise ConfigError(f"expected {expected.__name__}, got {type(value).__name__} ({value!r})", key=key)
    return value


def _section(cls, data, name):
    if not isinstance(data, dict):
        raise ConfigError(f"expected a table, got {type(data).__name__}", key=name)
    known = {f.name: f for f in dataclasses.fields(cls)}
    values = {}
    for key, value in data.items():
        if key not in known:
            raise ConfigError("unknown key", key=f"{name}.{key}")
        values[key] = _check_type(value, known[key].type, f"{name}.{key}")
    return values


def _merge(base, data):
    merged = {key: dict(value) if isinstance(value, dict) else value for key, value in base.items()}
    for key, value in data.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = {**merged[key], **value}
        else:
            merged[key] = value
    return merged


def preset(name):
    """Raw overrides of a named preset."""
    if name not in PRESETS:
        raise ConfigError(f"must be one of {PRESETS}, got '{name}'", key="preset")
    if name == "paper-shape":
        return {"unet": {"levels": 4, "base_channels": 64}}
    return {}


def from_dict(data, preset_name="desk"):
    """
    Build an :class:`ExperimentConfig` from nested tables.

    A top-level ``seed`` seeds every seeded section that does not set its
    own seed.

    Raises:
        ConfigError: On unknown keys, wrong types or invalid values, naming the dotted key.
    """
    data = _merge(preset(preset_name), data)
    kwargs = {}
    for key, value in data.items():
        if key in SECTIONS:
            continue
        if key not in SCALARS:
            raise ConfigError("unknown key", key=key)
        kwargs[key] = _check_type(value, SCALARS[key], key)
    seed = kwargs.get("seed")
    for name, cls in SECTIONS.items():
        values = _section(cls, data.get(name, {}), name)
        if seed is not None and name in SEEDED_SECTIONS:
            values.setdefault("seed", seed)
        kwargs[name] = cls(**values)
    return ExperimentConfig(**kwargs)


def load_config(path=None, preset_name="desk", overrides=None):
    """
    Load a TOML config file and apply overrides.

    Args:
        path (str | Path): TOML file; None uses the preset alone.
        preset_name (str): ``desk`` or ``paper-shape``.
        overrides (dict): Nested tables applied over the file (e.g. from CLI flags).

    Returns:
        ExperimentConfig: The validated configuration.
    """
    data = {}
    if path is not None:
        try:
            with open(path, "rb") as handle:
                data = tomllib.load(handle)
        except tomllib.TOMLDecodeError as error:
            raise ConfigError(f"{path}: {error}", key="file") from None
    overrides = overrides or {}
    if "seed" in overrides:
        # A seed flag replaces every section seed, including ones set in the file.
        for name in SEEDED_SECTIONS:
            data.setdefault(name, {}).pop("seed", None)
    config = from_dict(_merge(data, overrides), preset_name)
    logger.info("Loaded configuration (preset %s%s)", preset_name, f", file {path}" if path else "")
    return config
