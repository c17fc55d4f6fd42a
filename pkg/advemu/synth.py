"""
Reproducible synthetic inputs: divergence-free winds and right-skewed
species initial conditions.

Every random draw comes from a counter-based generator keyed by
``(seed, species_id, purpose)``, so results do not depend on the order in
which species or fields are generated.
"""
import logging
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from advemu.exceptions import ConfigError, ShapeError
from advemu.grid import SpeciesField, SpeciesKind, WindField

logger = logging.getLogger(__name__)

PURPOSES = {
    "stream_a": 1,
    "stream_b": 2,
    "background": 3,
    "plumes": 4,
    "noise": 5,
    "surface": 6,
}

NO_SPECIES = 2**32 - 1


@dataclass(frozen=True)
class SynthConfig:
    """
    Controls for the synthetic data generator.

    Args:
        seed (int): Non-negative 64-bit seed.
        n_species (int): Number of species to generate.
        n_modes (int): Fourier modes per stream-function level.
        max_speed (float): Cap on the wind speed in m/s.
        plume_count (int): Gaussian plumes per species.
        plume_amplitude (float): Plume peak relative to the background mean.
        vertical_decay (float): Concentration factor applied per level, in (0, 1].
        stream_amplitude (float): Stream-function scale in m2/s before the speed cap.
        wind_rotation (float): Radians the stream function rotates between its bases per timestep.
        background_sigma (float): Log-space standard deviation of the background.
        ozone_background (float): Mean background of ozone-kind species in ppm.
        pm_background (float): Mean background of pm-kind species in ug/m3.
        correlation_cells (float): Smoothing length of the background in cells.
        plume_width_cells (float): Mean plume radius in cells.
        module_noise (float): Half-width of the multiplicative perturbation between transport calls.
    """

    seed: int = 0
    n_species: int = 8
    n_modes: int = 4
    max_speed: float = 10.0
    plume_count: int = 6
    plume_amplitude: float = 4.0
    vertical_decay: float = 0.85
    stream_amplitude: float = 5.0e5
    wind_rotation: float = 0.05
    background_sigma: float = 0.6
    ozone_background: float = 0.02
    pm_background: float = 5.0
    correlation_cells: float = 4.0
    plume_width_cells: float = 3.0
    module_noise: float = 0.005

    def __post_init__(self):
        if not 0 <= int(self.seed) < 2**64:
            raise ConfigError(f"must be a non-negative 64-bit integer, got {self.seed}", key="synth.seed")
        if self.n_species < 1:
            raise ConfigError(f"must be >= 1, got {self.n_species}", key="synth.n_species")
        if self.n_modes < 0:
            raise ConfigError(f"must be >= 0, got {self.n_modes}", key="synth.n_modes")
        if not self.max_speed > 0:
            raise ConfigError(f"must be positive, got {self.max_speed}", key="synth.max_speed")
        if not 0.0 < self.vertical_decay <= 1.0:
            raise ConfigError(f"must lie in (0, 1], got {self.vertical_decay}", key="synth.vertical_decay")
        for name in ("plume_count",):
            if getattr(self, name) < 0:
                raise ConfigError(f"must be >= 0, got {getattr(self, name)}", key=f"synth.{name}")
        for name in ("plume_amplitude", "stream_amplitude", "background_sigma", "module_noise"):
            if getattr(self, name) < 0:
                raise ConfigError(f"must be >= 0, got {getattr(self, name)}", key=f"synth.{name}")
        for name in ("ozone_background", "pm_background", "correlation_cells", "plume_width_cells"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"must be positive, got {getattr(self, name)}", key=f"synth.{name}")
        if self.module_noise >= 1:
            raise ConfigError(f"must be < 1, got {self.module_noise}", key="synth.module_noise")

    def background_for(self, kind):
        return self.ozone_background if SpeciesKind(kind) is SpeciesKind.OZONE else self.pm_background


@dataclass(frozen=True)
class StreamField:
    """Stream function in m2/s on cell corners, one 2D function per level."""

    psi: np.ndarray

    def __post_init__(self):
        psi = np.asarray(self.psi, dtype=np.float64)
        if psi.ndim != 3:
            raise ShapeError(f"stream function must be 3D, got shape {psi.shape}")
        object.__setattr__(self, "psi", psi)


def generator_for(seed, species_id, purpose):
    """Counter-based generator keyed by seed, species and purpose."""
    key = np.random.SeedSequence([int(seed), int(species_id), PURPOSES[purpose]])
    return np.random.Generator(np.random.Philox(key))


def species_kind(species_id):
    """Kinds alternate ozone, pm, ozone, ..."""
    return SpeciesKind.OZONE if species_id % 2 == 0 else SpeciesKind.PM


def _stream_basis(grid, cfg, purpose):
    rng = generator_for(cfg.seed, NO_SPECIES, purpose)
    i = np.arange(grid.nx).reshape(-1, 1)
    j = np.arange(grid.ny).reshape(1, -1)
    height = np.linspace(0.0, 1.0, grid.nz) if grid.nz > 1 else np.zeros(1)
    psi = np.zeros(grid.shape)
    for _ in range(cfg.n_modes):
        kx = int(rng.integers(0, cfg.n_modes + 1))
        ky = int(rng.integers(1 if kx == 0 else 0, cfg.n_modes + 1))
        amplitude = rng.standard_normal() / np.hypot(kx, ky)
        phase = rng.uniform(0.0, 2.0 * np.pi)
        drift = rng.uniform(-0.5 * np.pi, 0.5 * np.pi)
        horizontal = 2.0 * np.pi * (kx * i / grid.nx + ky * j / grid.ny)
        for k, s in enumerate(height):
            psi[:, :, k] += amplitude * np.cos(horizontal + phase + drift * s)
    return psi


def gen_stream(grid, cfg, time_index=0):
    """
    Random low-order Fourier stream function, smooth in the vertical.

    The field rotates between two fixed random bases by
    ``cfg.wind_rotation`` radians per timestep and is rescaled so that the
    derived wind never exceeds ``cfg.max_speed``.

    Args:
        grid (GridSpec): Grid geometry.
        cfg (SynthConfig): Generator settings.
        time_index (int): Transport timestep.

    Returns:
        StreamField: The stream function.

    Raises:
        ConfigError: If ``cfg.n_modes`` is 0 (degenerate stream).
    """
    if cfg.n_modes < 1:
        raise ConfigError("degenerate stream: at least one Fourier mode is required", key="synth.n_modes")
    angle = cfg.wind_rotation * time_index
    psi = np.cos(angle) * _stream_basis(grid, cfg, "stream_a") + np.sin(angle) * _stream_basis(grid, cfg, "stream_b")
    psi *= cfg.stream_amplitude
    peak = wind_from_stream(StreamField(psi), grid).speed().max()
    if peak > cfg.max_speed:
        psi *= cfg.max_speed / peak * (1.0 - 1e-9)
    return StreamField(psi)


def wind_from_stream(psi, grid):
    """
    Non-divergent horizontal wind from a corner-staggered stream function.

    ``u = +d(psi)/dy`` on x faces and ``v = -d(psi)/dx`` on y faces, with
    ``w = 0``. The differences are the conjugate of the ones in
    :func:`advemu.grid.discrete_divergence`, so the divergence cancels
    to round-off.

    Args:
        psi (StreamField): Stream function.
        grid (GridSpec): Grid geometry.

    Returns:
        WindField: Face velocities.
    """
    grid.check_shape(psi.psi, "stream function")
    p = psi.psi
    u = (p - np.roll(p, 1, axis=1)) / grid.dy
    v = -(p - np.roll(p, 1, axis=0)) / grid.dx
    return WindField(u, v, np.zeros_like(p))


def _smooth_unit_field(rng, grid, cfg):
    noise = rng.standard_normal((grid.nx, grid.ny))
    field = ndimage.gaussian_filter(noise, sigma=cfg.correlation_cells, mode="wrap")
    return _standardize(field)


def _standardize(field):
    field = field - field.mean()
    std = field.std()
    return field / std if std > 0 else field


def _plumes(rng, grid, cfg):
    i = np.arange(grid.nx).reshape(-1, 1)
    j = np.arange(grid.ny).reshape(1, -1)
    total = np.zeros((grid.nx, grid.ny))
    for _ in range(cfg.plume_count):
        ci, cj = rng.uniform(0, grid.nx), rng.uniform(0, grid.ny)
        width = cfg.plume_width_cells * rng.uniform(0.5, 1.5)
        peak = cfg.plume_amplitude * rng.uniform(0.5, 1.5)
        di = np.abs(i - ci)
        dj = np.abs(j - cj)
        di = np.minimum(di, grid.nx - di)
        dj = np.minimum(dj, grid.ny - dj)
        total += peak * np.exp(-(di**2 + dj**2) / (2.0 * width**2))
    return total


def gen_species_init(grid, cfg):
    """
    Initial concentrations: log-normal background plus Gaussian plumes.

    Each level is the normalized background of that level plus the
    column plumes, scaled by ``vertical_decay**k`` and by the kind's mean
    background. Backgrounds are rescaled to unit mean per level, so level
    means fall exactly by ``vertical_decay`` per level.

    Args:
        grid (GridSpec): Grid geometry.
        cfg (SynthConfig): Generator settings.

    Returns:
        list[SpeciesField]: One float32 field per species.
    """
    fields = []
    height = np.linspace(0.0, 1.0, grid.nz) if grid.nz > 1 else np.zeros(1)
    sigma = cfg.background_sigma
    for species_id in range(cfg.n_species):
        kind = species_kind(species_id)
        rng = generator_for(cfg.seed, species_id, "background")
        za = _smooth_unit_field(rng, grid, cfg)
        zb = _smooth_unit_field(rng, grid, cfg)
        plumes = _plumes(generator_for(cfg.seed, species_id, "plumes"), grid, cfg)
        values = np.empty(grid.shape)
        for k, s in enumerate(height):
            z = _standardize(np.cos(0.25 * np.pi * s) * za + np.sin(0.25 * np.pi * s) * zb)
            background = np.exp(sigma * z - 0.5 * sigma**2)
            background /= background.mean()
            values[:, :, k] = (background + plumes) * cfg.vertical_decay**k
        values *= cfg.background_for(kind)
        fields.append(SpeciesField(values.astype(np.float32), species_id, kind).check_non_negative())
    logger.info("Generated initial conditions for %d species on a %s grid", cfg.n_species, grid.shape)
    return fields


def gen_surface_fields(grid, cfg):
    """
    Static surface analogues: geopotential (m2/s2), temperature (K) and pressure (hPa).

    Returns:
        dict[str, numpy.ndarray]: Name to 2D array of shape (nx, ny).
    """
    rng = generator_for(cfg.seed, NO_SPECIES, "surface")
    terrain = ndimage.gaussian_filter(rng.standard_normal((grid.nx, grid.ny)), sigma=4 * cfg.correlation_cells, mode="wrap")
    terrain = _standardize(terrain)
    height = 500.0 + 300.0 * terrain
    height = np.clip(height, 0.0, None)
    latitude = np.linspace(0.0, 1.0, grid.ny).reshape(1, -1)
    return {
        "surface_geopotential": 9.80665 * height,
        "surface_temperature": 298.0 - 0.0065 * height - 10.0 * latitude,
        "surface_pressure": 1013.25 * np.exp(-height / 8434.0),
    }


def perturb(values, cfg, species_id, time_index):
    """
    Multiplicative perturbation standing in for the modules run between transport calls.

    Factors are uniform in ``1 +/- cfg.module_noise``; a zero noise level
    returns ``values`` unchanged.
    """
    if cfg.module_noise == 0:
        return values
    key = np.random.SeedSequence([int(cfg.seed), int(species_id), PURPOSES["noise"], int(time_index)])
    rng = np.random.Generator(np.random.Philox(key))
    return values * rng.uniform(1.0 - cfg.module_noise, 1.0 + cfg.module_noise, size=values.shape)
