"""
Reference transport solver producing before/after transport pairs.

Two schemes share one grid convention:

- ``fv_upwind``: first-order upwind in flux form. Linear, conservative,
  preserves constants when the wind is discretely divergence-free.
- ``semi_lagrangian``: backward trajectories with periodic trilinear
  interpolation in advective form. Commutes with affine maps of the field.
"""
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from advemu.exceptions import CFLError, ConfigError, DataError, NumericError
from advemu.grid import SpeciesField, WindField, backward_difference, total_mass
from advemu.synth import gen_species_init, gen_stream, perturb, wind_from_stream

logger = logging.getLogger(__name__)

SCHEMES = ("fv_upwind", "semi_lagrangian")


@dataclass(frozen=True)
class StepParams:
    """
    Solver settings for one transport timestep.

    Args:
        dt (float): Sub-step length in seconds.
        scheme (str): ``fv_upwind`` or ``semi_lagrangian``.
        steps_per_pair (int): Sub-steps composed into one transport timestep.
    """

    dt: float = 600.0
    scheme: str = "fv_upwind"
    steps_per_pair: int = 3

    def __post_init__(self):
        if not self.dt > 0:
            raise ConfigError(f"must be positive, got {self.dt}", key="step.dt")
        if self.scheme not in SCHEMES:
            raise ConfigError(f"must be one of {SCHEMES}, got '{self.scheme}'", key="step.scheme")
        if self.steps_per_pair < 1:
            raise ConfigError(f"must be >= 1, got {self.steps_per_pair}", key="step.steps_per_pair")


@dataclass(frozen=True)
class PairRecord:
    """One species before and after a transport timestep, with the wind that moved it."""

    input: SpeciesField
    output: SpeciesField
    time_index: int
    species_id: int
    wind: WindField = None


def courant_number(wind, grid, dt):
    """
    Largest outflow Courant number of the unsplit upwind update.

    Each cell sums ``dt * speed / spacing`` over the faces it drains
    through, so the update is positivity preserving exactly when the
    result is at most 1. For a uniform wind along one axis this is ``|u| dt / dx``.
    """
    dz = grid.thickness.reshape(1, 1, -1)
    outflow = (
        (np.maximum(wind.u, 0.0) - np.minimum(np.roll(wind.u, 1, axis=0), 0.0)) / grid.dx
        + (np.maximum(wind.v, 0.0) - np.minimum(np.roll(wind.v, 1, axis=1), 0.0)) / grid.dy
        + (np.maximum(wind.w, 0.0) - np.minimum(np.roll(wind.w, 1, axis=2), 0.0)) / dz
    )
    return float(np.max(outflow) * dt)


def _check_inputs(c, wind, grid):
    if not isinstance(c, SpeciesField):
        c = SpeciesField(c, species_id=-1)
    grid.check_shape(c.values, "species field")
    grid.check_shape(wind.u, "wind")
    if not np.all(np.isfinite(c.values)):
        raise NumericError(f"species {c.species_id} contains non-finite values")
    return c


def _upwind_flux(q, velocity, axis):
    return np.maximum(velocity, 0.0) * q + np.minimum(velocity, 0.0) * np.roll(q, -1, axis=axis)


def advect_fv(c, wind, grid, p):
    """
    One first-order upwind step of ``dc/dt + div(v c) = 0``.

    All three flux divergences are taken from the same old field, so the
    update is linear in ``c``, telescopes to exact mass conservation on the
    periodic grid and leaves constants unchanged when
    :func:`advemu.grid.discrete_divergence` of the wind is zero.

    Args:
        c (SpeciesField): Concentrations.
        wind (WindField): Face velocities.
        grid (GridSpec): Grid geometry.
        p (StepParams): ``p.dt`` is the step length.

    Returns:
        SpeciesField: Advected field in the dtype of ``c``.

    Raises:
        CFLError: If the outflow Courant number of :func:`courant_number` exceeds 1.
        NumericError: If ``c`` contains NaN.
    """
    c = _check_inputs(c, wind, grid)
    cfl = courant_number(wind, grid, p.dt)
    if cfl > 1.0:
        raise CFLError(cfl)
    q = c.values.astype(np.float64)
    dz = grid.thickness.reshape(1, 1, -1)
    tendency = (
        backward_difference(_upwind_flux(q, wind.u, 0), 0, grid.dx)
        + backward_difference(_upwind_flux(q, wind.v, 1), 1, grid.dy)
        + backward_difference(_upwind_flux(q, wind.w, 2), 2, dz)
    )
    logger.debug("fv step: cfl=%.4f", cfl)
    return c.with_values((q - p.dt * tendency).astype(c.values.dtype))


def advect_sl(c, wind, grid, p):
    """
    One semi-Lagrangian step of ``dc/dt + v . grad(c) = 0``.

    Departure points are traced back by the cell-centered wind times
    ``p.dt`` and the old field is interpolated there trilinearly with
    periodic wrap. Interpolation weights sum to one, so
    ``advect_sl(a c + b) == a advect_sl(c) + b``.

    Raises:
        NumericError: If ``c`` contains NaN.
    """
    c = _check_inputs(c, wind, grid)
    q = c.values.astype(np.float64)
    uc, vc, wc = wind.cell_centered()
    i, j, k = np.meshgrid(np.arange(grid.nx), np.arange(grid.ny), np.arange(grid.nz), indexing="ij")
    dz = grid.thickness.reshape(1, 1, -1)
    departure = np.stack([
        i - uc * p.dt / grid.dx,
        j - vc * p.dt / grid.dy,
        k - wc * p.dt / dz,
    ])
    out = ndimage.map_coordinates(q, departure, order=1, mode="grid-wrap")
    return c.with_values(out.astype(c.values.dtype))


def step(c, wind, grid, p):
    """Apply ``p.steps_per_pair`` sub-steps of the configured scheme."""
    advect = advect_fv if p.scheme == "fv_upwind" else advect_sl
    for _ in range(p.steps_per_pair):
        c = advect(c, wind, grid, p)
    return c


def _roll_species(initial, winds, grid, synth, p, dtype):
    state = initial.with_values(initial.values.astype(np.float64))
    records = []
    for t, wind in enumerate(winds):
        out = step(state, wind, grid, p)
        records.append(PairRecord(
            input=initial.with_values(state.values.astype(dtype)),
            output=initial.with_values(out.values.astype(dtype)),
            time_index=t,
            species_id=initial.species_id,
            wind=wind,
        ))
        if logger.isEnabledFor(logging.DEBUG) and p.scheme == "fv_upwind":
            before, after = total_mass(state, grid), total_mass(out, grid)
            logger.debug("species %d t=%d mass drift %.3e", initial.species_id, t, (after - before) / before)
        state = out.with_values(perturb(out.values, synth, initial.species_id, t))
    return records


def gen_dataset(grid, synth, p, n_timesteps, threads=1, dtype=np.float64):
    """
    Roll every species forward and record one pair per (species, timestep).

    The input of pair ``t + 1`` is the output of pair ``t`` after the
    multiplicative perturbation of :func:`advemu.synth.perturb`; with
    ``synth.module_noise == 0`` the chain is exact.

    Args:
        grid (GridSpec): Grid geometry.
        synth (SynthConfig): Generator settings.
        p (StepParams): Solver settings.
        n_timesteps (int): Transport timesteps (pairs) per species.
        threads (int): Species rolled concurrently; results do not depend on it.
        dtype: Precision of the recorded fields. The chain itself always runs in float64.

    Returns:
        list[PairRecord]: Pairs ordered by time index, then species.
    """
    if n_timesteps < 2:
        raise DataError(f"at least 2 timesteps are required, got {n_timesteps}")
    winds = [wind_from_stream(gen_stream(grid, synth, t), grid) for t in range(n_timesteps)]
    if p.scheme == "fv_upwind":
        cfl = max(courant_number(wind, grid, p.dt) for wind in winds)
        if cfl > 1.0:
            raise CFLError(cfl)
    initial = gen_species_init(grid, synth)
    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        per_species = list(pool.map(lambda c: _roll_species(c, winds, grid, synth, p, dtype), initial))
    records = [record for chain in per_species for record in chain]
    records.sort(key=lambda r: (r.time_index, r.species_id))
    logger.info("Generated %d pairs (%d species x %d timesteps)", len(records), len(initial), n_timesteps)
    return records
