"""
Grid geometry, discrete operators and mass accounting.

Winds are stored on a staggered grid: ``u[i, j, k]`` is the velocity on the
+x face of cell ``(i, j, k)``, ``v`` on the +y face and ``w`` on the top face.
All axes are periodic.
"""
import enum
from dataclasses import dataclass, field

import numpy as np

from advemu.exceptions import ConfigError, NumericError, ShapeError

AXES = ("x", "y", "z")


class SpeciesKind(str, enum.Enum):
    OZONE = "ozone_kind"
    PM = "pm_kind"

    @property
    def units(self):
        return "ppm" if self is SpeciesKind.OZONE else "ug/m3"

    @property
    def code(self):
        return 0 if self is SpeciesKind.OZONE else 1

    @classmethod
    def from_code(cls, code):
        try:
            return (cls.OZONE, cls.PM)[int(code)]
        except IndexError:
            raise ValueError(f"Unknown species kind code {code}.") from None


@dataclass(frozen=True)
class GridSpec:
    """
    Geometry of the simulation grid.

    Args:
        nx (int): Cell count along x.
        ny (int): Cell count along y.
        nz (int): Vertical level count.
        dx (float): Spacing along x in meters.
        dy (float): Spacing along y in meters.
        layer_thickness (tuple[float]): Thickness of each vertical level in meters.
    """

    nx: int
    ny: int
    nz: int
    dx: float
    dy: float
    layer_thickness: tuple = field(default=())

    def __post_init__(self):
        for name in ("nx", "ny", "nz"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"must be >= 1, got {getattr(self, name)}", key=f"grid.{name}")
        for name in ("dx", "dy"):
            if not float(getattr(self, name)) > 0.0:
                raise ConfigError(f"must be positive, got {getattr(self, name)}", key=f"grid.{name}")
        thickness = tuple(float(t) for t in self.layer_thickness) or (1.0,) * int(self.nz)
        if len(thickness) != self.nz:
            raise ConfigError(f"expected {self.nz} values, got {len(thickness)}", key="grid.layer_thickness")
        if not all(np.isfinite(t) and t > 0.0 for t in thickness):
            raise ConfigError("all thicknesses must be positive and finite", key="grid.layer_thickness")
        object.__setattr__(self, "layer_thickness", thickness)

    @property
    def shape(self):
        return (self.nx, self.ny, self.nz)

    @property
    def thickness(self):
        return np.asarray(self.layer_thickness, dtype=np.float64)

    def subgrid(self, nx, ny, nz):
        """Grid with the same spacing covering the first ``nz`` levels of a ``nx`` x ``ny`` window."""
        return GridSpec(nx, ny, nz, self.dx, self.dy, self.layer_thickness[:nz])

    def check_patch_grid(self, rows, cols):
        """
        Ensure the horizontal extent tiles evenly into ``rows`` x ``cols`` patches.

        Raises:
            ShapeError: If nx is not divisible by rows or ny by cols.
        """
        if rows < 1 or self.nx % rows:
            raise ShapeError(
                f"nx={self.nx} must be divisible by rows={rows} "
                "(a 232-row domain splits into 4 rows of 58)",
                axis="x",
            )
        if cols < 1 or self.ny % cols:
            raise ShapeError(
                f"ny={self.ny} must be divisible by cols={cols} "
                "(a 396-column domain splits into 6 columns of 66)",
                axis="y",
            )

    def check_shape(self, array, what="array"):
        shape = np.shape(array)
        if len(shape) != 3:
            raise ShapeError(f"{what} must be 3D, got shape {shape}")
        for axis, got, expected in zip(AXES, shape, self.shape):
            if got != expected:
                raise ShapeError(f"{what} has {got} cells, grid has {expected}", axis=axis)


@dataclass(frozen=True)
class SpeciesField:
    """
    Concentration of one species on the grid.

    Values are ppm for ozone-kind species and ug/m3 for pm-kind species.
    """

    values: np.ndarray
    species_id: int
    kind: SpeciesKind = SpeciesKind.OZONE

    def __post_init__(self):
        values = np.asarray(self.values)
        if values.ndim != 3:
            raise ShapeError(f"species field must be 3D, got shape {values.shape}")
        if not np.issubdtype(values.dtype, np.floating):
            values = values.astype(np.float32)
        if not np.all(np.isfinite(values)):
            raise NumericError(f"species {self.species_id} contains non-finite values")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "kind", SpeciesKind(self.kind))

    @property
    def units(self):
        return self.kind.units

    def with_values(self, values):
        return SpeciesField(values, self.species_id, self.kind)

    def check_non_negative(self):
        if np.any(self.values < 0):
            raise NumericError(f"raw species {self.species_id} has negative concentrations (min {self.values.min()})")
        return self


@dataclass(frozen=True)
class WindField:
    """Face-staggered velocity components in m/s."""

    u: np.ndarray
    v: np.ndarray
    w: np.ndarray

    def __post_init__(self):
        shapes = set()
        for name in ("u", "v", "w"):
            component = np.asarray(getattr(self, name), dtype=np.float64)
            if component.ndim != 3:
                raise ShapeError(f"wind component {name} must be 3D, got shape {component.shape}")
            if not np.all(np.isfinite(component)):
                raise NumericError(f"wind component {name} contains non-finite values")
            shapes.add(component.shape)
            object.__setattr__(self, name, component)
        if len(shapes) != 1:
            raise ShapeError(f"wind components have different shapes {sorted(shapes)}")

    @classmethod
    def zeros(cls, grid):
        return cls(np.zeros(grid.shape), np.zeros(grid.shape), np.zeros(grid.shape))

    @classmethod
    def uniform(cls, grid, u=0.0, v=0.0, w=0.0):
        return cls(np.full(grid.shape, float(u)), np.full(grid.shape, float(v)), np.full(grid.shape, float(w)))

    @property
    def shape(self):
        return self.u.shape

    def speed(self):
        return np.sqrt(self.u**2 + self.v**2 + self.w**2)

    def cell_centered(self):
        """Velocity averaged from the faces to cell centers, as (uc, vc, wc)."""
        return (
            0.5 * (self.u + np.roll(self.u, 1, axis=0)),
            0.5 * (self.v + np.roll(self.v, 1, axis=1)),
            0.5 * (self.w + np.roll(self.w, 1, axis=2)),
        )


def cell_volumes(grid):
    """
    Volume of every cell.

    Args:
        grid (GridSpec): Grid geometry.

    Returns:
        numpy.ndarray: Array of shape (nx, ny, nz) in m3.
    """
    column = grid.dx * grid.dy * grid.thickness
    return np.broadcast_to(column, grid.shape).copy()


def backward_difference(a, axis, spacing):
    """Periodic ``(a[i] - a[i-1]) / spacing`` along ``axis``."""
    return (a - np.roll(a, 1, axis=axis)) / spacing


def discrete_divergence(wind, grid):
    """
    Divergence of a face-staggered wind, evaluated at cell centers.

    Uses the same face differences as the flux update in
    :func:`advemu.oracle.advect_fv`, so a zero result means constants are
    preserved by that scheme.

    Args:
        wind (WindField): Face velocities.
        grid (GridSpec): Grid geometry.

    Returns:
        numpy.ndarray: Divergence in 1/s, shape (nx, ny, nz).

    Raises:
        ShapeError: If a wind component does not match the grid.
    """
    grid.check_shape(wind.u, "wind")
    dz = grid.thickness.reshape(1, 1, -1)
    return (
        backward_difference(wind.u, 0, grid.dx)
        + backward_difference(wind.v, 1, grid.dy)
        + backward_difference(wind.w, 2, dz)
    )


def total_mass(c, grid):
    """
    Sum of concentration times cell volume, accumulated in float64.

    Args:
        c (SpeciesField | numpy.ndarray): Concentrations.
        grid (GridSpec): Grid geometry.

    Returns:
        float: Total mass in species units times m3.
    """
    values = c.values if isinstance(c, SpeciesField) else np.asarray(c)
    grid.check_shape(values, "species field")
    column = grid.dx * grid.dy * grid.thickness
    per_level = values.astype(np.float64).sum(axis=(0, 1))
    return float(np.dot(per_level, column))
