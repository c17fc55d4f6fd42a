import numpy as np

from advemu.exceptions import DataError, ShapeError
from advemu.patches import tile

BASE_CHANNELS = ("concentration", "u", "v", "w", "layer_thickness")
STATIC_CHANNELS = ("surface_geopotential", "surface_temperature", "surface_pressure")
UNITS = {
    "concentration": "normalized",
    "u": "m/s",
    "v": "m/s",
    "w": "m/s",
    "layer_thickness": "m",
    "surface_geopotential": "m2/s2",
    "surface_temperature": "K",
    "surface_pressure": "hPa",
}


def _scale(values, lo, hi):
    if hi > lo:
        return (values - lo) / (hi - lo)
    return np.zeros_like(values)


class Feature:
    def __init__(self, grid, rows=4, cols=6, depth=16, static_fields=None):
        """
        Builds the model input channels of a patch.

        Wind, layer thickness and static surface channels share one global
        min-max per channel across species.

        :param grid: Grid geometry.
        :param rows: Patch rows.
        :param cols: Patch columns.
        :param depth: Levels kept per patch.
        :param static_fields: Optional dict of 2D surface fields, name to array.
        """
        self.grid = grid
        self.rows = rows
        self.cols = cols
        self.depth = min(depth, grid.nz)
        self.static_fields = dict(static_fields or {})
        unknown = set(self.static_fields) - set(STATIC_CHANNELS)
        if unknown:
            raise DataError(f"unknown static channels {sorted(unknown)}")
        self.ranges = {}
        self._cache = {}

    @property
    def channel_names(self):
        return list(BASE_CHANNELS) + [name for name in STATIC_CHANNELS if name in self.static_fields]

    @property
    def n_channels(self):
        return len(self.channel_names)

    def fit(self, winds):
        """
        Record global min-max ranges from the training-period winds.

        :param winds: Iterable of WindField.
        :return: self
        """
        winds = list(winds)
        if not winds:
            raise DataError("no wind fields to fit channel ranges on")
        for name in ("u", "v", "w"):
            components = [getattr(wind, name)[:, :, :self.depth] for wind in winds]
            self.ranges[name] = (float(min(c.min() for c in components)), float(max(c.max() for c in components)))
        thickness = self.grid.thickness[:self.depth]
        self.ranges["layer_thickness"] = (float(thickness.min()), float(thickness.max()))
        for name, field in self.static_fields.items():
            self.ranges[name] = (float(field.min()), float(field.max()))
        self._cache.clear()
        return self

    def _static_blocks(self):
        if "static" not in self._cache:
            blocks = {}
            px, py = self.grid.nx // self.rows, self.grid.ny // self.cols
            thickness = _scale(self.grid.thickness[:self.depth], *self.ranges["layer_thickness"])
            blocks["layer_thickness"] = np.broadcast_to(thickness, (self.rows, self.cols, px, py, self.depth))
            for name, field in self.static_fields.items():
                column = np.repeat(_scale(field, *self.ranges[name])[:, :, None], self.depth, axis=2)
                blocks[name] = tile(column, self.rows, self.cols, self.depth)
            self._cache["static"] = blocks
        return self._cache["static"]

    def wind_blocks(self, wind, time_index):
        """Tiled, normalized wind components for one timestep (cached by time index)."""
        key = ("wind", time_index)
        if key not in self._cache:
            if not self.ranges:
                raise DataError("Feature ranges have not been fitted yet.")
            self._cache[key] = {
                name: tile(_scale(getattr(wind, name), *self.ranges[name]), self.rows, self.cols, self.depth)
                for name in ("u", "v", "w")
            }
        return self._cache[key]

    def build(self, concentration, wind, time_index, patch_row, patch_col):
        """
        Stack the input channels of one patch.

        :param concentration: Normalized concentration patch [px, py, pz].
        :param wind: WindField of the timestep.
        :param time_index: Timestep, used to cache the tiled wind.
        :param patch_row: Patch row.
        :param patch_col: Patch column.
        :return: float32 array [C, px, py, pz].
        """
        concentration = np.asarray(concentration)
        winds = self.wind_blocks(wind, time_index)
        static = self._static_blocks()
        expected = winds["u"].shape[2:]
        if concentration.shape != expected:
            raise ShapeError(f"concentration patch has shape {concentration.shape}, expected {expected}")
        layers = [concentration]
        layers += [winds[name][patch_row, patch_col] for name in ("u", "v", "w")]
        layers += [static[name][patch_row, patch_col] for name in self.channel_names[4:]]
        return np.stack(layers).astype(np.float32)

    def release(self, time_index):
        """Drop the cached wind tiles of one timestep."""
        self._cache.pop(("wind", time_index), None)

    def get_feature_summary(self):
        """
        Provides a summary of the input channels.

        :return: A dictionary keyed by channel name with units and fitted range.
        """
        summary = {}
        for index, name in enumerate(self.channel_names):
            lo, hi = self.ranges.get(name, (0.0, 1.0))
            summary[name] = {"index": index, "units": UNITS[name], "min": lo, "max": hi}
        return summary

    def get_feature_stats(self, feature_name):
        """
        Provides the fitted range of a given channel.

        :param feature_name: The name of the channel.
        :return: A dictionary with units and range.
        """
        if feature_name not in self.channel_names:
            raise DataError(f"Feature '{feature_name}' not found in the channel list.")
        return self.get_feature_summary()[feature_name]

    def to_dict(self):
        return {"channel_names": self.channel_names, "ranges": {k: list(v) for k, v in self.ranges.items()}}
