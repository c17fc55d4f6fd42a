from advemu.dataset import AQGDataset, read_aqg, write_aqg
from advemu.feature import Feature
from advemu.grid import GridSpec, SpeciesField, SpeciesKind, WindField, cell_volumes, discrete_divergence, total_mass
from advemu.metrics import mass_pct_diff, rmse_stratified
from advemu.oracle import StepParams, advect_fv, advect_sl, gen_dataset
from advemu.synth import SynthConfig, gen_species_init, gen_stream, wind_from_stream
from advemu.transform import NormParams, minmax_fit, root_diff_invert, root_diff_target
from advemu.unet import UNetConfig, build

__all__ = [
    "AQGDataset", "read_aqg", "write_aqg", "Feature", "GridSpec", "SpeciesField", "SpeciesKind", "WindField",
    "cell_volumes", "discrete_divergence", "total_mass", "mass_pct_diff", "rmse_stratified", "StepParams",
    "advect_fv", "advect_sl", "gen_dataset", "SynthConfig", "gen_species_init", "gen_stream", "wind_from_stream",
    "NormParams", "minmax_fit", "root_diff_invert", "root_diff_target", "UNetConfig", "build",
]

__version__ = "0.1.0"
