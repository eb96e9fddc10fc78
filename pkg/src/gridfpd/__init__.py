"""Learned-feature distribution distances for power-grid scenario data.

The package trains a hierarchical multi-resolution feature extractor over
power time series and compares scenario sets through Gaussian embeddings
of those features (Frechet power-scenario distance and friends), with
seeded disturbance generators and dataset synthesis for benchmarking.
"""

__version__ = "0.1.0"

from .data_io import (
    SeriesBatch,
    TransientSet,
    load_csv,
    load_stack,
    save_dataset,
    save_stack,
    synth_ev,
    synth_load,
    synth_solar,
    synth_transient,
    synth_wind,
)
from .disturbances import FIG2_GRIDS, SOLAR_GRIDS, Disturbance, apply
from .hierarchy import (
    ExtractorStack,
    FeatureSet,
    Resolution,
    StackConfig,
    extract_hierarchical,
    extract_transient,
)
from .metrics import (
    METRIC_KEYS,
    GaussianEmbedding,
    MetricReport,
    evaluate_pair,
    fit_gaussian,
    fpd,
    raw_frechet,
)
from .training import (
    TrainConfig,
    finalize,
    train_stack,
    train_transient,
)

__all__ = [
    "__version__",
    "SeriesBatch",
    "TransientSet",
    "load_csv",
    "load_stack",
    "save_dataset",
    "save_stack",
    "synth_ev",
    "synth_load",
    "synth_solar",
    "synth_transient",
    "synth_wind",
    "FIG2_GRIDS",
    "SOLAR_GRIDS",
    "Disturbance",
    "apply",
    "ExtractorStack",
    "FeatureSet",
    "Resolution",
    "StackConfig",
    "extract_hierarchical",
    "extract_transient",
    "METRIC_KEYS",
    "GaussianEmbedding",
    "MetricReport",
    "evaluate_pair",
    "fit_gaussian",
    "fpd",
    "raw_frechet",
    "TrainConfig",
    "finalize",
    "train_stack",
    "train_transient",
]
