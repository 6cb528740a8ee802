"""Active learning for semantic segmentation with region-level multi-class queries."""

from .dataio import UNDEF, DataError, SyntheticSpec, generate_synthetic, load_dataset
from .experiment import ExperimentConfig, RoundReport, run_experiment, run_single
from .metrics import miou, miou_dataset
from .oracle import LabeledPool, MultiClassLabel
from .superpixel import Partition, grid_partition, region_adjacency, slic_partition

__version__ = "0.1.0"

__all__ = [
    "UNDEF",
    "DataError",
    "SyntheticSpec",
    "generate_synthetic",
    "load_dataset",
    "ExperimentConfig",
    "RoundReport",
    "run_experiment",
    "run_single",
    "miou",
    "miou_dataset",
    "LabeledPool",
    "MultiClassLabel",
    "Partition",
    "grid_partition",
    "region_adjacency",
    "slic_partition",
    "__version__",
]
