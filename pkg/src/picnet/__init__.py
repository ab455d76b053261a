"""Permutation-invariant temporal layers for long-range activity classification."""
from .config import DataConfig, RunConfig
from .estimator import PICClassifier
from .evaluation import (
    concept_retrieval,
    evaluate,
    mean_average_precision,
    permutation_robustness,
    profile,
)
from .exceptions import (
    CompatibilityError,
    ConfigError,
    DimensionError,
    FormatError,
    NonFiniteError,
    PicError,
    TrainingDiverged,
    UninitializedStatisticsError,
    ValidationError,
)
from .layers import VARIANTS, layer_forward, pic_window
from .network import build_cascade, forward, load_model, save_model
from .optim import train
from .synth import load_dataset, make_dataset, save_dataset

__version__ = "0.1.0"

__all__ = [
    "CompatibilityError", "ConfigError", "DataConfig", "DimensionError", "FormatError",
    "NonFiniteError", "PICClassifier", "PicError", "RunConfig", "TrainingDiverged",
    "UninitializedStatisticsError", "VARIANTS", "ValidationError", "build_cascade",
    "concept_retrieval", "evaluate", "forward", "layer_forward", "load_dataset", "load_model",
    "make_dataset", "mean_average_precision", "permutation_robustness", "pic_window", "profile",
    "save_dataset", "save_model", "train",
]
