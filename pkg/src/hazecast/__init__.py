"""Entropy-gated, cluster-wise CNN-RetNet forecasting of PV power under haze."""

from .data import Dataset, Series, WindowedSample, generate_synthetic, load_dataset, make_windows
from .entropy import EmbeddingConfig, tewpp
from .errors import HazecastError, HazecastRuntimeError, ValidationError
from .kernels import BACKEND
from .pipeline import PipelineConfig, forecast, run_training_pipeline
from .retnet import HyperParams, RetNetConfig

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "Dataset",
    "EmbeddingConfig",
    "HazecastError",
    "HazecastRuntimeError",
    "HyperParams",
    "PipelineConfig",
    "RetNetConfig",
    "Series",
    "ValidationError",
    "WindowedSample",
    "forecast",
    "generate_synthetic",
    "load_dataset",
    "make_windows",
    "run_training_pipeline",
    "tewpp",
]
