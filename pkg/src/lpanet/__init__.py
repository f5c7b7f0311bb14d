"""Residual networks trained end-to-end or layer-wise."""

from ._backend import NAME as BACKEND
from .network import Dims, ResidualNetwork, init_network, predict, truncated_predict
from .surfaces import Dataset, SurfaceId, sample_dataset, train_test_split
from .training import Paradigm, TrainConfig, train

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "Dims",
    "ResidualNetwork",
    "init_network",
    "predict",
    "truncated_predict",
    "Dataset",
    "SurfaceId",
    "sample_dataset",
    "train_test_split",
    "Paradigm",
    "TrainConfig",
    "train",
]
