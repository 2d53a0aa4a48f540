"""Closed-set label-noise training pipeline on synthetic hypersphere data."""

from .core_math import MarginParams
from .pipeline import Category, MemoryBank
from .synth import DatasetSpec, NoisyDataset, generate, read_dataset, write_dataset
from .trainer import TrainConfig, TrainResult, train

__all__ = [
    "Category", "DatasetSpec", "MarginParams", "MemoryBank", "NoisyDataset",
    "TrainConfig", "TrainResult", "generate", "read_dataset", "train", "write_dataset",
]
__version__ = "0.1.0"
