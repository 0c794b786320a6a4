"""eXclusive Autoencoder: label-set driven feature partitioning for patch classification."""

from .cost import CostBreakdown, Hyperparams, cost, cost_and_gradient
from .data import PatchDataset, assemble_groups
from .labels import LabelSet, PartitionSpec, SegmentSpec, active_segments, semaphore, validate
from .model import XaeModel, decode, encode, init, reconstruct
from .trainer import TrainConfig, default_hyperparams, default_train_config, train, train_ae_emulation

__version__ = "0.1.0"

__all__ = [
    "CostBreakdown", "Hyperparams", "LabelSet", "PartitionSpec", "PatchDataset", "SegmentSpec",
    "TrainConfig", "XaeModel", "active_segments", "assemble_groups", "cost", "cost_and_gradient",
    "decode", "default_hyperparams", "default_train_config", "encode", "init", "reconstruct",
    "semaphore", "train", "train_ae_emulation", "validate",
]
