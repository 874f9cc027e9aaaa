"""Probability paths, couplings and the flow-matching training loop."""

from .config import FlowConfig
from .coupling import SinkhornResult, couple_independent, couple_ot, sinkhorn, squared_euclidean
from .paths import PathSample, cfm_loss, interpolate, sample_path_point
from .train import TrainResult, train

__all__ = [
    "FlowConfig", "PathSample", "SinkhornResult", "TrainResult", "cfm_loss", "couple_independent", "couple_ot",
    "interpolate", "sample_path_point", "sinkhorn", "squared_euclidean", "train",
]
