"""Conditional flow matching for single-cell perturbation responses."""

from .data import Condition, PerturbDataset, SynthSpec, split_combo, split_covariate_transfer, synth_generate
from .errors import PertFlowError
from .flow import FlowConfig, train
from .metrics import MetricsReport, evaluate
from .models import MODEL_KINDS, FlowModel, build_model
from .sampler import SamplerConfig, euler_sample, sample_conditions

__version__ = "0.1.0"

__all__ = [
    "MODEL_KINDS", "Condition", "FlowConfig", "FlowModel", "MetricsReport", "PerturbDataset", "PertFlowError",
    "SamplerConfig", "SynthSpec", "build_model", "euler_sample", "evaluate", "sample_conditions", "split_combo",
    "split_covariate_transfer", "synth_generate", "train",
]
