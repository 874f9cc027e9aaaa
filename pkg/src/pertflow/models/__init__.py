"""Velocity fields, PCA projector and the model container."""

from .flow_model import MODEL_KINDS, FlowModel, build_model, source_controls
from .pca import PCAProjector, pca_fit, pca_project, pca_reconstruct
from .velocity import (
    MLPVelocityField, UNetVelocityField, VelocityField, build_field, unet_pad, unet_unpad, velocity_forward,
)

__all__ = [
    "MODEL_KINDS", "FlowModel", "MLPVelocityField", "PCAProjector", "UNetVelocityField", "VelocityField",
    "build_field", "build_model", "pca_fit", "pca_project", "pca_reconstruct", "source_controls", "unet_pad",
    "unet_unpad", "velocity_forward",
]
