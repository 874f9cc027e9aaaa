"""Conditional probability paths between source and data samples."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ConfigurationError, DimensionError, PreconditionError
from .. import numcore as nc


def interpolate(x0, x1, t, kind: str = "linear"):
    """Path mean and its time derivative.

    ``t`` broadcasts against the leading axis of ``x0``/``x1``.
    """
    x0 = np.asarray(x0, dtype=np.float64)
    x1 = np.asarray(x1, dtype=np.float64)
    if x0.shape != x1.shape:
        raise DimensionError(f"x0 {x0.shape} and x1 {x1.shape} differ")
    t = np.asarray(t, dtype=np.float64)
    if t.ndim == 1 and x0.ndim == 2:
        t = t[:, None]
    if kind == "linear":
        return (1.0 - t) * x0 + t * x1, x1 - x0
    if kind == "trigonometric":
        a = 0.5 * np.pi * t
        c, s = np.cos(a), np.sin(a)
        return c * x0 + s * x1, 0.5 * np.pi * (c * x1 - s * x0)
    raise ConfigurationError(f"unknown interpolation {kind!r}")


@dataclass
class PathSample:
    x0: np.ndarray
    x1: np.ndarray
    t: np.ndarray
    x_t: np.ndarray
    target: np.ndarray


def sample_path_point(x0, x1, t, cfg, rng: np.random.Generator) -> PathSample:
    """``x_t`` drawn from N(path mean, sigma^2 I); the target is the mean's velocity."""
    mu, target = interpolate(x0, x1, t, cfg.interpolation)
    x_t = mu + cfg.sigma * rng.standard_normal(mu.shape) if cfg.sigma > 0 else mu
    return PathSample(np.asarray(x0, float), np.asarray(x1, float), np.asarray(t, float), x_t, target)


def cfm_loss(field, sample: PathSample, cond_enc, rng=None) -> nc.Tensor:
    """Mean over batch and coordinates of the squared velocity error."""
    if sample.x_t.shape[0] == 0:
        raise PreconditionError("cfm_loss needs a non-empty batch")
    pred = field(sample.x_t, cond_enc, sample.t, rng)
    return nc.mse(pred, sample.target)
