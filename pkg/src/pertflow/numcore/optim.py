"""Adam with decoupled weight decay, and global-norm gradient clipping."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigurationError, PreconditionError
from .tensor import ParameterSet


@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: ParameterSet, state: AdamState, lr: float, weight_decay: float = 0.0) -> None:
    for name, p in params.items():
        if p.grad is None:
            raise PreconditionError(f"parameter {name!r} has no gradient")
    state.t += 1
    c1 = 1.0 - state.beta1 ** state.t
    c2 = 1.0 - state.beta2 ** state.t
    for name, p in params.items():
        g = p.grad
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros_like(p.data)
            v = np.zeros_like(p.data)
        m = state.beta1 * m + (1.0 - state.beta1) * g
        v = state.beta2 * v + (1.0 - state.beta2) * (g * g)
        state.m[name], state.v[name] = m, v
        data = p.data * (1.0 - lr * weight_decay) if weight_decay else p.data
        p.data = data - lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


def clip_grad_norm(params: ParameterSet, threshold: float) -> float:
    """Scale all gradients so their global L2 norm is at most ``threshold``.

    Returns the norm measured before clipping.  Parameters without a gradient
    are skipped.
    """
    if not threshold > 0:
        raise ConfigurationError(f"clip threshold must be positive, got {threshold}")
    grads = [p for p in params.values() if p.grad is not None]
    norm = float(np.sqrt(sum(float(np.sum(p.grad * p.grad)) for p in grads)))
    if norm > threshold:
        scale = threshold / norm
        for p in grads:
            p.grad = p.grad * scale
    return norm
