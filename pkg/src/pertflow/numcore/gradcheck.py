"""Finite-difference verification of tape gradients."""

from __future__ import annotations

from typing import Callable

import numpy as np

from ..errors import ConfigurationError, EvaluationError
from .tensor import ParameterSet, Tape, Tensor


def _evaluate(f: Callable[[], Tensor]) -> float:
    value = f()
    value = float(value.data.reshape(-1)[0]) if isinstance(value, Tensor) else float(value)
    if not np.isfinite(value):
        raise EvaluationError(f"objective evaluated to {value}")
    return value


def grad_check(f: Callable[[], Tensor], inputs: ParameterSet, eps: float = 1e-3) -> float:
    """Max relative error between tape gradients and central differences.

    ``f`` takes no arguments and reads the current values of ``inputs``; it
    must be deterministic.  The error is ``max|g_ad - g_fd| / max(1, |g_fd|)``
    over every coordinate of every input.
    """
    if not 1e-6 <= eps <= 1e-2:
        raise ConfigurationError(f"eps must lie in [1e-6, 1e-2], got {eps}")
    inputs.zero_grad()
    with Tape() as tape:
        out = f()
        if not np.all(np.isfinite(out.data)):
            raise EvaluationError("objective is not finite")
        if out.requires_grad:
            tape.backward(out)
    worst = 0.0
    for name, p in inputs.items():
        analytic = np.zeros_like(p.data) if p.grad is None else p.grad
        base = p.data
        flat = base.reshape(-1)
        for i in range(flat.size):
            bumped = flat.copy()
            bumped[i] += eps
            p.data = bumped.reshape(base.shape)
            hi = _evaluate(f)
            bumped[i] -= 2 * eps
            p.data = bumped.reshape(base.shape)
            lo = _evaluate(f)
            p.data = base
            fd = (hi - lo) / (2 * eps)
            err = abs(analytic.reshape(-1)[i] - fd) / max(1.0, abs(fd))
            worst = max(worst, err)
    inputs.zero_grad()
    return worst
