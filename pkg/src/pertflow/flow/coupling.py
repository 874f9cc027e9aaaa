"""Source/data couplings: independent Gaussian pairing and mini-batch entropic OT."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from ..errors import NumericalError, PreconditionError


@dataclass
class SinkhornResult:
    plan: np.ndarray
    f: np.ndarray
    g: np.ndarray
    iterations: int
    residual: float

    @property
    def mass(self) -> float:
        return float(self.plan.sum())

    def cost(self, C) -> float:
        return float(np.sum(self.plan * C))


def sinkhorn(a, b, C, epsilon: float, tau_a: float = 1.0, tau_b: float = 1.0,
             max_iter: int = 2000, tol: float = 1e-6) -> SinkhornResult:
    """Log-domain entropic OT with optional KL-relaxed marginals.

    ``tau_a``/``tau_b`` in (0, 1] are the damping exponents of the potential
    updates (``rho / (rho + epsilon)`` for a KL marginal weight ``rho``);
    ``tau = 1`` enforces that marginal exactly.  The plan is
    ``exp((f_i + g_j - C_ij) / epsilon)``.

    Convergence: in the balanced case the row-marginal L1 error after a
    full sweep; otherwise the largest potential change (in units of
    epsilon).
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    C = np.asarray(C, dtype=np.float64)
    if C.shape != (a.size, b.size):
        raise PreconditionError(f"cost shape {C.shape} does not match marginals ({a.size}, {b.size})")
    if not epsilon > 0:
        raise PreconditionError(f"epsilon must be positive, got {epsilon}")
    la, lb = np.log(a), np.log(b)
    f = np.zeros(a.size)
    g = np.zeros(b.size)
    balanced = tau_a == 1.0 and tau_b == 1.0
    residual = np.inf
    for it in range(1, max_iter + 1):
        f_new = tau_a * epsilon * (la - logsumexp((g[None, :] - C) / epsilon, axis=1))
        g_new = tau_b * epsilon * (lb - logsumexp((f_new[:, None] - C) / epsilon, axis=0))
        if balanced:
            row = np.exp(logsumexp((f_new[:, None] + g_new[None, :] - C) / epsilon, axis=1))
            residual = float(np.abs(row - a).sum())
        else:
            residual = float(max(np.abs(f_new - f).max(), np.abs(g_new - g).max()) / epsilon)
        f, g = f_new, g_new
        if not (np.all(np.isfinite(f)) and np.all(np.isfinite(g))):
            raise NumericalError("Sinkhorn potentials became non-finite", residual=residual)
        if residual < tol:
            break
    else:
        raise NumericalError(f"Sinkhorn did not converge in {max_iter} iterations (residual {residual:.3e})",
                             residual=residual)
    plan = np.exp((f[:, None] + g[None, :] - C) / epsilon)
    return SinkhornResult(plan, f, g, it, residual)


def squared_euclidean(x, y) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    d = (x * x).sum(1)[:, None] + (y * y).sum(1)[None, :] - 2.0 * x @ y.T
    return np.maximum(d, 0.0)


def couple_independent(data_batch, rng: np.random.Generator):
    """Pair each data row with a fresh standard-Gaussian source row."""
    x1 = np.asarray(data_batch, dtype=np.float64)
    if x1.ndim != 2 or x1.shape[0] < 1:
        raise PreconditionError("data batch must be a non-empty (b, m) matrix")
    return rng.standard_normal(x1.shape), x1


def _resample(rng, cells, n):
    replace = cells.shape[0] < n
    return cells[rng.choice(cells.shape[0], size=n, replace=replace)]


def couple_ot(controls, perturbed, cfg, rng: np.random.Generator, n_pairs: int | None = None):
    """Mini-batch OT pairing of control (source) and perturbed (target) cells.

    Both sets are resampled to ``cfg.ot_num_samples`` rows, the cost is
    squared Euclidean scaled so ``epsilon`` is relative to its mean, and
    ``n_pairs`` index pairs are drawn with probability proportional to the
    plan.  Returns ``(x0, x1, plan)``.
    """
    controls = np.asarray(controls, dtype=np.float64)
    perturbed = np.asarray(perturbed, dtype=np.float64)
    if controls.shape[0] == 0 or perturbed.shape[0] == 0:
        raise PreconditionError("OT coupling needs non-empty control and perturbed sets")
    n = cfg.ot_num_samples
    src = _resample(rng, controls, n)
    tgt = _resample(rng, perturbed, n)
    C = squared_euclidean(src, tgt)
    scale = C.mean()
    C = C / scale if scale > 0 else C
    w = np.full(n, 1.0 / n)
    tau_a, tau_b = (1.0, 1.0) if cfg.ot_solver == "balanced" else (cfg.ot_tau_a, cfg.ot_tau_b)
    res = sinkhorn(w, w, C, cfg.ot_epsilon, tau_a, tau_b, cfg.ot_max_iter, cfg.ot_tol)
    p = res.plan.reshape(-1)
    idx = rng.choice(p.size, size=n_pairs or n, p=p / p.sum())
    i, j = np.divmod(idx, n)
    return src[i], tgt[j], res.plan
