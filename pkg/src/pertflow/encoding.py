"""Inputs of the velocity field: sinusoidal value/time encodings, gene
embeddings and compositional condition encodings."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import numcore as nc
from .data import Condition
from .errors import ConfigurationError, DimensionError, VocabularyError
from .numcore import Tensor


@dataclass(frozen=True)
class SinusoidalEncoder:
    dim: int
    max_period: float = 10000.0

    def __post_init__(self):
        if self.dim < 2 or self.dim % 2:
            raise ConfigurationError(f"sinusoidal dimension must be even and positive, got {self.dim}")

    @property
    def frequencies(self) -> np.ndarray:
        half = self.dim // 2
        return self.max_period ** (-2.0 * np.arange(half) / self.dim)

    def __call__(self, values) -> np.ndarray:
        """Encode an array of scalars; output gets a trailing axis of size ``dim``."""
        arg = np.asarray(values, dtype=np.float64)[..., None] * self.frequencies
        return np.concatenate([np.sin(arg), np.cos(arg)], axis=-1)

    def tensor(self, values: Tensor) -> Tensor:
        """Differentiable version of ``__call__`` for tensors."""
        freqs = self.frequencies
        arg = values.data[..., None] * freqs
        s, c = np.sin(arg), np.cos(arg)
        half = freqs.size

        def backward(g):
            return (np.sum(g[..., :half] * c * freqs - g[..., half:] * s * freqs, axis=-1),)

        return nc.make_node(np.concatenate([s, c], axis=-1), (values,), backward)


def encode_scalar(value: float, enc: SinusoidalEncoder) -> np.ndarray:
    return enc(float(value))


class GeneEmbeddingTable:
    """Learnable per-gene vectors, rows in dataset gene order."""

    def __init__(self, genes: Sequence[str], dim: int, params: nc.ParameterSet, rng: np.random.Generator,
                 prefix: str = "gene_embedding"):
        self.genes = list(genes)
        self.dim = dim
        self.weight = params.add(prefix, rng.normal(0.0, 1.0 / np.sqrt(dim), (len(self.genes), dim)))


def encode_state(x_t, enc: SinusoidalEncoder, emb) -> Tensor:
    """``Enc(x_t) + Emb(genes)``: (..., m) expression to (..., m, d) features.

    ``emb`` is a GeneEmbeddingTable or an (m, d) array/tensor.
    """
    weight = emb.weight if isinstance(emb, GeneEmbeddingTable) else nc.as_tensor(emb)
    x_t = nc.as_tensor(x_t)
    if x_t.shape[-1] != weight.shape[0]:
        raise DimensionError(f"expression length {x_t.shape[-1]} does not match {weight.shape[0]} gene embeddings")
    if weight.shape[1] != enc.dim:
        raise DimensionError(f"embedding dim {weight.shape[1]} differs from encoder dim {enc.dim}")
    return nc.add(enc.tensor(x_t), weight)


class ConditionEncoder:
    """Multi-hot perturbations || one-hot covariate || null flag."""

    def __init__(self, perturbations: Sequence[str], covariates: Sequence[str]):
        self.perturbations = list(perturbations)
        self.covariates = list(covariates)
        self._p = {p: i for i, p in enumerate(self.perturbations)}
        self._c = {c: i for i, c in enumerate(self.covariates)}

    @property
    def dim(self) -> int:
        return len(self.perturbations) + len(self.covariates) + 1

    def __call__(self, condition: Condition | None) -> np.ndarray:
        return encode_condition(condition, self)

    def batch(self, conditions: Sequence[Condition | None]) -> np.ndarray:
        return np.stack([encode_condition(c, self) for c in conditions]) if conditions else np.zeros((0, self.dim))

    def null(self, n: int = 1) -> np.ndarray:
        out = np.zeros((n, self.dim))
        out[:, -1] = 1.0
        return out

    def to_json(self) -> dict:
        return {"perturbations": self.perturbations, "covariates": self.covariates}


def encode_condition(c: Condition | None, enc: ConditionEncoder) -> np.ndarray:
    out = np.zeros(enc.dim)
    if c is None:
        out[-1] = 1.0
        return out
    n_p = len(enc.perturbations)
    for p in c.perturbations:
        if p not in enc._p:
            raise VocabularyError(f"unknown perturbation {p!r}")
        out[enc._p[p]] += 1.0
    if c.covariate not in enc._c:
        raise VocabularyError(f"unknown covariate {c.covariate!r}")
    out[n_p + enc._c[c.covariate]] = 1.0
    return out


def dropout_condition(c: Condition, p_uncond: float, rng: np.random.Generator) -> Condition | None:
    """Replace ``c`` by the null marker with probability ``p_uncond``.

    Exactly one uniform draw is consumed per call.
    """
    if not 0.0 <= p_uncond <= 1.0:
        raise ConfigurationError(f"p_uncond must lie in [0, 1], got {p_uncond}")
    return None if rng.random() < p_uncond else c


def dropout_conditions(conds: Sequence[Condition], p_uncond: float, rng: np.random.Generator) -> list:
    if not 0.0 <= p_uncond <= 1.0:
        raise ConfigurationError(f"p_uncond must lie in [0, 1], got {p_uncond}")
    draws = rng.random(len(conds))
    return [None if u < p_uncond else c for c, u in zip(conds, draws)]
