"""Linear PCA projector used for latent-space flow models and PCA-space metrics."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ConfigurationError, DimensionError


@dataclass
class PCAProjector:
    mean: np.ndarray
    components: np.ndarray          # (q, m), orthonormal rows
    explained_variance: np.ndarray  # (q,)

    @property
    def q(self) -> int:
        return self.components.shape[0]

    @property
    def n_genes(self) -> int:
        return self.components.shape[1]

    def project(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.n_genes:
            raise DimensionError(f"input has {x.shape[-1]} genes, projector expects {self.n_genes}")
        return (x - self.mean) @ self.components.T

    def reconstruct(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=np.float64)
        if z.shape[-1] != self.q:
            raise DimensionError(f"latent has {z.shape[-1]} dims, projector expects {self.q}")
        return z @ self.components + self.mean

    def arrays(self, prefix: str = "pca") -> dict[str, np.ndarray]:
        return {f"{prefix}.mean": self.mean, f"{prefix}.components": self.components,
                f"{prefix}.explained_variance": self.explained_variance}

    @classmethod
    def from_arrays(cls, arrays: dict, prefix: str = "pca") -> "PCAProjector":
        return cls(arrays[f"{prefix}.mean"], arrays[f"{prefix}.components"], arrays[f"{prefix}.explained_variance"])


def pca_fit(cells, q: int) -> PCAProjector:
    """Top-``q`` principal axes of ``cells`` via SVD of the centred matrix.

    Each component is oriented so its largest-magnitude entry is positive.
    """
    x = np.asarray(cells, dtype=np.float64)
    n, m = x.shape
    if n < 2:
        raise ConfigurationError("PCA needs at least two cells")
    if not 1 <= q <= min(n, m):
        raise ConfigurationError(f"q={q} must lie in [1, min(n, m)] = [1, {min(n, m)}]")
    mean = x.mean(axis=0)
    _, s, vt = np.linalg.svd(x - mean, full_matrices=False)
    comps = vt[:q].copy()
    lead = np.argmax(np.abs(comps), axis=1)
    signs = np.sign(comps[np.arange(q), lead])
    comps *= signs[:, None]
    return PCAProjector(mean, comps, s[:q] ** 2 / (n - 1))


def pca_project(p: PCAProjector, x) -> np.ndarray:
    return p.project(x)


def pca_reconstruct(p: PCAProjector, z) -> np.ndarray:
    return p.reconstruct(z)
