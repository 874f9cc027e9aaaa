"""A trained (or trainable) generative model: velocity field plus its context.

The four supported kinds differ in field architecture, state space and
source distribution:

=================  ========  ==========  ==============
kind               field     space       source
=================  ========  ==========  ==============
primeflow_unet     unet      genes       gaussian
primeflow_mlp      mlp       genes       gaussian
fm_pca             mlp       PCA         gaussian
fm_pca_ot          mlp       PCA         control_cells
=================  ========  ==========  ==============
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..data import Condition, PerturbDataset
from ..encoding import ConditionEncoder
from ..errors import ConfigurationError
from ..numcore import load_arrays, save_arrays
from .pca import PCAProjector, pca_fit
from .velocity import MLPVelocityField, UNetVelocityField, VelocityField, build_field

MODEL_KINDS = ("primeflow_unet", "primeflow_mlp", "fm_pca", "fm_pca_ot")

UNET_KEYS = ("hidden_dim", "channel_mult", "num_res_blocks", "attention_resolutions", "num_heads",
             "conv_resample", "dropout", "enc_dim", "time_dim", "n_layers_gene_expression",
             "n_layers_conditions", "n_layers_time", "use_scale_shift_norm")
MLP_KEYS = ("hidden_dim", "n_layers_gene_expression", "n_layers_conditions", "n_layers_time",
            "n_layers_decoding", "dropout", "time_dim")


@dataclass
class FlowModel:
    kind: str
    field: VelocityField
    cond_encoder: ConditionEncoder
    genes: list[str]
    projector: PCAProjector | None = None
    source: str = "gaussian"
    meta: dict = field(default_factory=dict)
    scaler: tuple[np.ndarray, np.ndarray] | None = None   # (shift, scale) applied after projection

    @property
    def params(self):
        return self.field.params

    @property
    def state_dim(self) -> int:
        return self.field.state_dim

    def to_state(self, cells) -> np.ndarray:
        z = np.asarray(cells, dtype=np.float64) if self.projector is None else self.projector.project(cells)
        if self.scaler is not None:
            z = (z - self.scaler[0]) / self.scaler[1]
        return z

    def from_state(self, states) -> np.ndarray:
        z = np.asarray(states, dtype=np.float64)
        if self.scaler is not None:
            z = z * self.scaler[1] + self.scaler[0]
        return z if self.projector is None else self.projector.reconstruct(z)

    def encode(self, conditions) -> np.ndarray:
        return self.cond_encoder.batch(list(conditions))

    def save(self, directory, extra_meta: dict | None = None):
        arrays = dict(self.field.params.state())
        if self.projector is not None:
            arrays.update(self.projector.arrays())
        if self.scaler is not None:
            arrays["scaler.shift"], arrays["scaler.scale"] = self.scaler
        meta = {"kind": self.kind, "field": self.field.config(), "vocab": self.cond_encoder.to_json(),
                "genes": self.genes, "source": self.source, "has_projector": self.projector is not None,
                **self.meta, **(extra_meta or {})}
        return save_arrays(directory, arrays, meta)

    @classmethod
    def load(cls, directory) -> "FlowModel":
        arrays, meta = load_arrays(directory)
        fld = build_field(meta["field"])
        fld.params.load_state({k: v for k, v in arrays.items() if not k.startswith(("pca.", "scaler."))})
        projector = PCAProjector.from_arrays(arrays) if meta.get("has_projector") else None
        scaler = (arrays["scaler.shift"], arrays["scaler.scale"]) if "scaler.shift" in arrays else None
        vocab = meta["vocab"]
        extra = {k: v for k, v in meta.items()
                 if k not in ("kind", "field", "vocab", "genes", "source", "has_projector")}
        return cls(meta["kind"], fld, ConditionEncoder(vocab["perturbations"], vocab["covariates"]),
                   meta["genes"], projector, meta["source"], extra, scaler)


def build_model(kind: str, dataset: PerturbDataset, config: dict | None = None, seed: int = 0) -> FlowModel:
    """Fresh model for ``dataset``; hyperparameter names follow the training config keys."""
    if kind not in MODEL_KINDS:
        raise ConfigurationError(f"unknown model kind {kind!r}; expected one of {MODEL_KINDS}")
    config = dict(config or {})
    enc = ConditionEncoder(dataset.perturbation_vocab, dataset.covariate_vocab)
    train = dataset.cells[dataset.mask("train")]
    genes = list(dataset.genes)
    if kind == "primeflow_unet":
        kw = {k: config[k] for k in UNET_KEYS if k in config}
        model = FlowModel(kind, UNetVelocityField(dataset.genes, enc.dim, seed=seed, **kw), enc, genes)
    elif kind == "primeflow_mlp":
        kw = {k: config[k] for k in MLP_KEYS if k in config}
        model = FlowModel(kind, MLPVelocityField(dataset.n_genes, enc.dim, seed=seed, **kw), enc, genes)
    else:
        kw = {k: config[k] for k in MLP_KEYS if k in config}
        projector = pca_fit(train, int(config.get("pca_dim", 30)))
        fld = MLPVelocityField(projector.q, enc.dim, seed=seed, **kw)
        source = "control_cells" if kind == "fm_pca_ot" else "gaussian"
        model = FlowModel(kind, fld, enc, genes, projector, source)
    if config.get("standardize", True):
        model.scaler = fit_scaler(model.to_state(train))
    return model


def fit_scaler(states) -> tuple[np.ndarray, np.ndarray]:
    """Per-coordinate mean and standard deviation (constant coordinates keep scale 1)."""
    shift = states.mean(0)
    scale = states.std(0)
    return shift, np.where(scale > 0, scale, 1.0)


def source_controls(model: FlowModel, dataset: PerturbDataset, condition: Condition) -> np.ndarray:
    """Control cells (in model state space) used as the source for ``condition``."""
    return model.to_state(dataset.controls(condition.covariate))
