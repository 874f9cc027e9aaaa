from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields

from ..errors import ConfigurationError

# hyperparameter-table spellings accepted in JSON configs
ALIASES = {
    "prob_unconditional": "p_uncond",
    "interpl_type": "interpolation",
    "solver_type": "ot_solver",
    "tau_a": "ot_tau_a",
    "tau_b": "ot_tau_b",
    "num_samples_per_condition": "ot_num_samples",
}


@dataclass
class FlowConfig:
    interpolation: str = "linear"
    sigma: float = 0.0
    p_uncond: float = 0.2
    batch_size: int = 64
    grad_accum_batches: int = 1
    learning_rate: float = 1e-3
    weight_decay: float = 0.0
    grad_clip_threshold: float = 5.0
    coupling: str = "independent"
    ot_num_samples: int = 128
    ot_solver: str = "unbalanced"
    ot_tau_a: float = 1.0
    ot_tau_b: float = 1.0
    ot_epsilon: float = 0.05
    ot_max_iter: int = 2000
    ot_tol: float = 1e-3

    def __post_init__(self):
        self.interpolation = str(self.interpolation).lower()
        if self.interpolation not in ("linear", "trigonometric"):
            raise ConfigurationError(f"unknown interpolation {self.interpolation!r}")
        if not self.sigma >= 0:
            raise ConfigurationError(f"sigma must be >= 0, got {self.sigma}")
        if not 0.0 <= self.p_uncond <= 1.0:
            raise ConfigurationError(f"p_uncond must lie in [0, 1], got {self.p_uncond}")
        if self.batch_size < 1 or self.grad_accum_batches < 1:
            raise ConfigurationError("batch_size and grad_accum_batches must be >= 1")
        if self.coupling not in ("independent", "ot"):
            raise ConfigurationError(f"unknown coupling {self.coupling!r}")
        for name in ("ot_tau_a", "ot_tau_b"):
            if not 0.0 < getattr(self, name) <= 1.0:
                raise ConfigurationError(f"{name} must lie in (0, 1], got {getattr(self, name)}")
        if self.ot_solver not in ("balanced", "unbalanced"):
            raise ConfigurationError(f"unknown ot solver {self.ot_solver!r}")
        if not self.grad_clip_threshold > 0:
            raise ConfigurationError("grad_clip_threshold must be positive")

    @classmethod
    def from_dict(cls, obj: dict) -> "FlowConfig":
        """Build from a dict, ignoring keys that belong to other components."""
        names = {f.name for f in fields(cls)}
        kw = {}
        for key, value in obj.items():
            key = ALIASES.get(key, key)
            if key in names:
                kw[key] = value
        return cls(**kw)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)
