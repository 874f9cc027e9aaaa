"""Synthetic covariate-transfer benchmark shared by the acceptance suite and the demos."""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .data import PerturbDataset, SynthSpec, split_covariate_transfer, synth_generate
from .flow import FlowConfig, train
from .metrics import MetricsReport, evaluate, linear_additive_dataset, mmd_rbf
from .models import build_model
from .sampler import SamplerConfig, sample_conditions

SAMPLE_BUDGET = 20_000
HOLDOUT_FRACTION = 0.5
DEG_K = 10

# hyperparameters per model kind; flow keys go to FlowConfig, the rest to build_model
MODEL_CONFIGS = {
    "primeflow_unet": {"use_scale_shift_norm": True, "batch_size": 16, "learning_rate": 1e-3},
    "primeflow_mlp": {"batch_size": 16, "learning_rate": 1e-3},
    "fm_pca": {"pca_dim": 8, "batch_size": 16, "learning_rate": 1e-3},
    "fm_pca_ot": {"pca_dim": 8, "batch_size": 16, "learning_rate": 1e-3, "coupling": "ot"},
}
SAMPLER = {"steps": 100, "cfg_weight": 2.0, "num_samples": 400}


def benchmark_dataset(seed: int = 0, spec: SynthSpec | None = None) -> PerturbDataset:
    """32 genes, 2 covariates x 6 perturbations, half the perturbed conditions held out."""
    return split_covariate_transfer(synth_generate(spec or SynthSpec(), seed), HOLDOUT_FRACTION, seed)


@dataclass
class BenchmarkRun:
    kind: str
    seed: int
    report: MetricsReport
    generated: PerturbDataset
    train_seconds: float
    sample_seconds: float
    samples_seen: int
    losses: list = field(default_factory=list)

    def mean(self, metric: str) -> float:
        return float(np.mean(self.report.values(metric)))


def run_model(kind: str, dataset: PerturbDataset, seed: int = 0, config: dict | None = None,
              sampler: dict | None = None, budget: int = SAMPLE_BUDGET) -> BenchmarkRun:
    """Train ``kind`` on the train split within ``budget`` samples, sample every test condition, score."""
    config = dict(MODEL_CONFIGS[kind] if config is None else config)
    model = build_model(kind, dataset, config, seed)
    flow_cfg = FlowConfig.from_dict(config)
    start = time.perf_counter()
    result = train(model, dataset, flow_cfg, epochs=10**6, rng=np.random.default_rng(seed), max_samples=budget)
    trained = time.perf_counter()
    conditions = [c for c in dataset.unique_conditions("test") if not c.is_control]
    scfg = SamplerConfig(**{**SAMPLER, **(sampler or {})})
    generated = sample_conditions(model, conditions, scfg, np.random.default_rng(seed + 1), dataset)
    sampled = time.perf_counter()
    report = evaluate(generated, dataset, k=DEG_K)
    return BenchmarkRun(kind, seed, report, generated, trained - start, sampled - trained, result.samples_seen,
                        result.losses)


def linear_additive_run(dataset: PerturbDataset, seed: int = 0, n: int | None = None) -> MetricsReport:
    conditions = [c for c in dataset.unique_conditions("test") if not c.is_control]
    base = linear_additive_dataset(dataset, conditions, n or SAMPLER["num_samples"], seed)
    return evaluate(base, dataset, k=DEG_K)


def control_mmd(dataset: PerturbDataset) -> dict[str, float]:
    """MMD between each held-out condition and its covariate's control cells."""
    return {c.key: mmd_rbf(dataset.controls(c.covariate), dataset.cells_of(c, "test"))
            for c in dataset.unique_conditions("test") if not c.is_control}
