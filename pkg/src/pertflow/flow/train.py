"""Conditional flow-matching training loop."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .. import numcore as nc
from ..data import PerturbDataset
from ..encoding import dropout_conditions
from ..errors import NumericalError, PreconditionError
from ..models.flow_model import FlowModel
from .config import FlowConfig
from .coupling import couple_independent, couple_ot
from .paths import cfm_loss, sample_path_point

log = logging.getLogger(__name__)


@dataclass
class TrainResult:
    losses: list[float] = field(default_factory=list)
    samples_seen: int = 0
    steps: int = 0
    optimizer: nc.AdamState = field(default_factory=nc.AdamState)

    def write_csv(self, path):
        with open(path, "w") as fh:
            fh.write("step,loss\n")
            for i, v in enumerate(self.losses):
                fh.write(f"{i},{v!r}\n")


def _independent_batches(model, ds, cfg, rng):
    """One epoch: all train cells in shuffled order, chunked by batch size."""
    idx = np.flatnonzero(ds.mask("train"))
    idx = idx[rng.permutation(idx.size)]
    states = model.to_state(ds.cells)
    for lo in range(0, idx.size, cfg.batch_size):
        sel = idx[lo:lo + cfg.batch_size]
        x0, x1 = couple_independent(states[sel], rng)
        yield x0, x1, [ds.conditions[i] for i in sel]


def _ot_batches(model, ds, cfg, rng):
    """One epoch: every train condition once, each as an OT-coupled batch."""
    train = ds.mask("train")
    conds = ds.unique_conditions("train")
    order = rng.permutation(len(conds))
    for k in order:
        cond = conds[k]
        controls = model.to_state(ds.cells[train & ds.mask(condition=cond.control())])
        if controls.shape[0] == 0:
            raise PreconditionError(f"no train control cells for covariate {cond.covariate!r}")
        target = model.to_state(ds.cells[train & ds.mask(condition=cond)])
        x0, x1, _ = couple_ot(controls, target, cfg, rng, n_pairs=cfg.batch_size)
        yield x0, x1, [cond] * x1.shape[0]


def train(model: FlowModel, dataset: PerturbDataset, cfg: FlowConfig, epochs: int, rng: np.random.Generator,
          max_samples: int | None = None, state: TrainResult | None = None, on_step=None) -> TrainResult:
    """Fit ``model`` by conditional flow matching; returns the per-step loss trace.

    One optimizer step consumes ``grad_accum_batches`` mini-batches; the
    step gradient is their mean, clipped to ``grad_clip_threshold`` before
    the Adam update.  ``max_samples`` stops training once that many data
    samples have been consumed (mini-batches are never split).
    """
    if not dataset.mask("train").any():
        raise PreconditionError("dataset has no train split")
    result = state or TrainResult()
    params = model.params
    make_batches = _ot_batches if cfg.coupling == "ot" else _independent_batches
    accum = cfg.grad_accum_batches

    def budget_left():
        return max_samples is None or result.samples_seen < max_samples

    for epoch in range(epochs):
        if not budget_left():
            break
        batches = make_batches(model, dataset, cfg, rng)
        pending, step_losses = 0, []
        params.zero_grad()
        for x0, x1, conds in batches:
            if not budget_left():
                break
            b = x1.shape[0]
            t = rng.random(b)
            sample = sample_path_point(x0, x1, t, cfg, rng)
            cond_enc = model.encode(dropout_conditions(conds, cfg.p_uncond, rng))
            with nc.Tape() as tape:
                loss = cfm_loss(model.field, sample, cond_enc, rng)
                value = float(loss.data)
                if not np.isfinite(value):
                    raise NumericalError(f"non-finite loss at step {result.steps}", step=result.steps)
                tape.backward(loss, seed=np.array(1.0 / accum))
            step_losses.append(value)
            result.samples_seen += b
            pending += 1
            if pending == accum:
                _update(params, result, cfg, step_losses, on_step)
                pending, step_losses = 0, []
        if pending:
            # partial accumulation at epoch end: rescale to a mean over the batches seen
            for p in params.values():
                if p.grad is not None:
                    p.grad = p.grad * (accum / pending)
            _update(params, result, cfg, step_losses, on_step)
        log.debug("epoch %d done: %d steps, last loss %.4g", epoch, result.steps,
                  result.losses[-1] if result.losses else float("nan"))
    return result


def _update(params, result: TrainResult, cfg: FlowConfig, step_losses, on_step):
    for p in params.values():
        if p.grad is None:
            p.grad = np.zeros_like(p.data)
    nc.clip_grad_norm(params, cfg.grad_clip_threshold)
    nc.adam_step(params, result.optimizer, cfg.learning_rate, cfg.weight_decay)
    params.zero_grad()
    result.losses.append(float(np.mean(step_losses)))
    result.steps += 1
    if on_step is not None:
        on_step(result)
