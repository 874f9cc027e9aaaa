"""Perturb-seq shaped datasets: conditions, normalization, pseudobulks, synthetic data, splits."""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass, field
from itertools import combinations
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigurationError, DataError, SplitError

SPLITS = ("train", "val", "test")


@dataclass(frozen=True, order=True)
class Condition:
    """A set of perturbations applied in one covariate context.

    The empty perturbation set denotes control cells.  ``None`` (not a
    Condition) is used for the unconditional/null marker.
    """

    covariate: str
    perturbations: tuple[str, ...] = ()

    def __post_init__(self):
        perts = tuple(sorted(set(self.perturbations)))
        if len(perts) != len(tuple(self.perturbations)):
            raise DataError(f"duplicate perturbation in {self.perturbations!r}")
        object.__setattr__(self, "perturbations", perts)

    @classmethod
    def make(cls, covariate: str, perturbations: Sequence[str] = ()) -> "Condition":
        return cls(covariate, tuple(perturbations))

    @property
    def is_control(self) -> bool:
        return not self.perturbations

    @property
    def n_perturbations(self) -> int:
        return len(self.perturbations)

    @property
    def key(self) -> str:
        return f"{self.covariate}/{'+'.join(self.perturbations) or 'control'}"

    def control(self) -> "Condition":
        return Condition(self.covariate, ())

    def to_json(self) -> dict:
        return {"covariate": self.covariate, "perturbations": list(self.perturbations)}

    @classmethod
    def from_json(cls, obj: dict) -> "Condition":
        return cls(obj["covariate"], tuple(obj.get("perturbations", ())))


@dataclass
class Pseudobulk:
    condition: Condition
    mean_expression: np.ndarray
    cell_count: int


@dataclass
class PerturbDataset:
    genes: list[str]
    cells: np.ndarray
    conditions: list[Condition]
    split: np.ndarray
    perturbation_vocab: list[str] = field(default_factory=list)
    covariate_vocab: list[str] = field(default_factory=list)
    normalization: dict = field(default_factory=dict)

    def __post_init__(self):
        self.cells = np.asarray(self.cells, dtype=np.float64)
        self.split = np.asarray(self.split, dtype=object)
        n = self.cells.shape[0]
        if self.cells.ndim != 2 or self.cells.shape[1] != len(self.genes):
            raise DataError(f"cells shape {self.cells.shape} does not match {len(self.genes)} genes")
        if len(self.conditions) != n or len(self.split) != n:
            raise DataError("conditions/split length must equal the number of cells")
        if len(set(self.genes)) != len(self.genes):
            raise DataError("gene identifiers must be unique")
        bad = set(self.split.tolist()) - set(SPLITS)
        if bad:
            raise DataError(f"unknown split labels {sorted(bad)}")
        perts = {p for c in self.conditions for p in c.perturbations}
        covs = {c.covariate for c in self.conditions}
        if not self.perturbation_vocab:
            self.perturbation_vocab = sorted(perts)
        if not self.covariate_vocab:
            self.covariate_vocab = sorted(covs)
        unknown = (perts - set(self.perturbation_vocab)) | (covs - set(self.covariate_vocab))
        if unknown:
            raise DataError(f"conditions reference identifiers outside the vocabulary: {sorted(unknown)}")

    @property
    def n_cells(self) -> int:
        return self.cells.shape[0]

    @property
    def n_genes(self) -> int:
        return len(self.genes)

    def mask(self, split: str | None = None, condition: Condition | None = None) -> np.ndarray:
        m = np.ones(self.n_cells, dtype=bool)
        if split is not None:
            m &= self.split == split
        if condition is not None:
            table, codes = self._condition_codes()
            m &= codes == table.get(condition, -1)
        return m

    def _condition_codes(self):
        cached = self.__dict__.get("_codes")
        if cached is None:
            table = {c: i for i, c in enumerate(sorted(set(self.conditions)))}
            cached = (table, np.array([table[c] for c in self.conditions], dtype=np.int64))
            self.__dict__["_codes"] = cached
        return cached

    def cells_of(self, condition: Condition, split: str | None = None) -> np.ndarray:
        return self.cells[self.mask(split, condition)]

    def unique_conditions(self, split: str | None = None) -> list[Condition]:
        conds = self.conditions if split is None else [c for c, s in zip(self.conditions, self.split) if s == split]
        return sorted(set(conds))

    def controls(self, covariate: str) -> np.ndarray:
        """All control cells of ``covariate`` regardless of split."""
        return self.cells_of(Condition(covariate))

    def with_split(self, split) -> "PerturbDataset":
        return PerturbDataset(list(self.genes), self.cells, list(self.conditions), np.asarray(split, dtype=object),
                              list(self.perturbation_vocab), list(self.covariate_vocab), dict(self.normalization))

    def subset(self, mask) -> "PerturbDataset":
        idx = np.flatnonzero(mask)
        return PerturbDataset(list(self.genes), self.cells[idx], [self.conditions[i] for i in idx],
                              self.split[idx], list(self.perturbation_vocab), list(self.covariate_vocab),
                              dict(self.normalization))

    # ------------------------------------------------------------------ IO

    def save(self, directory) -> Path:
        """Write ``meta.json`` and ``cells.f64`` (little-endian, row-major)."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        table = sorted(set(self.conditions))
        index = {c: i for i, c in enumerate(table)}
        pvocab = {p: i for i, p in enumerate(self.perturbation_vocab)}
        cvocab = {c: i for i, c in enumerate(self.covariate_vocab)}
        meta = {
            "format": "pertflow-dataset/1",
            "n_cells": self.n_cells,
            "n_genes": self.n_genes,
            "genes": list(self.genes),
            "perturbations": list(self.perturbation_vocab),
            "covariates": list(self.covariate_vocab),
            "condition_table": [[[pvocab[p] for p in c.perturbations], cvocab[c.covariate]] for c in table],
            "cell_condition": [index[c] for c in self.conditions],
            "split": [str(s) for s in self.split],
            "normalization": self.normalization,
        }
        _atomic_write(directory / "cells.f64", np.asarray(self.cells, dtype="<f8", order="C").tobytes())
        _atomic_write(directory / "meta.json", json.dumps(meta, sort_keys=True).encode())
        return directory

    @classmethod
    def load(cls, directory) -> "PerturbDataset":
        directory = Path(directory)
        try:
            meta = json.loads((directory / "meta.json").read_text())
            raw = (directory / "cells.f64").read_bytes()
        except FileNotFoundError as exc:
            raise DataError(f"not a dataset directory: {directory} ({exc.filename} missing)") from None
        n, m = meta["n_cells"], meta["n_genes"]
        if len(raw) != 8 * n * m:
            raise DataError(f"cells.f64 holds {len(raw)} bytes, expected {8 * n * m}")
        cells = np.frombuffer(raw, dtype="<f8").reshape(n, m).astype(np.float64)
        pv, cv = meta["perturbations"], meta["covariates"]
        table = [Condition(cv[ci], tuple(pv[i] for i in pis)) for pis, ci in meta["condition_table"]]
        conditions = [table[i] for i in meta["cell_condition"]]
        return cls(meta["genes"], cells, conditions, np.array(meta["split"], dtype=object), pv, cv,
                   meta.get("normalization", {}))


def _atomic_write(path: Path, payload: bytes):
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(payload)
    os.replace(tmp, path)


# -------------------------------------------------------------- operations

def log1p_normalize(counts, target_sum: float = 1e4) -> np.ndarray:
    """Scale each row to ``target_sum`` total, then apply ``ln(1 + x)``."""
    counts = np.asarray(counts, dtype=np.float64)
    totals = counts.sum(axis=1)
    bad = np.flatnonzero(~(totals > 0))
    if bad.size:
        raise DataError(f"row {int(bad[0])} has non-positive total count")
    return np.log1p(counts * (target_sum / totals)[:, None])


def pseudobulk(ds: PerturbDataset, split: str | None = "test") -> list[Pseudobulk]:
    """One mean profile per distinct condition of ``split`` (``None`` = all cells)."""
    mask = ds.mask(split)
    if not mask.any():
        raise DataError(f"split {split!r} is empty")
    out = []
    for cond in ds.unique_conditions(split):
        x = ds.cells[mask & ds.mask(condition=cond)]
        out.append(Pseudobulk(cond, x.mean(axis=0), x.shape[0]))
    return out


def pseudobulk_of(cells: np.ndarray, condition: Condition) -> Pseudobulk:
    cells = np.asarray(cells, dtype=np.float64)
    if cells.shape[0] == 0:
        raise DataError(f"no cells for {condition.key}")
    return Pseudobulk(condition, cells.mean(axis=0), cells.shape[0])


def log_fold_change(perturbed: Pseudobulk, control: Pseudobulk) -> np.ndarray:
    """Difference of log1p-space pseudobulk means."""
    if perturbed.condition.covariate != control.condition.covariate:
        raise DataError(f"covariate mismatch: {perturbed.condition.key} vs {control.condition.key}")
    if perturbed.mean_expression.shape != control.mean_expression.shape:
        raise DataError("pseudobulks have different gene counts")
    return perturbed.mean_expression - control.mean_expression


def write_pseudobulk_csv(path, bulks: list[Pseudobulk], genes: list[str]):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["condition", "covariate", "perturbations", "cell_count", *genes])
        for pb in bulks:
            w.writerow([pb.condition.key, pb.condition.covariate, "+".join(pb.condition.perturbations),
                        pb.cell_count, *(repr(float(v)) for v in pb.mean_expression)])


# -------------------------------------------------------- synthetic data

@dataclass
class SynthSpec:
    """Settings for the synthetic perturb-seq generator.

    Expression is produced directly in log1p space as
    ``baseline[cov] + mode * effect[cond] + noise``, where ``mode`` is drawn
    from a two-component mixture with mean 1 (so the condition mean moves by
    exactly ``effect``) and ``noise`` is Gaussian.  Effects and baselines are
    drawn from the seed unless given explicitly.

    ``programs`` adds shared cell-state variation that ignores the condition:
    each cell gets ``program_sd * z @ loadings`` with ``z ~ N(0, I)`` and
    unit-norm random loading rows, the way cell cycle or cell size programs
    dominate the leading principal components of real data.
    """

    n_genes: int = 32
    covariates: list[str] = field(default_factory=lambda: ["cov0", "cov1"])
    perturbations: list[str] = field(default_factory=lambda: [f"p{i}" for i in range(6)])
    cells_per_condition: int = 400
    control_cells: int | None = None
    baseline_range: tuple[float, float] = (4.0, 6.0)
    effect_genes: int = 10
    effect_range: tuple[float, float] = (1.0, 2.0)
    noise_sd: float = 0.3
    mode_scales: tuple[float, float] = (0.0, 2.0)
    mode_weight: float = 0.5
    programs: int = 0
    program_sd: float = 0.0
    combos: list[list[str]] | str | None = None
    interaction_sd: float = 0.0
    effects: dict[str, list[float]] | None = None
    baselines: dict[str, list[float]] | None = None
    interactions: dict[str, list[float]] | None = None
    target_sum: float | None = None

    REQUIRED = ("n_genes", "covariates", "perturbations", "cells_per_condition")

    @classmethod
    def from_dict(cls, obj: dict) -> "SynthSpec":
        for key in cls.REQUIRED:
            if key not in obj:
                raise ConfigurationError(f"missing required key {key!r}")
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(obj) - known
        if unknown:
            raise ConfigurationError(f"unknown generator keys {sorted(unknown)}")
        kw = dict(obj)
        for k in ("baseline_range", "effect_range", "mode_scales"):
            if k in kw:
                kw[k] = tuple(kw[k])
        return cls(**kw)

    def mode_mean(self) -> float:
        lo, hi = self.mode_scales
        return (1.0 - self.mode_weight) * lo + self.mode_weight * hi


def _combo_key(perts) -> str:
    return "+".join(sorted(perts))


def synth_parameters(spec: SynthSpec, seed: int) -> dict:
    """Baselines, effects and interactions the generator will use for ``seed``."""
    if spec.n_genes < 1 or not spec.perturbations or not spec.covariates:
        raise ConfigurationError("generator needs at least one gene, covariate and perturbation")
    if abs(spec.mode_mean() - 1.0) > 1e-12:
        raise ConfigurationError(f"mode mixture must have mean 1, got {spec.mode_mean()}")
    rng = np.random.default_rng([seed, 0])
    m = spec.n_genes
    baselines = {}
    for cov in spec.covariates:
        given = (spec.baselines or {}).get(cov)
        baselines[cov] = np.asarray(given, dtype=float) if given is not None else rng.uniform(*spec.baseline_range, m)
    effects = {}
    k = min(spec.effect_genes, m)
    for p in spec.perturbations:
        given = (spec.effects or {}).get(p)
        if given is not None:
            effects[p] = np.asarray(given, dtype=float)
            continue
        e = np.zeros(m)
        genes = rng.choice(m, size=k, replace=False)
        e[genes] = rng.uniform(*spec.effect_range, k) * rng.choice([-1.0, 1.0], k)
        effects[p] = e
    if spec.combos == "all":
        combos = [list(c) for c in combinations(sorted(spec.perturbations), 2)]
    else:
        combos = [sorted(c) for c in (spec.combos or [])]
    interactions = {}
    for c in combos:
        if len(c) != 2 or any(p not in effects for p in c):
            raise ConfigurationError(f"combination {c} must name two known perturbations")
        key = _combo_key(c)
        given = (spec.interactions or {}).get(key)
        if given is not None:
            interactions[key] = np.asarray(given, dtype=float)
        else:
            interactions[key] = rng.normal(0.0, spec.interaction_sd, m) if spec.interaction_sd > 0 else np.zeros(m)
    for name, vec in [*baselines.items(), *effects.items(), *interactions.items()]:
        if vec.shape != (m,):
            raise ConfigurationError(f"vector for {name!r} has shape {vec.shape}, expected ({m},)")
    loadings = np.zeros((0, m))
    if spec.programs < 0 or spec.program_sd < 0:
        raise ConfigurationError("programs and program_sd must be non-negative")
    if spec.programs:
        raw = np.random.default_rng([seed, 2]).standard_normal((spec.programs, m))
        loadings = raw / np.linalg.norm(raw, axis=1, keepdims=True)
    return {"baselines": baselines, "effects": effects, "interactions": interactions, "loadings": loadings}


def condition_mean_shift(params: dict, cond: Condition) -> np.ndarray:
    """Configured mean effect of ``cond`` relative to its control."""
    shift = sum((params["effects"][p] for p in cond.perturbations), np.zeros_like(params["baselines"][cond.covariate]))
    if cond.n_perturbations == 2:
        shift = shift + params["interactions"][_combo_key(cond.perturbations)]
    return shift


def synth_generate(spec: SynthSpec, seed: int) -> PerturbDataset:
    """Deterministic synthetic dataset; all cells start in the train split."""
    params = synth_parameters(spec, seed)
    rng = np.random.default_rng([seed, 1])
    program_rng = np.random.default_rng([seed, 3])
    m = spec.n_genes
    conds: list[Condition] = []
    for cov in spec.covariates:
        conds.append(Condition(cov))
        conds.extend(Condition(cov, (p,)) for p in spec.perturbations)
        conds.extend(Condition(cov, tuple(key.split("+"))) for key in params["interactions"])
    lo, hi = spec.mode_scales
    blocks, labels = [], []
    for cond in conds:
        n = spec.control_cells if cond.is_control and spec.control_cells is not None else spec.cells_per_condition
        shift = condition_mean_shift(params, cond)
        # balanced mixture assignment keeps the condition mean exactly on target
        n_hi = int(round(n * spec.mode_weight))
        mode = np.where(rng.permutation(n) < n_hi, hi, lo)
        if cond.is_control:
            mode = np.ones(n)
        x = params["baselines"][cond.covariate] + mode[:, None] * shift + rng.normal(0.0, spec.noise_sd, (n, m))
        if spec.programs:
            x = x + spec.program_sd * program_rng.standard_normal((n, spec.programs)) @ params["loadings"]
        blocks.append(np.maximum(x, 0.0))
        labels.extend([cond] * n)
    cells = np.vstack(blocks)
    normalization = {"kind": "synthetic-log1p", "seed": seed}
    if spec.target_sum is not None:
        cells = log1p_normalize(np.expm1(cells) + 1e-12, spec.target_sum)
        normalization = {"kind": "log1p", "target_sum": spec.target_sum, "seed": seed}
    genes = [f"g{j:0{len(str(m - 1))}d}" for j in range(m)]
    return PerturbDataset(genes, cells, labels, np.array(["train"] * len(labels), dtype=object),
                          sorted(spec.perturbations), sorted(spec.covariates), normalization)


# ------------------------------------------------------------------ splits

def _hold_out(rng, candidates: list, count: int) -> list:
    order = rng.permutation(len(candidates))
    return [candidates[i] for i in order[:count]]


def _assign(ds: PerturbDataset, held: list[Condition], val_fraction: float, rng) -> PerturbDataset:
    held = sorted(held)
    n_val = int(np.floor(val_fraction * len(held) + 0.5))
    val = set(_hold_out(rng, held, n_val))
    label = {c: ("val" if c in val else "test") for c in held}
    split = np.array([label.get(c, "train") for c in ds.conditions], dtype=object)
    return ds.with_split(split)


def split_covariate_transfer(ds: PerturbDataset, holdout_fraction: float = 0.3, seed: int = 0,
                             val_fraction: float = 0.0) -> PerturbDataset:
    """Hold out perturbations per covariate while keeping each one trained elsewhere.

    For each covariate (in vocabulary order) ``round(holdout_fraction * n)``
    of its single perturbations are moved out of train; a perturbation is only
    eligible if it stays in train under some other covariate.  Held-out
    conditions go to val with probability ``val_fraction``, otherwise test.
    Controls always stay in train.
    """
    if not 0.0 < holdout_fraction < 1.0:
        raise ConfigurationError(f"holdout_fraction must lie in (0, 1), got {holdout_fraction}")
    covs = sorted({c.covariate for c in ds.conditions})
    if len(covs) < 2:
        raise SplitError("covariate transfer needs at least two covariates")
    rng = np.random.default_rng(seed)
    present = {cov: sorted({c.perturbations[0] for c in ds.conditions if c.covariate == cov and c.n_perturbations == 1})
               for cov in covs}
    held: dict[str, set[str]] = {cov: set() for cov in covs}
    for cov in covs:
        target = int(np.floor(holdout_fraction * len(present[cov]) + 0.5))
        eligible = [p for p in present[cov]
                    if any(p in present[o] and p not in held[o] for o in covs if o != cov)]
        if len(eligible) < target:
            stuck = [p for p in present[cov] if p not in eligible]
            raise SplitError(f"covariate {cov!r}: need {target} held-out perturbations but only "
                             f"{len(eligible)} remain trained elsewhere; blocked: {stuck}", stuck)
        held[cov] = set(_hold_out(rng, eligible, target))
    out = [Condition(cov, (p,)) for cov in covs for p in sorted(held[cov])]
    return _assign(ds, out, val_fraction, rng)


def split_combo(ds: PerturbDataset, holdout_fraction: float = 0.5, seed: int = 0,
                val_fraction: float = 0.0, allow_empty: bool = False) -> PerturbDataset:
    """Hold out dual-perturbation conditions; singles and controls stay in train."""
    if not 0.0 < holdout_fraction <= 1.0:
        raise ConfigurationError(f"holdout_fraction must lie in (0, 1], got {holdout_fraction}")
    conds = sorted(set(ds.conditions))
    duals = [c for c in conds if c.n_perturbations == 2]
    if not duals:
        if allow_empty:
            return ds.with_split(np.array(["train"] * ds.n_cells, dtype=object))
        raise SplitError("dataset contains no dual-perturbation conditions")
    singles = {c for c in conds if c.n_perturbations == 1}
    missing = sorted({f"{d.covariate}/{p}" for d in duals for p in d.perturbations
                      if Condition(d.covariate, (p,)) not in singles})
    if missing:
        raise SplitError(f"dual conditions reference unobserved singles: {missing}", missing)
    rng = np.random.default_rng(seed)
    target = int(np.floor(holdout_fraction * len(duals) + 0.5))
    return _assign(ds, _hold_out(rng, duals, target), val_fraction, rng)


def check_dataset_invariants(ds: PerturbDataset) -> list[str]:
    """Human-readable violations of the dataset invariants (empty when valid)."""
    problems = []
    if np.any(ds.cells < 0):
        problems.append("negative expression values")
    if not np.all(np.isfinite(ds.cells)):
        problems.append("non-finite expression values")
    covs_with_controls = {c.covariate for c in ds.conditions if c.is_control}
    for cond in ds.unique_conditions():
        if cond.is_control:
            continue
        splits = set(ds.split[ds.mask(condition=cond)].tolist())
        if splits & {"val", "test"} and cond.covariate not in covs_with_controls:
            problems.append(f"{cond.key} held out without same-covariate controls")
    if np.any(ds.split[np.array([c.is_control for c in ds.conditions])] != "train"):
        problems.append("control cells outside train")
    return problems
