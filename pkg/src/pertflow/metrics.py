"""Distributional and pseudobulk evaluation of generated cells.

All metrics live in log1p expression space.  Rank variants measure
specificity: for target condition ``i`` the metric is recomputed against
every other held-out condition ``j`` of the same covariate, and the rank is
the fraction of those ``j`` that look better than the true match (ties
count one half).  0 is perfect.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import Condition, PerturbDataset, log_fold_change, pseudobulk_of
from .errors import CoverageError, DataError, DimensionError, EvaluationError
from .models.pca import PCAProjector, pca_fit

METRICS = ("mmd_gex", "mmd_pca", "deg_recall", "cosine_logfc", "rmse_mean")
DISTANCE_LIKE = {"mmd_gex": True, "mmd_pca": True, "rmse_mean": True, "deg_recall": False, "cosine_logfc": False}


# ----------------------------------------------------------------- MMD

def _sq_dists(x, y):
    d = (x * x).sum(1)[:, None] + (y * y).sum(1)[None, :] - 2.0 * x @ y.T
    return np.maximum(d, 0.0)


def median_bandwidth(x, y) -> float:
    """Median pairwise Euclidean distance over the pooled sample (0 if degenerate)."""
    z = np.vstack([x, y])
    d = _sq_dists(z, z)
    iu = np.triu_indices(z.shape[0], k=1)
    return float(np.sqrt(np.median(d[iu]))) if iu[0].size else 0.0


def mmd_rbf(X, Y, bandwidth: float | str = "median", flags: list | None = None) -> float:
    """Biased (V-statistic) squared MMD with ``k(x, y) = exp(-|x - y|^2 / (2 h^2))``."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    Y = np.atleast_2d(np.asarray(Y, dtype=np.float64))
    if X.shape[0] < 1 or Y.shape[0] < 1 or X.shape[1] < 1:
        raise DimensionError("MMD needs non-empty samples with at least one feature")
    if X.shape[1] != Y.shape[1]:
        raise DimensionError(f"feature mismatch: {X.shape[1]} vs {Y.shape[1]}")
    if bandwidth == "median":
        h = median_bandwidth(X, Y)
        if h == 0.0:
            h = 1.0
            if flags is not None:
                flags.append("median bandwidth was zero; fell back to 1.0")
    else:
        h = float(bandwidth)
    gamma = 1.0 / (2.0 * h * h)
    kxx = np.exp(-gamma * _sq_dists(X, X)).mean()
    kyy = np.exp(-gamma * _sq_dists(Y, Y)).mean()
    kxy = np.exp(-gamma * _sq_dists(X, Y)).mean()
    return float(max(kxx + kyy - 2.0 * kxy, 0.0))


def mmd_pca(X, Y, projector: PCAProjector, bandwidth: float | str = "median") -> float:
    X = np.asarray(X, dtype=np.float64)
    if X.shape[-1] != projector.n_genes or np.shape(Y)[-1] != projector.n_genes:
        raise DimensionError(f"projector expects {projector.n_genes} genes")
    return mmd_rbf(projector.project(X), projector.project(Y), bandwidth)


# -------------------------------------------------------- pseudobulk metrics

def top_k_genes(lfc, k: int) -> np.ndarray:
    """Indices of the ``k`` largest |logFC| entries (stable order on ties)."""
    return np.argsort(-np.abs(np.asarray(lfc)), kind="stable")[:k]


def deg_recall(pred, true, control, k: int = 50, flags: list | None = None) -> float:
    pred, true, control = (np.atleast_2d(np.asarray(a, dtype=np.float64)) for a in (pred, true, control))
    if min(pred.shape[0], true.shape[0], control.shape[0]) < 1:
        raise DataError("deg_recall needs non-empty prediction, truth and control cells")
    m = true.shape[1]
    if pred.shape[1] != m or control.shape[1] != m:
        raise DimensionError("prediction, truth and control must share genes")
    if k > m:
        if flags is not None:
            flags.append(f"K={k} exceeds {m} genes; clamped")
        k = m
    ctrl = control.mean(0)
    truth_set = set(top_k_genes(true.mean(0) - ctrl, k).tolist())
    pred_set = set(top_k_genes(pred.mean(0) - ctrl, k).tolist())
    return len(truth_set & pred_set) / k


def cosine_logfc(pred, true, control, flags: list | None = None) -> float:
    ctrl = np.atleast_2d(control).mean(0)
    a = np.atleast_2d(pred).mean(0) - ctrl
    b = np.atleast_2d(true).mean(0) - ctrl
    return cosine(a, b, flags)


def cosine(a, b, flags: list | None = None) -> float:
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        if flags is not None:
            flags.append("zero logFC vector; cosine defined as 0")
        return 0.0
    return float(np.clip(np.dot(a, b) / (na * nb), -1.0, 1.0))


def rmse_mean(pred, true) -> float:
    pred = np.atleast_2d(np.asarray(pred, dtype=np.float64))
    true = np.atleast_2d(np.asarray(true, dtype=np.float64))
    if pred.shape[0] < 1 or true.shape[0] < 1:
        raise DataError("rmse_mean needs non-empty inputs")
    diff = pred.mean(0) - true.mean(0)
    return float(np.sqrt(np.mean(diff * diff)))


def rank_metric(values, target: int, distance_like: bool = True) -> float | None:
    """Fraction of wrong candidates scoring better than the true match.

    ``values[j]`` is ``metric(pred_target, true_j)``.  Returns None when
    there are fewer than two candidates.
    """
    values = np.asarray(values, dtype=np.float64)
    n = values.size
    if n < 2:
        return None
    own = values[target]
    others = np.delete(values, target)
    better = (others < own) if distance_like else (others > own)
    ties = others == own
    return float((better.sum() + 0.5 * ties.sum()) / (n - 1))


# ------------------------------------------------------- linear additive

def linear_additive_predict(train: PerturbDataset, condition: Condition, control_mean=None) -> np.ndarray:
    """Control mean of the target covariate plus summed per-perturbation mean logFCs.

    Each perturbation's logFC is estimated in every covariate where it was
    seen as a single perturbation in the train split, then averaged.
    """
    mask = train.mask("train")
    if control_mean is None:
        ctrl = train.cells[mask & train.mask(condition=condition.control())]
        if ctrl.shape[0] == 0:
            raise CoverageError(f"no train controls for covariate {condition.covariate!r}")
        control_mean = ctrl.mean(0)
    pred = np.array(control_mean, dtype=np.float64)
    for p in condition.perturbations:
        deltas = []
        for cov in train.covariate_vocab:
            pc = train.cells[mask & train.mask(condition=Condition(cov, (p,)))]
            cc = train.cells[mask & train.mask(condition=Condition(cov))]
            if pc.shape[0] and cc.shape[0]:
                deltas.append(log_fold_change(pseudobulk_of(pc, Condition(cov, (p,))), pseudobulk_of(cc, Condition(cov))))
        if not deltas:
            raise CoverageError(f"perturbation {p!r} is never observed alone in train")
        pred = pred + np.mean(deltas, axis=0)
    return pred


def linear_additive_cells(train: PerturbDataset, condition: Condition, n: int, rng: np.random.Generator) -> np.ndarray:
    """Resampled same-covariate control cells shifted onto the additive mean prediction."""
    ctrl = train.cells[train.mask("train") & train.mask(condition=condition.control())]
    if ctrl.shape[0] == 0:
        raise CoverageError(f"no train controls for covariate {condition.covariate!r}")
    mean = linear_additive_predict(train, condition, ctrl.mean(0))
    picks = ctrl[rng.choice(ctrl.shape[0], size=n, replace=True)]
    return picks + (mean - ctrl.mean(0))


def linear_additive_dataset(truth: PerturbDataset, conditions, n: int, seed: int = 0) -> PerturbDataset:
    rng = np.random.default_rng(seed)
    blocks, labels = [], []
    for cond in conditions:
        blocks.append(linear_additive_cells(truth, cond, n, rng))
        labels.extend([cond] * n)
    return PerturbDataset(list(truth.genes), np.vstack(blocks), labels, np.array(["test"] * len(labels), dtype=object),
                          list(truth.perturbation_vocab), list(truth.covariate_vocab), {"kind": "linear_additive"})


# ------------------------------------------------------------- reports

@dataclass
class MetricsReport:
    rows: dict[str, dict[str, float | None]] = field(default_factory=dict)   # condition key -> metric -> value
    settings: dict = field(default_factory=dict)
    flags: list[str] = field(default_factory=list)

    def metric_names(self) -> list[str]:
        return [*METRICS, *(f"{m}_rank" for m in METRICS)]

    def aggregate(self) -> dict[str, float | None]:
        out = {}
        for name in self.metric_names():
            vals = [r[name] for r in self.rows.values() if r.get(name) is not None]
            out[name] = float(np.mean(vals)) if vals else None
        return out

    def values(self, metric: str) -> list[float]:
        return [self.rows[k][metric] for k in sorted(self.rows)]

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["condition", "metric", "value"])
            for key in sorted(self.rows):
                for name in self.metric_names():
                    v = self.rows[key].get(name)
                    w.writerow([key, name, "NA" if v is None else repr(float(v))])

    @classmethod
    def read_csv(cls, path) -> "MetricsReport":
        rep = cls()
        with open(path, newline="") as fh:
            for row in csv.DictReader(fh):
                rep.rows.setdefault(row["condition"], {})[row["metric"]] = (
                    None if row["value"] == "NA" else float(row["value"]))
        return rep

    def summary(self) -> dict:
        return {"aggregate": self.aggregate(), "n_conditions": len(self.rows),
                "settings": self.settings, "flags": sorted(set(self.flags))}

    def write_json(self, path, extra: dict | None = None):
        Path(path).write_text(json.dumps({**self.summary(), **(extra or {})}, indent=2, sort_keys=True))


def evaluate(pred: PerturbDataset, truth: PerturbDataset, k: int = 50, q: int = 30,
             bandwidth: float | str = "median", split: str = "test") -> MetricsReport:
    """Score generated cells against the held-out ``split`` of ``truth``.

    Only ``pred`` cells labelled ``split`` are scored, so a full dataset can be
    passed as its own oracle prediction.
    """
    if list(pred.genes) != list(truth.genes):
        raise EvaluationError("prediction and truth have different gene lists")
    pred = pred.subset(pred.mask(split))
    if pred.n_cells == 0:
        raise EvaluationError(f"prediction has no cells labelled {split!r}")
    truth_conds = set(truth.unique_conditions(split))
    pred_conds = pred.unique_conditions()
    missing = [c.key for c in pred_conds if c not in truth_conds]
    if missing:
        raise EvaluationError(f"conditions absent from truth {split} split: {missing}")
    report = MetricsReport(settings={"k": k, "q": q, "bandwidth": bandwidth, "split": split})
    test_cells = truth.cells[truth.mask(split)]
    q_eff = min(q, test_cells.shape[0], truth.n_genes)
    if q_eff < q:
        report.flags.append(f"PCA dimension clamped from {q} to {q_eff}")
    projector = pca_fit(test_cells, q_eff)
    report.settings["q_effective"] = q_eff

    true_cells = {c: truth.cells_of(c, split) for c in pred_conds}
    pred_cells = {c: pred.cells_of(c) for c in pred_conds}
    controls = {}
    for c in pred_conds:
        ctrl = truth.controls(c.covariate)
        if ctrl.shape[0] == 0:
            raise EvaluationError(f"no control cells for covariate {c.covariate!r}")
        controls[c.covariate] = ctrl
    proj_true = {c: projector.project(x) for c, x in true_cells.items()}
    proj_pred = {c: projector.project(x) for c, x in pred_cells.items()}

    def score(name, p, t):
        ctrl = controls[p.covariate]
        if name == "mmd_gex":
            return mmd_rbf(pred_cells[p], true_cells[t], bandwidth, report.flags)
        if name == "mmd_pca":
            return mmd_rbf(proj_pred[p], proj_true[t], bandwidth, report.flags)
        if name == "deg_recall":
            return deg_recall(pred_cells[p], true_cells[t], ctrl, k, report.flags)
        if name == "cosine_logfc":
            return cosine_logfc(pred_cells[p], true_cells[t], ctrl, report.flags)
        return rmse_mean(pred_cells[p], true_cells[t])

    for cond in pred_conds:
        peers = [c for c in pred_conds if c.covariate == cond.covariate]
        own = peers.index(cond)
        row = {}
        for name in METRICS:
            vals = [score(name, cond, other) for other in peers]
            row[name] = vals[own]
            row[f"{name}_rank"] = rank_metric(vals, own, DISTANCE_LIKE[name])
        report.rows[cond.key] = row
    return report


def pca_scatter_rows(truth: PerturbDataset, generated: dict[str, PerturbDataset], split: str = "test"):
    """2-PC coordinates of truth, controls and each model's samples, per condition."""
    test_cells = truth.cells[truth.mask(split)]
    proj = pca_fit(test_cells, min(2, truth.n_genes, test_cells.shape[0]))
    rows = []
    for cond in truth.unique_conditions(split):
        for source, cells in [("truth", truth.cells_of(cond, split)), ("control", truth.controls(cond.covariate)),
                              *[(name, ds.cells_of(cond)) for name, ds in sorted(generated.items())]]:
            for z in proj.project(cells):
                rows.append((cond.key, source, *(float(v) for v in z)))
    return rows
