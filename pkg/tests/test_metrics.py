import math
from itertools import permutations

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pertflow.data import Condition, PerturbDataset, SynthSpec, split_covariate_transfer, synth_generate, synth_parameters
from pertflow.errors import CoverageError, DataError, DimensionError, EvaluationError
from pertflow.metrics import (MetricsReport, cosine, cosine_logfc, deg_recall, evaluate, linear_additive_cells,
                              linear_additive_predict, median_bandwidth, mmd_pca, mmd_rbf, pca_scatter_rows,
                              rank_metric, rmse_mean, top_k_genes)
from pertflow.models import pca_fit


def mmd_double_loop(X, Y, h):
    def k(a, b):
        return math.exp(-sum((ai - bi) ** 2 for ai, bi in zip(a, b)) / (2 * h * h))
    kxx = sum(k(a, b) for a in X for b in X) / len(X) ** 2
    kyy = sum(k(a, b) for a in Y for b in Y) / len(Y) ** 2
    kxy = sum(k(a, b) for a in X for b in Y) / (len(X) * len(Y))
    return kxx + kyy - 2 * kxy


# -------------------------------------------------------------------- MMD

def test_mmd_worked_scalar():
    assert abs(mmd_rbf([[0.0]], [[1.0]], 1.0) - (2 - 2 * math.exp(-0.5))) < 1e-12


def test_mmd_self_zero():
    X = np.random.default_rng(0).normal(size=(6, 3))
    assert mmd_rbf(X, X) == 0.0


@pytest.mark.parametrize("seed", range(5))
def test_mmd_matches_double_loop(seed):
    rng = np.random.default_rng(seed)
    X, Y = rng.normal(size=(5, 3)), rng.normal(1.0, 1.0, size=(5, 3))
    h = median_bandwidth(X, Y)
    assert abs(mmd_rbf(X, Y) - mmd_double_loop(X.tolist(), Y.tolist(), h)) < 1e-12
    assert abs(mmd_rbf(X, Y, 0.7) - mmd_double_loop(X.tolist(), Y.tolist(), 0.7)) < 1e-12


def test_median_bandwidth_oracle():
    Z = np.array([[0.0], [1.0], [3.0]])
    # pairwise distances 1, 3, 2 -> median 2
    assert median_bandwidth(Z[:2], Z[2:]) == 2.0


def test_mmd_degenerate_bandwidth_fallback_flagged():
    flags = []
    X = np.ones((3, 2))
    assert mmd_rbf(X, X, flags=flags) == 0.0
    assert flags and "fell back" in flags[0]


def test_mmd_errors():
    with pytest.raises(DimensionError):
        mmd_rbf(np.zeros((2, 2)), np.zeros((2, 3)))
    with pytest.raises(DimensionError):
        mmd_rbf(np.zeros((0, 2)), np.zeros((2, 2)))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_mmd_symmetric_nonnegative(seed):
    rng = np.random.default_rng(seed)
    X, Y = rng.normal(size=(4, 3)), rng.normal(size=(6, 3))
    a, b = mmd_rbf(X, Y), mmd_rbf(Y, X)
    assert abs(a - b) < 1e-12 and a >= 0


def test_mmd_pca_cases():
    rng = np.random.default_rng(1)
    cells = rng.normal(size=(40, 5))
    proj = pca_fit(cells, 5)
    X = cells[:10]
    assert mmd_pca(X, X, proj) == 0.0
    # complete orthonormal basis preserves distances: equal to GEX MMD at fixed bandwidth
    Y = cells[10:20]
    assert abs(mmd_pca(X, Y, proj, 1.3) - mmd_rbf(X, Y, 1.3)) < 1e-12
    # two clusters separated along the first axis stay separated with q=1
    sep = np.vstack([rng.normal(size=(20, 3)) * 0.1, rng.normal(size=(20, 3)) * 0.1 + [5, 0, 0]])
    p1 = pca_fit(sep, 1)
    assert mmd_pca(sep[:20], sep[20:], p1) > 0
    with pytest.raises(DimensionError):
        mmd_pca(np.zeros((2, 4)), np.zeros((2, 4)), proj)


# ----------------------------------------------------------- DEG / cosine

def test_deg_recall_identity_and_disjoint():
    rng = np.random.default_rng(2)
    ctrl = rng.normal(0, 0.01, (20, 8))
    true = ctrl + np.array([3, 3, 3, 0, 0, 0, 0, 0.0])
    pred = ctrl + np.array([0, 0, 0, 0, 0, 2, 2, 2.0])
    assert deg_recall(true, true, ctrl, 3) == 1.0
    assert deg_recall(pred, true, ctrl, 3) == 0.0


def test_deg_recall_brute_force_oracle():
    rng = np.random.default_rng(3)
    for _ in range(20):
        pred, true, ctrl = rng.normal(size=(5, 8)), rng.normal(size=(6, 8)), rng.normal(size=(4, 8))
        c = ctrl.mean(0)
        lt, lp = true.mean(0) - c, pred.mean(0) - c
        top_t = sorted(range(8), key=lambda j: -abs(lt[j]))[:3]
        top_p = sorted(range(8), key=lambda j: -abs(lp[j]))[:3]
        assert deg_recall(pred, true, ctrl, 3) == len(set(top_t) & set(top_p)) / 3


def test_deg_recall_clamps_k():
    flags = []
    x = np.random.default_rng(4).normal(size=(3, 4))
    assert deg_recall(x, x, x + 1, 50, flags) == 1.0
    assert flags and "clamped" in flags[0]
    with pytest.raises(DataError):
        deg_recall(x[:0], x, x)


def test_deg_set_unique_and_sized():
    idx = top_k_genes(np.array([0.1, -5, 3, 3, 0]), 3)
    assert len(set(idx.tolist())) == 3 and idx[0] == 1


def test_deg_recall_gene_permutation_invariant():
    rng = np.random.default_rng(5)
    pred, true, ctrl = rng.normal(size=(5, 10)), rng.normal(size=(5, 10)), rng.normal(size=(5, 10))
    perm = rng.permutation(10)
    assert deg_recall(pred, true, ctrl, 4) == deg_recall(pred[:, perm], true[:, perm], ctrl[:, perm], 4)


def test_cosine_cases():
    ctrl = np.zeros((1, 2))
    assert cosine_logfc(np.array([[1.0, 2.0]]), np.array([[1.0, 2.0]]), ctrl) == pytest.approx(1.0, abs=1e-15)
    assert cosine_logfc(np.array([[-1.0, -2.0]]), np.array([[1.0, 2.0]]), ctrl) == pytest.approx(-1.0, abs=1e-15)
    assert abs(cosine(np.array([1.0, 0.0]), np.array([1.0, 1.0])) - 1 / math.sqrt(2)) < 1e-15
    flags = []
    assert cosine(np.zeros(2), np.ones(2), flags) == 0.0 and flags


@given(st.floats(1e-3, 1e3))
def test_cosine_scale_invariant(s):
    a, b = np.array([0.3, -1.2, 2.0]), np.array([1.0, 0.5, -0.4])
    assert abs(cosine(s * a, b) - cosine(a, b)) < 1e-12


def test_rmse_cases():
    assert rmse_mean(np.ones((3, 2)), np.ones((5, 2))) == 0.0
    assert abs(rmse_mean(np.zeros((1, 2)), np.array([[3.0, 4.0]])) - math.sqrt(12.5)) < 1e-15
    rng = np.random.default_rng(6)
    a, b = rng.normal(size=(7, 5)), rng.normal(size=(4, 5))
    acc = 0.0
    for j in range(5):
        acc += (sum(a[:, j]) / 7 - sum(b[:, j]) / 4) ** 2
    assert abs(rmse_mean(a, b) - math.sqrt(acc / 5)) < 1e-12
    with pytest.raises(DataError):
        rmse_mean(np.zeros((0, 2)), np.zeros((1, 2)))


# ------------------------------------------------------------------ ranks

def test_rank_basic_cases():
    assert rank_metric([0.0, 1.0, 2.0], 0) == 0.0
    assert rank_metric([1.0, 0.5, 2.0], 0) == 0.5
    assert rank_metric([1.0, 1.0, 2.0], 0) == 0.25
    assert rank_metric([0.2, 0.9, 0.1], 0, distance_like=False) == 0.5
    assert rank_metric([0.3], 0) is None


def test_rank_three_condition_enumeration():
    # hand ranking: count others strictly better, ties half, over N-1 = 2
    for vals in permutations([0.1, 0.2, 0.3]):
        for i in range(3):
            better = sum(v < vals[i] for j, v in enumerate(vals) if j != i)
            assert rank_metric(vals, i) == better / 2
            worse = sum(v > vals[i] for j, v in enumerate(vals) if j != i)
            assert rank_metric(vals, i, distance_like=False) == worse / 2


# -------------------------------------------------------- linear additive

def one_cov_ds():
    spec = SynthSpec(n_genes=5, covariates=["k"], perturbations=["a", "b"], cells_per_condition=30)
    return synth_generate(spec, 0)


def test_linear_additive_control_and_single():
    ds = one_cov_ds()
    ctrl = ds.cells_of(Condition("k")).mean(0)
    np.testing.assert_array_equal(linear_additive_predict(ds, Condition("k")), ctrl)
    np.testing.assert_allclose(linear_additive_predict(ds, Condition("k", ("a",))),
                               ds.cells_of(Condition("k", ("a",))).mean(0), atol=1e-12)


def test_linear_additive_dual_within_three_se():
    spec = SynthSpec(n_genes=12, covariates=["k"], perturbations=["a", "b"], combos=[["a", "b"]],
                     interaction_sd=0.0, cells_per_condition=400, mode_scales=(1.0, 1.0), noise_sd=0.3,
                     baseline_range=(6.0, 8.0), effect_range=(0.5, 1.0))
    ds = synth_generate(spec, 1)
    dual = Condition("k", ("a", "b"))
    train = ds.with_split(np.where([c == dual for c in ds.conditions], "test", "train"))
    pred = linear_additive_predict(train, dual)
    truth = ds.cells_of(dual)
    # prediction combines three independent means, truth one more
    se = spec.noise_sd * math.sqrt(4 / spec.cells_per_condition)
    assert np.all(np.abs(pred - truth.mean(0)) < 3 * se)


def test_linear_additive_coverage_error():
    ds = one_cov_ds()
    with pytest.raises(CoverageError):
        linear_additive_predict(ds, Condition("k", ("zz",)))


def test_linear_additive_cells_shift_controls():
    ds = one_cov_ds()
    cells = linear_additive_cells(ds, Condition("k", ("a",)), 200, np.random.default_rng(0))
    assert cells.shape == (200, 5)
    ctrl = ds.cells_of(Condition("k"))
    shift = linear_additive_predict(ds, Condition("k", ("a",))) - ctrl.mean(0)
    # every row is some control row plus the predicted shift
    diffs = cells[:, None, :] - shift - ctrl[None]
    assert np.all(np.min(np.max(np.abs(diffs), axis=2), axis=1) < 1e-12)


# --------------------------------------------------------------- evaluate

def benchmark(seed=0, n=60):
    return split_covariate_transfer(synth_generate(SynthSpec(cells_per_condition=n), seed), 0.5, seed)


def test_oracle_predictor_report():
    ds = benchmark()
    pred = ds.subset(ds.mask("test"))
    rep = evaluate(pred, ds, k=10, q=10)
    for row in rep.rows.values():
        assert row["mmd_gex"] == 0.0 and row["mmd_pca"] == 0.0
        assert row["deg_recall"] == 1.0 and row["rmse_mean"] == 0.0
        assert row["cosine_logfc"] == pytest.approx(1.0, abs=1e-12)
        for m in ("mmd_gex", "mmd_pca", "rmse_mean", "deg_recall", "cosine_logfc"):
            assert row[f"{m}_rank"] == 0.0
    assert rep.aggregate()["mmd_gex_rank"] == 0.0


def test_shuffled_predictor_worse_than_oracle():
    ds = benchmark()
    pred = ds.subset(ds.mask("test"))
    rng = np.random.default_rng(0)
    shuffled = PerturbDataset(pred.genes, pred.cells, [pred.conditions[i] for i in rng.permutation(pred.n_cells)],
                              pred.split, pred.perturbation_vocab, pred.covariate_vocab)
    assert evaluate(shuffled, ds, k=10).aggregate()["mmd_gex"] > evaluate(pred, ds, k=10).aggregate()["mmd_gex"]


def test_report_invariants_and_csv_round_trip(tmp_path):
    ds = benchmark()
    rng = np.random.default_rng(1)
    pred = ds.subset(ds.mask("test"))
    pred = PerturbDataset(pred.genes, pred.cells + rng.normal(0, 0.3, pred.cells.shape).clip(-pred.cells, None),
                          pred.conditions, pred.split, pred.perturbation_vocab, pred.covariate_vocab)
    rep = evaluate(pred, ds, k=10)
    for row in rep.rows.values():
        assert 0 <= row["deg_recall"] <= 1 and row["rmse_mean"] >= 0 and row["mmd_gex"] >= 0
        for name, v in row.items():
            if name.endswith("_rank"):
                assert 0 <= v <= 1
    rep.write_csv(tmp_path / "m.csv")
    back = MetricsReport.read_csv(tmp_path / "m.csv")
    assert back.rows == rep.rows
    rep.write_json(tmp_path / "s.json")
    again = evaluate(pred, ds, k=10)
    again.write_csv(tmp_path / "m2.csv")
    assert (tmp_path / "m.csv").read_bytes() == (tmp_path / "m2.csv").read_bytes()


def test_evaluate_missing_condition():
    ds = benchmark()
    train_part = ds.subset(ds.mask("train"))
    with pytest.raises(EvaluationError, match="no cells labelled"):
        evaluate(train_part, ds)
    relabelled = train_part.with_split(["test"] * train_part.n_cells)
    with pytest.raises(EvaluationError, match="cov"):
        evaluate(relabelled, ds)


def test_evaluate_full_truth_is_its_own_oracle():
    ds = benchmark()
    report = evaluate(ds, ds)
    assert set(report.rows) == {c.key for c in ds.unique_conditions("test")}
    assert all(v == 0 for v in report.values("rmse_mean"))


def test_evaluate_gene_mismatch():
    ds = benchmark()
    pred = ds.subset(ds.mask("test"))
    pred.genes = list(reversed(pred.genes))
    with pytest.raises(EvaluationError):
        evaluate(pred, ds)


def test_pca_scatter_rows():
    ds = benchmark()
    pred = ds.subset(ds.mask("test"))
    rows = pca_scatter_rows(ds, {"model": pred})
    sources = {r[1] for r in rows}
    assert sources == {"truth", "control", "model"}
    assert all(len(r) == 4 for r in rows)
