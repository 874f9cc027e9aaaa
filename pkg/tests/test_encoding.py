import math
from itertools import combinations

import numpy as np
import pytest
from hypothesis import given, strategies as st

from pertflow import numcore as nc
from pertflow.data import Condition
from pertflow.encoding import (ConditionEncoder, GeneEmbeddingTable, SinusoidalEncoder, dropout_condition,
                               dropout_conditions, encode_condition, encode_scalar, encode_state)
from pertflow.errors import ConfigurationError, DimensionError, VocabularyError


def test_encode_zero():
    out = encode_scalar(0.0, SinusoidalEncoder(8))
    np.testing.assert_array_equal(out, [0, 0, 0, 0, 1, 1, 1, 1])


def test_encode_parity():
    enc = SinusoidalEncoder(6)
    a, b = encode_scalar(1.7, enc), encode_scalar(-1.7, enc)
    np.testing.assert_array_equal(a[:3], -b[:3])
    np.testing.assert_array_equal(a[3:], b[3:])


def test_encode_scalar_oracle():
    out = encode_scalar(1.0, SinusoidalEncoder(4, 10000))
    want = [math.sin(1), math.sin(0.01), math.cos(1), math.cos(0.01)]
    np.testing.assert_allclose(out, want, rtol=0, atol=1e-15)


def test_odd_dim_rejected():
    with pytest.raises(ConfigurationError):
        SinusoidalEncoder(5)


@given(st.floats(-1e6, 1e6, allow_nan=False))
def test_encode_finite_over_range(v):
    assert np.all(np.isfinite(encode_scalar(v, SinusoidalEncoder(16))))


def test_sinusoidal_tensor_gradient():
    enc = SinusoidalEncoder(6)
    x = nc.Tensor(np.random.default_rng(0).normal(size=(3, 4)), requires_grad=True)
    w = np.random.default_rng(1).normal(size=(3, 4, 6))
    err = nc.grad_check(lambda: nc.sum_(nc.mul(enc.tensor(x), w)), nc.ParameterSet({"x": x}), eps=1e-5)
    assert err < 1e-7


def test_encode_state_cases():
    enc = SinusoidalEncoder(4)
    zeros = np.zeros((3, 4))
    x = np.array([0.5, -1.0, 2.0])
    np.testing.assert_array_equal(encode_state(x, enc, zeros).data, enc(x))
    np.testing.assert_array_equal(encode_state(np.zeros(3), enc, zeros).data, np.tile([0, 0, 1, 1], (3, 1)))


def test_encode_state_random_oracle():
    rng = np.random.default_rng(2)
    enc = SinusoidalEncoder(6, 100.0)
    x, emb = rng.normal(size=5), rng.normal(size=(5, 6))
    out = encode_state(x, enc, emb).data
    for j in range(5):
        row = encode_scalar(x[j], enc) + emb[j]
        assert np.max(np.abs(out[j] - row)) < 1e-12


def test_encode_state_mismatch():
    with pytest.raises(DimensionError):
        encode_state(np.zeros(4), SinusoidalEncoder(4), np.zeros((3, 4)))


def test_gene_embedding_registered():
    ps = nc.ParameterSet()
    table = GeneEmbeddingTable(["a", "b", "c"], 4, ps, np.random.default_rng(0))
    assert "gene_embedding" in ps.names()
    assert table.weight.data.shape == (3, 4)
    assert table.genes == ["a", "b", "c"]


def vocab():
    return ConditionEncoder(["p0", "p1", "p2"], ["c0", "c1"])


def test_condition_encoding_examples():
    enc = vocab()
    np.testing.assert_array_equal(encode_condition(Condition("c0"), enc), [0, 0, 0, 1, 0, 0])
    np.testing.assert_array_equal(encode_condition(Condition("c1", ("p0", "p2")), enc), [1, 0, 1, 0, 1, 0])
    np.testing.assert_array_equal(encode_condition(None, enc), [0, 0, 0, 0, 0, 1])
    np.testing.assert_array_equal(enc.null(2), [[0, 0, 0, 0, 0, 1]] * 2)
    assert enc.dim == 6


def test_condition_encoding_unknown():
    with pytest.raises(VocabularyError):
        encode_condition(Condition("c0", ("zz",)), vocab())
    with pytest.raises(VocabularyError):
        encode_condition(Condition("c9"), vocab())


def test_condition_encoding_injective():
    enc = vocab()
    seen = set()
    for cov in enc.covariates:
        for r in range(4):
            for perts in combinations(enc.perturbations, r):
                seen.add(tuple(encode_condition(Condition(cov, perts), enc)))
    seen.add(tuple(encode_condition(None, enc)))
    assert len(seen) == 2 * 8 + 1


def test_dropout_boundaries():
    c = Condition("c0", ("p1",))
    rng = np.random.default_rng(0)
    assert all(dropout_condition(c, 0.0, rng) is c for _ in range(200))
    assert all(dropout_condition(c, 1.0, rng) is None for _ in range(200))
    with pytest.raises(ConfigurationError):
        dropout_condition(c, 1.5, rng)
    with pytest.raises(ConfigurationError):
        dropout_conditions([c], -0.1, rng)


def test_dropout_rate_binomial_bound():
    c = Condition("c0", ("p1",))
    out = dropout_conditions([c] * 100_000, 0.2, np.random.default_rng(42))
    frac = sum(o is None for o in out) / len(out)
    assert abs(frac - 0.2) < 0.004
    assert c == Condition("c0", ("p1",))


def test_dropout_deterministic():
    c = Condition("c0")
    a = dropout_conditions([c] * 50, 0.5, np.random.default_rng(3))
    b = [dropout_condition(c, 0.5, r) for r in [np.random.default_rng(3)] for _ in range(50)]
    assert a == b
