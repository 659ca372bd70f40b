import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import special, stats

from precsample import hashing
from precsample.psl import (ApproximatorSpec, PrecisionWeights, PslParams, ReconstructDiagnostics,
                            conditional_weight_mean_bound, expected_weight_power, inverse_cdf,
                            is_approximator, reconstruct, weight_cdf)


def closed_form_power(k, alpha):
    # E[w^alpha] = k * B(1 - alpha, k), via u = 1/w ~ Beta(1, k)
    return k * math.exp(special.betaln(1.0 - alpha, k))


def test_params_derivation():
    prm = PslParams(epsilon=0.2, rho=0.1)
    assert prm.k == 2000 and prm.t == pytest.approx(20.0)
    assert PslParams(k=10, t=20.0).k == 10
    with pytest.raises(ValueError):
        PslParams(epsilon=0.2)


def test_approximator_predicate_examples():
    assert is_approximator(3.0, 3.0, ApproximatorSpec(0.0, 1.0))
    assert not is_approximator(0.0, 1.0, ApproximatorSpec(0.5, 1.0))
    assert is_approximator(2.1, 1.0, ApproximatorSpec(0.1, 2.0))
    with pytest.raises(ValueError):
        ApproximatorSpec(0.1, 2.5)


def test_reconstruct_hand_example():
    prm = PslParams(k=10, t=20.0)
    got = reconstruct(np.array([100.0]), np.array([0.4]), prm)
    assert got == pytest.approx(20 * (0.1 + 0.9 / 99), rel=1e-12)
    assert got == pytest.approx(2.181818181818, rel=1e-10)


def test_reconstruct_zero_and_degenerate():
    prm = PslParams(k=10, t=20.0)
    assert reconstruct(np.array([5.0, 7.0]), np.zeros(2), prm) == 0.0
    diag = ReconstructDiagnostics()
    got = reconstruct(np.array([1.0, 2.0]), np.array([25.0, 0.0]), prm, diag)
    assert got == pytest.approx(20 * 0.1)
    assert diag.degenerate == 1 and diag.contributing == 1
    with pytest.raises(ValueError):
        reconstruct(np.ones(2), np.array([-1.0, 0.0]), prm)


@given(st.lists(st.floats(1.0, 1e6), min_size=1, max_size=30),
       st.lists(st.floats(0.0, 10.0), min_size=1, max_size=30),
       st.integers(0, 29), st.floats(0.0, 5.0))
def test_reconstruct_monotone_in_each_estimate(w, a, j, bump):
    n = min(len(w), len(a))
    w, a = np.array(w[:n]), np.array(a[:n])
    j %= n
    prm = PslParams(k=50, t=16.0)
    b = a.copy()
    b[j] += bump
    assert reconstruct(w, b, prm) >= reconstruct(w, a, prm) - 1e-12


@given(st.lists(st.floats(1.0, 1e6), min_size=1, max_size=30),
       st.lists(st.floats(0.0, 10.0), min_size=1, max_size=30))
def test_doubling_threshold_shrinks_contributors(w, a):
    n = min(len(w), len(a))
    w, a = np.array(w[:n]), np.array(a[:n])
    d1, d2 = ReconstructDiagnostics(), ReconstructDiagnostics()
    reconstruct(w, a, PslParams(k=50, t=10.0), d1)
    reconstruct(w, a, PslParams(k=50, t=20.0), d2)
    assert set(np.flatnonzero(d2.terms)) <= set(np.flatnonzero(d1.terms))


def test_reconstruct_partition_independent():
    rng = np.random.default_rng(3)
    w = inverse_cdf(rng.uniform(size=5000), 40)
    a = rng.exponential(size=5000)
    prm = PslParams(k=40, t=12.0)
    whole = reconstruct(w, a, prm)
    parts = sum(reconstruct(w[s], a[s], prm) for s in np.array_split(np.arange(5000), 7))
    assert parts == pytest.approx(whole, rel=1e-9)


def test_columns_mode_is_literal_max():
    pw = PrecisionWeights.from_master(11, 7, "columns")
    idx = np.arange(50)
    cols = np.array([[1.0 / hashing.uniform01(pw.seed(j), int(i)) for i in idx] for j in range(7)])
    assert np.array_equal(pw.weights(idx), cols.max(axis=0))
    assert np.array_equal(pw.columns(idx), cols)
    assert np.array_equal(pw.column_block(idx, 2, 5), cols[2:5])
    assert np.all(pw.weights(idx) >= 1.0)


def test_weights_are_pure_functions_of_seed():
    a = PrecisionWeights.from_master(5, 30).weights(np.arange(100))
    b = PrecisionWeights.from_master(5, 30).weights(np.arange(100))
    assert np.array_equal(a, b)
    assert np.all(a >= 1.0)


@pytest.mark.parametrize("k", [1, 5, 20])
@pytest.mark.parametrize("mode", ["inverse", "columns"])
def test_weight_law_ks(k, mode):
    # one index, many independent seeds: the marginal law must be W(k)
    draws = np.array([PrecisionWeights.from_master(s, k, mode).weight(3) for s in range(20000)])
    stat = stats.kstest(draws, lambda x: weight_cdf(x, k)).statistic
    assert stat < 0.015


def test_weight_law_ks_many_indices():
    # inverse mode across indices of a single seed, 10^5 draws
    w = PrecisionWeights.from_master(2024, 1, "inverse").weights(np.arange(100000))
    assert stats.kstest(w, lambda x: weight_cdf(x, 1)).statistic < 0.01


def test_inverse_cdf_roundtrip():
    u = np.linspace(1e-6, 1.0 - 1e-6, 101)
    for k in (1, 3, 1000):
        w = inverse_cdf(u, k)
        assert np.allclose(weight_cdf(w, k), 1.0 - u, rtol=1e-9, atol=1e-12)


@pytest.mark.parametrize("k,alpha,expected", [
    (1, 0.5, 2.0),
    (20, 2.0 / 3.0, 19.8488478606467),
    (20, 0.5, 7.97634613789762),
    (26815, 2.0 / 3.0, 2400.02859656106),
    (5, 0.01, 1.02317128997239),
])
def test_expected_weight_power_frozen(k, alpha, expected):
    assert expected_weight_power(k, alpha) == pytest.approx(expected, rel=1e-7)


@given(st.integers(1, 100000), st.floats(0.01, 0.95))
def test_expected_weight_power_matches_beta_closed_form(k, alpha):
    assert expected_weight_power(k, alpha) == pytest.approx(closed_form_power(k, alpha), rel=1e-6)


def test_expected_weight_power_domain():
    for bad in (0.0, 1.0, 1.5):
        with pytest.raises(ValueError):
            expected_weight_power(5, bad)
    with pytest.raises(ValueError):
        expected_weight_power(0, 0.5)
    assert expected_weight_power(50, 1e-4) == pytest.approx(1.0, abs=2e-3)


def test_power_moment_monte_carlo():
    rng = np.random.default_rng(8)
    w = inverse_cdf(rng.uniform(size=400000), 20)
    assert np.mean(w ** (2 / 3)) <= expected_weight_power(20, 2 / 3) * 1.02
    assert np.mean(w ** (2 / 3)) == pytest.approx(expected_weight_power(20, 2 / 3), rel=0.02)


def test_conditional_mean_bound_formula():
    assert conditional_weight_mean_bound(20, 10 ** 4) == pytest.approx(20 * 5 * math.log(1e4), rel=1e-12)
