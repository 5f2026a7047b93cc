from __future__ import annotations

import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from abccore.equilibrium import project_capped_simplex
from abccore.gen import make_rng
from abccore.sampler import (
    MarginalVector,
    SamplerError,
    WeightVector,
    bernoulli_decomposition,
    bernoulli_sum_pmf,
    esp_table,
    exact_subset_distribution,
    fit_max_entropy,
    inclusion_probabilities,
    projection_law,
    sample_fixed_size,
    sample_many,
    scale_and_round_marginals,
)


def brute_esp(w, r):
    return sum(math.prod(c) for c in itertools.combinations(w, r))


@pytest.mark.parametrize("w, r, value", [((1, 1, 1), 2, 3), ((1, 2, 3), 3, 6), ((2, 2), 1, 4)])
def test_esp_examples(w, r, value):
    assert esp_table(w, r).value(r) == pytest.approx(value, rel=1e-12)


def test_esp_table_matches_brute_force_and_recurrence():
    w = make_rng(3).random(9) * 5 + 0.01
    table = esp_table(w, 5)
    for j in range(10):
        assert table.value(0, j) == 1.0
        for r in range(1, 6):
            assert table.value(r, j) == pytest.approx(brute_esp(w[:j], r), rel=1e-12, abs=0)
            if j:
                rec = table.value(r, j - 1) + w[j - 1] * table.value(r - 1, j - 1)
                assert table.value(r, j) == pytest.approx(rec, rel=1e-12)
    with pytest.raises(SamplerError):
        esp_table(w, 10)


def test_esp_log_space_survives_extreme_weights():
    log_w = np.linspace(-300, 300, 4000)
    table = esp_table(np.exp(log_w), 3)
    # e_3 scales by c^3, and the rescaled weights are benign
    scaled = np.exp(log_w - 300)
    expected = 3 * 300 + math.log(esp_table(scaled, 3).value(3))
    assert table.log_value(3) == pytest.approx(expected, rel=1e-12)


def test_fit_uniform_gives_equal_weights():
    xp = MarginalVector(np.full(6, 0.5), 3)
    wv = fit_max_entropy(xp)
    np.testing.assert_allclose(wv.w / wv.w[0], 1.0)
    np.testing.assert_allclose(inclusion_probabilities(wv, 3), 0.5, atol=1e-12)


def test_fit_single_draw_is_proportional():
    wv = fit_max_entropy(MarginalVector(np.array([0.5, 0.3, 0.2]), 1))
    np.testing.assert_allclose(wv.w / wv.w.sum(), [0.5, 0.3, 0.2], atol=1e-9)


def test_fit_degenerate_is_point_mass():
    xp = MarginalVector(np.array([1.0, 0.0, 1.0, 0.0]), 2)
    wv = fit_max_entropy(xp)
    assert wv.frac == () and wv.forced_in == (0, 2)
    rng = make_rng(0)
    assert all(sample_fixed_size(wv, 2, rng) == {0, 2} for _ in range(20))
    assert exact_subset_distribution(wv, 2) == {frozenset({0, 2}): 1.0}


def test_marginal_vector_validation():
    with pytest.raises(ValueError):
        MarginalVector(np.array([0.5, 0.6]), 1)
    with pytest.raises(ValueError):
        MarginalVector(np.array([1.5, -0.5]), 1)


def test_two_coordinates_are_fair():
    draws = sample_many([1.0, 1.0], 1, make_rng(11), 100_000)
    freq = draws[:, 0].mean()
    assert abs(freq - 0.5) <= 3 * math.sqrt(0.25 / 100_000)


def test_four_weights_match_pair_products():
    w = [1.0, 2.0, 3.0, 4.0]
    exact = exact_subset_distribution(w, 2)
    assert sum(w[i] * w[j] for i, j in itertools.combinations(range(4), 2)) == 35
    for S, p in exact.items():
        i, j = sorted(S)
        assert p == pytest.approx(w[i] * w[j] / 35)
    N = 100_000
    draws = sample_many(w, 2, make_rng(12), N)
    for S, p in exact.items():
        freq = np.all(draws[:, sorted(S)], axis=1).mean()
        assert abs(freq - p) <= 3 * math.sqrt(p * (1 - p) / N)


def test_exact_distribution_examples():
    assert all(p == pytest.approx(1 / 3) for p in exact_subset_distribution([1, 1, 1], 2).values())
    assert exact_subset_distribution([2, 5, 7], 3) == {frozenset({0, 1, 2}): 1.0}
    with pytest.raises(SamplerError):
        exact_subset_distribution(np.ones(21), 2)


@pytest.mark.parametrize(
    "x, xp, kappa",
    [
        ((0.5, 0.5), (1, 1), 2),
        ((0.4, 0.3, 0.3), (0.8, 0.6, 0.6), 2),
        ((0.6, 0.2, 0.2), (1, 0.5, 0.5), 2),
    ],
)
def test_scale_and_round_examples(x, xp, kappa):
    mv = scale_and_round_marginals(np.array(x), 2.0)
    assert mv.kappa == kappa
    np.testing.assert_allclose(mv.xp, xp, atol=1e-12)


@settings(max_examples=100, deadline=None)
@given(st.integers(2, 10), st.data())
def test_scale_and_round_dominates_scaled_allocation(m, data):
    k = data.draw(st.integers(1, m))
    raw = np.array(data.draw(st.lists(st.floats(0, 1), min_size=m, max_size=m)))
    x = project_capped_simplex(raw, k)
    alpha = data.draw(st.floats(2, 4))
    mv = scale_and_round_marginals(x, alpha)
    assert mv.kappa == min(m, math.ceil(alpha * k - 1e-12))
    assert np.all(mv.xp >= np.minimum(alpha * x, 1) - 1e-12)
    assert mv.xp.sum() == pytest.approx(mv.kappa, abs=1e-9)


def random_marginals(rng, m, kappa):
    """Interior marginals with total ``kappa`` and a couple of forced coordinates."""
    while True:
        raw = rng.random(m) + 0.05
        xp = raw / raw.sum() * kappa
        if xp.max() < 1:
            return xp


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 12), st.integers(0, 2**32), st.data())
def test_sampler_cardinality_and_forcing(m, seed, data):
    kappa = data.draw(st.integers(1, m - 1))
    rng = make_rng(seed)
    xp = random_marginals(rng, m, kappa)
    wv = fit_max_entropy(MarginalVector(xp, kappa))
    assert np.abs(inclusion_probabilities(wv, kappa) - xp).max() <= 1e-9
    draws = sample_many(wv, kappa, rng, 2_000)
    assert np.all(draws.sum(axis=1) == kappa)


def test_forced_coordinates_respected():
    xp = np.array([1.0, 0.0, 0.5, 0.5, 0.3, 0.7])
    wv = fit_max_entropy(MarginalVector(xp, 3))
    draws = sample_many(wv, 3, make_rng(5), 20_000)
    assert draws[:, 0].all() and not draws[:, 1].any()
    assert np.all(draws.sum(axis=1) == 3)
    np.testing.assert_allclose(draws.mean(axis=0), xp, atol=0.02)


def test_negative_correlation_small_exhaustive():
    rng = make_rng(21)
    for m in range(2, 9):
        for kappa in range(1, m):
            wv = WeightVector.plain(rng.random(m) * 3 + 0.1)
            dist = exact_subset_distribution(wv, kappa)
            P = np.zeros((m, m))
            for S, p in dist.items():
                idx = sorted(S)
                P[np.ix_(idx, idx)] += p
            marg = np.diag(P)
            np.testing.assert_allclose(marg, inclusion_probabilities(wv, kappa), atol=1e-12)
            off = P - np.outer(marg, marg)
            np.fill_diagonal(off, 0.0)
            assert off.max() <= 1e-12


def test_projection_is_bernoulli_sum():
    rng = make_rng(4)
    for m in range(2, 11):
        kappa = int(rng.integers(1, m))
        wv = WeightVector.plain(rng.random(m) * 4 + 0.05)
        dist = exact_subset_distribution(wv, kappa)
        for F in (set(range(m // 2 + 1)), set(range(1, m, 2))):
            law = projection_law(wv, kappa, F)
            brute = np.zeros(len(F) + 1)
            for S, p in dist.items():
                brute[len(S & F)] += p
            np.testing.assert_allclose(law, brute, atol=1e-12)
            means = bernoulli_decomposition(law, tol=1e-8)
            assert means is not None
            pmf = bernoulli_sum_pmf(means)
            pmf = np.pad(pmf, (0, law.size - pmf.size))
            np.testing.assert_allclose(pmf, law, atol=1e-8)


def test_decomposition_rejects_non_real_rooted_law():
    # 1 + z^2 has roots +-i
    assert bernoulli_decomposition([0.5, 0.0, 0.5]) is None
    np.testing.assert_allclose(bernoulli_decomposition([0.25, 0.5, 0.25]), [0.5, 0.5])


def test_sequential_sampler_matches_exact_law():
    rng = make_rng(99)
    wv = WeightVector.plain(rng.random(6) * 2 + 0.2)
    exact = exact_subset_distribution(wv, 3)
    draws = sample_many(wv, 3, rng, 200_000)
    codes = draws @ (1 << np.arange(6))
    counts = np.bincount(codes, minlength=64) / len(codes)
    tv = 0.5 * sum(abs(counts[sum(1 << i for i in S)] - p) for S, p in exact.items())
    assert tv <= 5e-3
