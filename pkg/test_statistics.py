"""
Tests for R², the session bootstrap and the Wilcoxon signed-rank test
"""

import numpy as np
import pytest
from scipy import stats

from tcla.core.statistics import bootstrap_ci, r_squared, wilcoxon_signed_rank
from tcla.exceptions import DegenerateTargetError, InsufficientSamplesError, ShapeError
from tcla.utils.seeding import STREAM_BOOTSTRAP, rng_stream


# ============================================================================
# R²
# ============================================================================

def test_r_squared_hand_example():
    assert r_squared([0, 1, 2, 4], [0, 1, 2, 3]) == pytest.approx(0.8)


def test_r_squared_perfect_and_mean_predictions():
    truth = np.array([1.0, 3.0, 2.0, 5.0])
    assert r_squared(truth, truth) == 1.0
    assert r_squared(np.full(4, truth.mean()), truth) == pytest.approx(0.0)


def test_r_squared_invariant_to_shift_and_scale():
    rng = np.random.default_rng(4)
    truth = rng.normal(size=50)
    pred = truth + rng.normal(scale=0.3, size=50)
    base = r_squared(pred, truth)
    assert r_squared(pred + 7.5, truth + 7.5) == pytest.approx(base, abs=1e-12)
    assert r_squared(pred * -3.0, truth * -3.0) == pytest.approx(base, abs=1e-12)


def test_r_squared_errors():
    with pytest.raises(DegenerateTargetError):
        r_squared([1.0, 2.0], [3.0, 3.0])
    with pytest.raises(InsufficientSamplesError):
        r_squared([1.0], [1.0])
    with pytest.raises(ShapeError):
        r_squared([1.0, 2.0], [1.0, 2.0, 3.0])


# ============================================================================
# BOOTSTRAP
# ============================================================================

def test_bootstrap_single_value_collapses():
    mean, low, high = bootstrap_ci([0.42], resamples=200, seed=3)
    assert low == high == 0.42
    assert mean == pytest.approx(0.42, abs=1e-12)


def test_bootstrap_binary_values_stay_in_support():
    mean, low, high = bootstrap_ci([0.0, 1.0], resamples=500, seed=1)
    assert 0.0 <= low <= mean <= high <= 1.0
    assert low in (0.0, 0.5, 1.0) and high in (0.0, 0.5, 1.0)


def test_bootstrap_mean_tracks_sample_mean():
    values = np.random.default_rng(8).uniform(0.2, 0.9, size=10)
    mean, low, high = bootstrap_ci(values, resamples=10000, seed=0)
    assert abs(mean - values.mean()) < 0.01
    assert values.min() <= low <= mean <= high <= values.max()


def test_bootstrap_returns_the_raw_percentiles():
    values = np.array([0.05, 0.3, 0.31, 0.33, 0.9])
    mean, low, high = bootstrap_ci(values, resamples=400, alpha=0.1, seed=7)
    means = np.array([values[rng_stream(7, STREAM_BOOTSTRAP, b).integers(0, 5, 5)].mean() for b in range(400)])
    expected_low, expected_high = np.quantile(means, [0.05, 0.95], method="inverted_cdf")
    assert low == expected_low
    assert high == expected_high
    assert mean == pytest.approx(means.mean(), abs=1e-12)


def test_bootstrap_is_deterministic_in_seed():
    values = [0.1, 0.5, 0.7, 0.2]
    assert bootstrap_ci(values, resamples=300, seed=5) == bootstrap_ci(values, resamples=300, seed=5)


def test_bootstrap_rejects_empty_input():
    with pytest.raises(InsufficientSamplesError):
        bootstrap_ci([])


# ============================================================================
# WILCOXON
# ============================================================================

def test_wilcoxon_all_positive_five_pairs():
    assert wilcoxon_signed_rank([2, 3, 4, 5, 6], [1, 1, 1, 1, 1]) == pytest.approx(0.0625)


def test_wilcoxon_is_symmetric_and_in_unit_interval():
    rng = np.random.default_rng(2)
    for _ in range(10):
        a = rng.normal(size=12)
        b = rng.normal(size=12)
        p = wilcoxon_signed_rank(a, b)
        assert 0.0 < p <= 1.0
        assert p == pytest.approx(wilcoxon_signed_rank(b, a))


def test_wilcoxon_exact_matches_reference_without_ties():
    rng = np.random.default_rng(6)
    for n in (6, 11, 20):
        a = rng.normal(size=n)
        b = a + rng.normal(loc=0.3, size=n)
        expected = stats.wilcoxon(a, b, method="exact").pvalue
        assert wilcoxon_signed_rank(a, b) == pytest.approx(expected, abs=1e-12)


def test_wilcoxon_normal_branch_agrees_with_exact_near_the_switch():
    rng = np.random.default_rng(9)
    diffs = rng.normal(loc=0.2, size=21)
    exact_20 = wilcoxon_signed_rank(diffs[:20], np.zeros(20))
    normal_21 = wilcoxon_signed_rank(diffs, np.zeros(21))
    expected_21 = stats.wilcoxon(diffs, method="approx", correction=True).pvalue
    assert normal_21 == pytest.approx(expected_21, abs=1e-12)
    assert abs(exact_20 - stats.wilcoxon(diffs[:20], method="approx", correction=True).pvalue) < 0.02


def test_wilcoxon_drops_zero_differences():
    a = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0]
    b = [1.0, 2.0, 2.0, 3.0, 4.0, 5.0, 6.0]
    # two zeros dropped, five tied positive differences remain
    assert wilcoxon_signed_rank(a, b) == pytest.approx(0.0625)


def test_wilcoxon_needs_five_nonzero_differences():
    with pytest.raises(InsufficientSamplesError):
        wilcoxon_signed_rank([1, 2, 3, 4, 5], [1, 1, 1, 1, 1])
