"""
Tests for the reconstruction, regularizer, MMD and dropout objectives
"""

import math

import numpy as np
import pytest
import torch

from tcla.core.objectives import (
    ALL_BINS,
    EVAL_PHASE,
    POOLED_CONDITION,
    batch_masks,
    conditional_mmd,
    conditional_mmd_terms,
    coordinated_dropout_mask,
    gaussian_multikernel,
    group_by_condition,
    latent_reg,
    mmd_bandwidths,
    poisson_nll,
)
from tcla.exceptions import ConfigError, InsufficientSamplesError, NonPositiveRateError, ShapeError
from tcla.schemas import DropoutConfig, MMDConfig, RegConfig


def _oracle_mmd(source, target, num_bandwidths, scale):
    """Direct double loop over explicit sample lists"""
    pooled = source + target
    n = len(pooled)
    total = sum(float(np.sum((pooled[i] - pooled[j]) ** 2)) for i in range(n) for j in range(n) if i != j)
    mean_distance = total / (n * (n - 1))
    sigmas = [scale ** (j - num_bandwidths // 2) * mean_distance for j in range(num_bandwidths)]

    def k(a, b):
        acc = 0.0
        for sigma in sigmas:
            for x in a:
                for y in b:
                    acc += math.exp(-float(np.sum((x - y) ** 2)) / sigma)
        return acc / (len(a) * len(b))

    return k(source, source) + k(target, target) - 2.0 * k(source, target)


def _samples(latents, granularity):
    arr = latents.numpy()
    if granularity == "per_time_bin":
        return [arr[i, :, t] for i in range(arr.shape[0]) for t in range(arr.shape[2])]
    return [arr[i].reshape(-1) for i in range(arr.shape[0])]


# ============================================================================
# POISSON NLL
# ============================================================================

def test_poisson_nll_value():
    rates = torch.tensor([[2.0, 0.5]], dtype=torch.float64)
    spikes = torch.tensor([[3, 0]])
    expected = (2.0 - 3.0 * math.log(2.0)) + 0.5
    assert poisson_nll(rates, spikes).item() == pytest.approx(expected)


def test_poisson_nll_mask_scores_only_selected_bins():
    rates = torch.tensor([[[2.0, 0.5]], [[1.0, 4.0]]], dtype=torch.float64)
    spikes = torch.tensor([[[3, 0]], [[1, 2]]])
    mask = torch.tensor([[True, False], [False, True]])
    values = poisson_nll(rates, spikes, mask)
    assert values.shape == (2,)
    assert values[0].item() == pytest.approx(2.0 - 3.0 * math.log(2.0))
    assert values[1].item() == pytest.approx(4.0 - 2.0 * math.log(4.0))


def test_poisson_nll_rejects_nonpositive_rates_and_shape_mismatch():
    with pytest.raises(NonPositiveRateError):
        poisson_nll(torch.tensor([[1.0, 0.0]]), torch.tensor([[1, 1]]))
    with pytest.raises(ShapeError):
        poisson_nll(torch.ones(2, 3), torch.ones(3, 2))


def test_poisson_nll_gradcheck():
    for seed in range(20):
        gen = torch.Generator().manual_seed(seed)
        rates = (torch.rand(3, 5, generator=gen, dtype=torch.float64) + 0.1).requires_grad_()
        spikes = torch.poisson(torch.full((3, 5), 2.0, dtype=torch.float64), generator=gen)
        assert torch.autograd.gradcheck(lambda r: poisson_nll(r, spikes), (rates,))


def test_poisson_nll_is_minimized_at_the_observed_count():
    for count in range(1, 11):
        x = torch.tensor([[float(count)]], dtype=torch.float64)
        at_count = poisson_nll(x, x).item()
        assert at_count < poisson_nll(x * 1.1, x).item()
        assert at_count < poisson_nll(x * 0.9, x).item()


# ============================================================================
# LATENT REGULARIZER
# ============================================================================

def test_latent_reg_value():
    z = torch.tensor([[1.0, 2.0, 4.0]], dtype=torch.float64)
    cfg = RegConfig(beta1=1e-3, beta2=0.1, smooth_window=2)
    # L2 = 21; lag 1: (1 + 4) / 2; lag 2: 9 / 3
    assert latent_reg(z, cfg).item() == pytest.approx(1e-3 * 21 + 0.1 * (2.5 + 3.0))


def test_latent_reg_smoothness_double_sum():
    z = torch.tensor([[0.0, 1.0, 2.0]], dtype=torch.float64)
    cfg = RegConfig(beta1=0.0, beta2=1.0, smooth_window=2)
    # lag 1: (1 + 1) / 2; lag 2: 4 / 3
    assert latent_reg(z, cfg).item() == pytest.approx(7.0 / 3.0)


def test_latent_reg_constant_trajectory_has_no_smoothness_cost():
    z = torch.full((3, 6), 1.5, dtype=torch.float64)
    assert latent_reg(z, RegConfig(beta1=0.0, beta2=4.0, smooth_window=3)).item() == 0.0


@pytest.mark.parametrize("factor", [0.5, 3.0, 10.0])
def test_latent_reg_scales_linearly_with_weights(factor):
    z = torch.randn(2, 3, 9, generator=torch.Generator().manual_seed(4), dtype=torch.float64)
    base = latent_reg(z, RegConfig(beta1=1e-3, beta2=0.2, smooth_window=3))
    scaled = latent_reg(z, RegConfig(beta1=1e-3 * factor, beta2=0.2 * factor, smooth_window=3))
    torch.testing.assert_close(scaled, base * factor, rtol=1e-12, atol=0.0)


def test_latent_reg_zero_weights_vanish():
    z = torch.randn(2, 3, 10)
    cfg = RegConfig(beta1=0.0, beta2=0.0, smooth_window=2)
    assert torch.all(latent_reg(z, cfg) == 0)


def test_latent_reg_window_must_be_shorter_than_trial():
    with pytest.raises(ConfigError):
        latent_reg(torch.zeros(2, 3), RegConfig(smooth_window=3))


def test_latent_reg_gradcheck():
    cfg = RegConfig(beta1=1e-3, beta2=0.2, smooth_window=3)
    for seed in range(20):
        gen = torch.Generator().manual_seed(seed)
        z = torch.randn(2, 3, 8, generator=gen, dtype=torch.float64, requires_grad=True)
        assert torch.autograd.gradcheck(lambda x: latent_reg(x, cfg), (z,))


# ============================================================================
# MMD
# ============================================================================

def test_bandwidths_follow_mean_pair_distance():
    samples = torch.tensor([[0.0], [1.0], [3.0]], dtype=torch.float64)
    # ordered pairs: 1, 9, 4 twice each
    sigmas = mmd_bandwidths(samples, num_bandwidths=3, scale=2.0, sigma_floor=1e-8)
    np.testing.assert_allclose(sigmas.numpy(), [7.0 / 3.0, 14.0 / 3.0, 28.0 / 3.0])


def test_bandwidths_floor_on_identical_samples():
    sigmas = mmd_bandwidths(torch.ones(4, 2, dtype=torch.float64), 5, 2.0, 1e-6)
    assert torch.all(sigmas == 1e-6)


def test_bandwidths_need_two_samples():
    with pytest.raises(InsufficientSamplesError):
        mmd_bandwidths(torch.ones(1, 2), 3, 2.0, 1e-8)


def test_multikernel_rejects_empty_sets():
    with pytest.raises(InsufficientSamplesError):
        gaussian_multikernel(torch.zeros(0, 2), torch.zeros(3, 2), torch.ones(2))


@pytest.mark.parametrize("num_bandwidths,expected", [(1, [4.0]), (3, [2.0, 4.0, 8.0])])
def test_bandwidths_for_two_points(num_bandwidths, expected):
    samples = torch.tensor([[0.0, 0.0], [2.0, 0.0]], dtype=torch.float64)
    sigmas = mmd_bandwidths(samples, num_bandwidths, scale=2.0, sigma_floor=1e-8)
    np.testing.assert_allclose(sigmas.numpy(), expected)


@pytest.mark.parametrize("scale", [1.5, 2.0, 3.0])
def test_bandwidth_ladder_is_geometric(scale):
    samples = torch.randn(12, 3, generator=torch.Generator().manual_seed(2), dtype=torch.float64)
    sigmas = mmd_bandwidths(samples, 5, scale, 1e-8).numpy()
    np.testing.assert_allclose(sigmas[1:] / sigmas[:-1], scale, rtol=1e-12)


def test_bandwidths_are_stable_far_from_the_origin():
    gen = torch.Generator().manual_seed(0)
    spread = 0.01 * torch.randn(1024, 8, generator=gen, dtype=torch.float64)
    for offset in (20.0, 100.0):
        samples = (spread + offset).float()
        single = mmd_bandwidths(samples, 1, 2.0, 1e-8).item()
        double = mmd_bandwidths(samples.double(), 1, 2.0, 1e-8).item()
        assert single == pytest.approx(double, rel=1e-3)
        assert double == pytest.approx(16.0 * 1e-4, rel=0.1)


def test_mmd_is_stable_far_from_the_origin():
    gen = torch.Generator().manual_seed(1)
    source = {1: (100.0 + 0.01 * torch.randn(64, 8, 16, generator=gen, dtype=torch.float64)).float()}
    target = {1: (100.01 + 0.01 * torch.randn(64, 8, 16, generator=gen, dtype=torch.float64)).float()}
    cfg = MMDConfig(num_bandwidths=5, max_samples_per_condition=1024)
    single = conditional_mmd(source, target, cfg).item()
    double = conditional_mmd({1: source[1].double()}, {1: target[1].double()}, cfg).item()
    assert double > 0.01
    assert single == pytest.approx(double, rel=1e-3)


def test_multikernel_self_pair_counts_each_bandwidth():
    point = torch.tensor([[0.3, -1.2]], dtype=torch.float64)
    sigmas = torch.tensor([0.5, 1.0, 2.0, 4.0], dtype=torch.float64)
    assert gaussian_multikernel(point, point, sigmas).item() == pytest.approx(4.0)


def test_multikernel_single_term():
    a = torch.tensor([[0.0, 0.0]], dtype=torch.float64)
    b = torch.tensor([[1.0, 1.0]], dtype=torch.float64)
    value = gaussian_multikernel(a, b, torch.tensor([2.0], dtype=torch.float64)).item()
    assert value == pytest.approx(math.exp(-1.0))


def test_multikernel_is_symmetric():
    sigmas = torch.tensor([0.5, 2.0, 8.0], dtype=torch.float64)
    for seed in range(20):
        gen = torch.Generator().manual_seed(seed)
        a = torch.randn(5, 3, generator=gen, dtype=torch.float64)
        b = torch.randn(7, 3, generator=gen, dtype=torch.float64) + 0.3
        ab = gaussian_multikernel(a, b, sigmas).item()
        ba = gaussian_multikernel(b, a, sigmas).item()
        assert abs(ab - ba) <= 1e-12


def test_multikernel_rejects_nonpositive_bandwidths():
    with pytest.raises(ConfigError):
        gaussian_multikernel(torch.zeros(2, 2), torch.ones(2, 2), torch.tensor([1.0, 0.0]))


def test_singleton_mmd_closed_form():
    u = torch.tensor([[0.0, 0.0]], dtype=torch.float64)
    v = torch.tensor([[1.0, 0.0]], dtype=torch.float64)
    sigmas = torch.tensor([1.0], dtype=torch.float64)
    per_condition = (
        gaussian_multikernel(u, u, sigmas) + gaussian_multikernel(v, v, sigmas)
        - 2.0 * gaussian_multikernel(u, v, sigmas)
    ).item()
    assert per_condition == pytest.approx(2.0 - 2.0 * math.exp(-1.0))
    assert per_condition == pytest.approx(1.26424, abs=1e-5)


def test_repeated_point_conditions_sum_closed_form():
    # each trial repeats one point over 2 bins: pooled m = 2d²/3 per condition
    cfg = MMDConfig(num_bandwidths=1)
    source = {1: torch.zeros(1, 2, 2, dtype=torch.float64), 2: torch.ones(1, 2, 2, dtype=torch.float64)}
    target = {1: torch.zeros(1, 2, 2, dtype=torch.float64), 2: torch.ones(1, 2, 2, dtype=torch.float64)}
    target[1][0, 0, :] = 1.0
    target[2][0, 1, :] = 3.0
    value = conditional_mmd(source, target, cfg).item()
    assert value == pytest.approx(2.0 * (2.0 - 2.0 * math.exp(-1.5)))


def test_mmd_nonnegative_over_random_inputs():
    rng = np.random.default_rng(0)
    for case in range(1000):
        n_source, n_target = rng.integers(1, 5, size=2)
        num_bins = int(rng.integers(2, 5))
        cfg = MMDConfig(num_bandwidths=int(rng.integers(1, 6)), bandwidth_scale=float(rng.uniform(1.1, 4.0)))
        source = {1: torch.from_numpy(rng.normal(size=(n_source, 2, num_bins)))}
        target = {1: torch.from_numpy(rng.normal(loc=rng.normal(), size=(n_target, 2, num_bins)))}
        assert conditional_mmd(source, target, cfg).item() >= -1e-9, case


@pytest.mark.parametrize("num_bandwidths", [1, 3, 5])
@pytest.mark.parametrize("granularity", ["per_time_bin", "per_trial_flat"])
def test_conditional_mmd_matches_brute_force(num_bandwidths, granularity):
    gen = torch.Generator().manual_seed(num_bandwidths)
    source = {1: torch.randn(3, 2, 4, generator=gen, dtype=torch.float64),
              2: torch.randn(4, 2, 4, generator=gen, dtype=torch.float64)}
    target = {1: torch.randn(2, 2, 4, generator=gen, dtype=torch.float64) + 0.5,
              2: torch.randn(5, 2, 4, generator=gen, dtype=torch.float64),
              3: torch.randn(2, 2, 4, generator=gen, dtype=torch.float64)}
    cfg = MMDConfig(num_bandwidths=num_bandwidths, bandwidth_scale=2.0, granularity=granularity)

    terms, skipped = conditional_mmd_terms(source, target, cfg)
    assert skipped == [3]
    expected = sum(
        _oracle_mmd(_samples(source[c], granularity), _samples(target[c], granularity), num_bandwidths, 2.0)
        for c in (1, 2)
    )
    assert abs(conditional_mmd(source, target, cfg).item() - expected) < 1e-10
    assert set(terms) == {1, 2}


def test_pooled_mmd_matches_brute_force_on_all_trials():
    gen = torch.Generator().manual_seed(11)
    source = {1: torch.randn(3, 2, 3, generator=gen, dtype=torch.float64),
              2: torch.randn(2, 2, 3, generator=gen, dtype=torch.float64)}
    target = {2: torch.randn(4, 2, 3, generator=gen, dtype=torch.float64)}
    cfg = MMDConfig(num_bandwidths=3, conditional=False)
    terms, _ = conditional_mmd_terms(source, target, cfg)
    assert list(terms) == [POOLED_CONDITION]
    pooled_source = _samples(torch.cat([source[1], source[2]]), "per_time_bin")
    expected = _oracle_mmd(pooled_source, _samples(target[2], "per_time_bin"), 3, 2.0)
    assert abs(terms[POOLED_CONDITION].item() - expected) < 1e-10


def test_mmd_nonnegative_and_zero_on_equal_sets():
    cfg = MMDConfig(num_bandwidths=3)
    for seed in range(20):
        gen = torch.Generator().manual_seed(seed)
        a = {1: torch.randn(3, 2, 5, generator=gen, dtype=torch.float64)}
        b = {1: torch.randn(4, 2, 5, generator=gen, dtype=torch.float64)}
        assert conditional_mmd(a, b, cfg).item() >= -1e-12
        assert abs(conditional_mmd(a, a, cfg).item()) < 1e-12


def test_mmd_without_usable_condition_raises():
    cfg = MMDConfig()
    with pytest.raises(InsufficientSamplesError):
        conditional_mmd({1: torch.randn(2, 2, 3)}, {2: torch.randn(2, 2, 3)}, cfg)


def test_mmd_gradcheck():
    cfg = MMDConfig(num_bandwidths=3)
    for seed in range(20):
        gen = torch.Generator().manual_seed(seed)
        source = {1: torch.randn(2, 2, 3, generator=gen, dtype=torch.float64)}
        target = torch.randn(3, 2, 3, generator=gen, dtype=torch.float64, requires_grad=True)
        assert torch.autograd.gradcheck(lambda z: conditional_mmd(source, {1: z}, cfg), (target,))


def test_group_by_condition():
    latents = torch.arange(4 * 2 * 3, dtype=torch.float32).reshape(4, 2, 3)
    groups = group_by_condition(latents, [2, 1, 2, 4])
    assert sorted(groups) == [1, 2, 4]
    assert groups[2].shape == (2, 2, 3)
    torch.testing.assert_close(groups[1][0], latents[1])


# ============================================================================
# COORDINATED DROPOUT
# ============================================================================

def test_zero_rate_returns_sentinel():
    cfg = DropoutConfig(mask_rate=0.0)
    assert coordinated_dropout_mask(10, cfg, counter=3) is ALL_BINS
    assert batch_masks([0, 1], 10, cfg) == (None, None)


def test_masks_are_deterministic_per_counter_and_phase():
    cfg = DropoutConfig(mask_rate=0.25, seed_stream=7)
    a = coordinated_dropout_mask(60, cfg, counter=5)
    assert torch.equal(a, coordinated_dropout_mask(60, cfg, counter=5))
    assert not torch.equal(a, coordinated_dropout_mask(60, cfg, counter=6))
    assert not torch.equal(a, coordinated_dropout_mask(60, cfg, counter=5, phase=EVAL_PHASE))
    assert not torch.equal(a, coordinated_dropout_mask(60, DropoutConfig(mask_rate=0.25, seed_stream=8), counter=5))


def test_mask_rate_is_respected_on_average():
    cfg = DropoutConfig(mask_rate=0.25, seed_stream=1)
    input_mask, loss_mask = batch_masks(list(range(1000)), 60, cfg)
    assert input_mask.shape == (1000, 60)
    assert input_mask.dtype == torch.bool
    assert torch.equal(input_mask, loss_mask)
    assert abs(input_mask.float().mean().item() - 0.25) < 0.01
