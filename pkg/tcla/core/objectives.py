"""
Objectives
Poisson NLL, latent regularizer, multi-kernel MMD alignment and coordinated dropout
"""

from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import torch

from tcla.exceptions import (
    ConfigError,
    InsufficientSamplesError,
    NonPositiveRateError,
    ShapeError,
)
from tcla.schemas.objectives import DropoutConfig, Granularity, MMDConfig, RegConfig
from tcla.utils.logger import LoggerManager
from tcla.utils.seeding import STREAM_DROPOUT, rng_stream

logger = LoggerManager.get_logger('objectives')

# Returned by coordinated_dropout_mask when masking is disabled: input untouched, every bin scored
ALL_BINS = object()

POOLED_CONDITION = 0

# Mask counter spaces: training steps and the fixed validation masks
TRAIN_PHASE = 0
EVAL_PHASE = 1


# ============================================================================
# RECONSTRUCTION
# ============================================================================

def poisson_nll(rates: torch.Tensor, spikes: torch.Tensor, loss_mask: Optional[torch.Tensor] = None) -> torch.Tensor:
    """
    Σ over included (c, t) of r − x·ln r, per trial

    Args:
        rates: [C, T] or [B, C, T], strictly positive
        spikes: Same shape as rates
        loss_mask: bool [T] or [B, T]; True bins contribute

    Returns:
        Scalar for a single trial, [B] for a batch
    """
    if rates.shape != spikes.shape:
        raise ShapeError(f"rates {tuple(rates.shape)} and spikes {tuple(spikes.shape)} differ")
    if not torch.all(rates > 0):
        raise NonPositiveRateError("poisson_nll needs strictly positive rates")
    spikes = spikes.to(rates.dtype)
    terms = rates - spikes * torch.log(rates)
    if loss_mask is not None:
        if loss_mask.shape[-1] != rates.shape[-1]:
            raise ShapeError(f"loss_mask length {loss_mask.shape[-1]} != T={rates.shape[-1]}")
        weight = loss_mask.to(rates.dtype)
        terms = terms * (weight.unsqueeze(-2) if weight.dim() == 2 else weight)
    return terms.sum(dim=(-2, -1))


# ============================================================================
# LATENT REGULARIZER
# ============================================================================

def latent_reg(latents: torch.Tensor, cfg: RegConfig) -> torch.Tensor:
    """
    β1·‖z‖² + β2·Σ_{w=1..W} Σ_{t>w} ‖z(t) − z(t−w)‖² / (1 + w)

    Args:
        latents: [q, T] or [B, q, T]

    Returns:
        Scalar for a single trajectory, [B] for a batch
    """
    if latents.dim() not in (2, 3):
        raise ShapeError(f"latents must be [q, T] or [B, q, T], got {tuple(latents.shape)}")
    num_bins = latents.shape[-1]
    if cfg.smooth_window >= num_bins:
        raise ConfigError(f"invariant violated: smooth_window W={cfg.smooth_window} < T={num_bins}")

    total = cfg.beta1 * latents.pow(2).sum(dim=(-2, -1))
    if cfg.beta2 != 0.0:
        smooth = torch.zeros_like(total)
        for w in range(1, cfg.smooth_window + 1):
            diff = latents[..., w:] - latents[..., :-w]
            smooth = smooth + diff.pow(2).sum(dim=(-2, -1)) / (1 + w)
        total = total + cfg.beta2 * smooth
    return total


# ============================================================================
# MULTI-KERNEL MMD
# ============================================================================

def _squared_distances(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    # distances are shift invariant; centering on a keeps the expansion accurate far from the origin
    shift = a.mean(0, keepdim=True)
    a, b = a - shift, b - shift
    cross = a @ b.transpose(0, 1)
    return (a.pow(2).sum(1, keepdim=True) + b.pow(2).sum(1).unsqueeze(0) - 2.0 * cross).clamp_min(0.0)


def mmd_bandwidths(samples: torch.Tensor, num_bandwidths: int, scale: float, sigma_floor: float) -> torch.Tensor:
    """
    σ_j = K^(j − ⌊J/2⌋) · m, with m the mean squared distance over ordered pairs i ≠ j

    Args:
        samples: [N, dim] pooled multiset (duplicates kept)

    Returns:
        [J] bandwidths, each at least sigma_floor
    """
    n = samples.shape[0]
    if n < 2:
        raise InsufficientSamplesError(f"mmd_bandwidths needs >= 2 samples, got {n}")
    # Σ_{i,j} ‖x_i − x_j‖² = 2N Σ‖c_i‖² for mean-centered c; the diagonal contributes nothing
    centered = samples - samples.mean(0, keepdim=True)
    pair_sum = 2.0 * n * centered.pow(2).sum()
    mean_distance = pair_sum.clamp_min(0.0) / (n * (n - 1))
    exponents = torch.arange(num_bandwidths, dtype=samples.dtype, device=samples.device) - num_bandwidths // 2
    sigmas = torch.pow(torch.tensor(float(scale), dtype=samples.dtype), exponents) * mean_distance
    return sigmas.clamp_min(sigma_floor)


def gaussian_multikernel(a: torch.Tensor, b: torch.Tensor, sigmas: torch.Tensor) -> torch.Tensor:
    """(1 / |A||B|) Σ_j Σ_a Σ_b exp(−‖a − b‖² / σ_j)"""
    if a.shape[0] == 0 or b.shape[0] == 0:
        raise InsufficientSamplesError("gaussian_multikernel needs nonempty sets")
    sigmas = torch.as_tensor(sigmas, dtype=a.dtype)
    if sigmas.numel() == 0 or not torch.all(sigmas > 0):
        raise ConfigError("bandwidths must be nonempty and positive")
    distances = _squared_distances(a, b)
    kernel = torch.exp(-distances.unsqueeze(0) / sigmas.view(-1, 1, 1))
    return kernel.sum() / (a.shape[0] * b.shape[0])


def _subsample(samples: torch.Tensor, limit: int) -> torch.Tensor:
    count = samples.shape[0]
    if count <= limit:
        return samples
    index = (torch.arange(limit) * count) // limit
    return samples[index]


def mmd_samples(latents: torch.Tensor, cfg: MMDConfig) -> torch.Tensor:
    """
    Expand [n, q, T] latents of one condition into MMD samples

    per_time_bin: every z(·, t) is a q-vector, pooled over trials (trial-major order)
    per_trial_flat: every trial is one q·T vector
    """
    if cfg.granularity == Granularity.PER_TIME_BIN:
        samples = latents.permute(0, 2, 1).reshape(-1, latents.shape[1])
    else:
        samples = latents.reshape(latents.shape[0], -1)
    return _subsample(samples, cfg.max_samples_per_condition)


def _pool_conditions(by_condition: Mapping[int, torch.Tensor]) -> Dict[int, torch.Tensor]:
    present = [v for _, v in sorted(by_condition.items()) if v is not None and v.shape[0] > 0]
    return {POOLED_CONDITION: torch.cat(present, dim=0)} if present else {}


def conditional_mmd_terms(
    source_latents: Mapping[int, torch.Tensor],
    target_latents: Mapping[int, torch.Tensor],
    cfg: MMDConfig,
) -> Tuple[Dict[int, torch.Tensor], List[int]]:
    """
    Per-condition k(S,S) + k(T,T) − 2k(S,T) and the list of skipped conditions

    Conditions missing on either side, or with fewer than 2 samples after
    expansion and subsampling, are skipped.
    """
    if not cfg.conditional:
        source_latents = _pool_conditions(source_latents)
        target_latents = _pool_conditions(target_latents)

    terms: Dict[int, torch.Tensor] = {}
    skipped: List[int] = []
    for condition in sorted(set(source_latents) | set(target_latents)):
        source = source_latents.get(condition)
        target = target_latents.get(condition)
        if source is None or target is None or source.shape[0] == 0 or target.shape[0] == 0:
            skipped.append(condition)
            continue
        s = mmd_samples(source, cfg)
        t = mmd_samples(target, cfg).to(s.dtype)
        if s.shape[0] < 2 or t.shape[0] < 2:
            skipped.append(condition)
            continue
        sigmas = mmd_bandwidths(torch.cat([s, t], dim=0), cfg.num_bandwidths, cfg.bandwidth_scale, cfg.sigma_floor)
        terms[condition] = (
            gaussian_multikernel(s, s, sigmas)
            + gaussian_multikernel(t, t, sigmas)
            - 2.0 * gaussian_multikernel(s, t, sigmas)
        )
    if not terms:
        raise InsufficientSamplesError("no condition has enough source and target samples for the MMD")
    if skipped:
        logger.debug(f"MMD skipped conditions {skipped}")
    return terms, skipped


def conditional_mmd(
    source_latents: Mapping[int, torch.Tensor],
    target_latents: Mapping[int, torch.Tensor],
    cfg: MMDConfig,
) -> torch.Tensor:
    """L_MMD: sum over conditions of the biased multi-kernel MMD estimate"""
    terms, _ = conditional_mmd_terms(source_latents, target_latents, cfg)
    return torch.stack([terms[c] for c in sorted(terms)]).sum()


def group_by_condition(latents: torch.Tensor, labels) -> Dict[int, torch.Tensor]:
    """Split [n, q, T] latents by 1-based direction labels"""
    labels = torch.as_tensor(np.asarray(labels), dtype=torch.long)
    return {int(d): latents[labels == d] for d in torch.unique(labels).tolist()}


# ============================================================================
# COORDINATED DROPOUT
# ============================================================================

def coordinated_dropout_mask(num_bins: int, cfg: DropoutConfig, counter: int, phase: int = TRAIN_PHASE):
    """
    Bernoulli(mask_rate) mask over time bins, deterministic in (seed_stream, phase, counter)

    Returns:
        bool tensor [T] (True = zeroed on input and scored in the loss), or
        ALL_BINS when mask_rate is 0
    """
    if not 0.0 <= cfg.mask_rate < 1.0:
        raise ConfigError("invariant violated: 0 <= mask_rate < 1")
    if cfg.mask_rate == 0.0:
        return ALL_BINS
    draws = rng_stream(cfg.seed_stream, STREAM_DROPOUT, phase, counter).random(num_bins)
    return torch.from_numpy(draws < cfg.mask_rate)


def batch_masks(counters: Sequence[int], num_bins: int, cfg: DropoutConfig, phase: int = TRAIN_PHASE):
    """
    (input_mask, loss_mask) for a batch, one coordinated-dropout mask per trial

    Both masks are None when dropout is disabled.
    """
    masks = [coordinated_dropout_mask(num_bins, cfg, counter, phase) for counter in counters]
    if any(m is ALL_BINS for m in masks):
        return None, None
    stacked = torch.stack(masks)
    return stacked, stacked
