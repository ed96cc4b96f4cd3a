"""
Evaluation Statistics
R², session-level percentile bootstrap and the Wilcoxon signed-rank test
"""

import math
from typing import Sequence, Tuple

import numpy as np
from scipy import stats

from tcla.exceptions import DegenerateTargetError, InsufficientSamplesError, ShapeError
from tcla.utils.seeding import STREAM_BOOTSTRAP, rng_stream

EXACT_MAX_N = 20
MIN_NONZERO_PAIRS = 5


def r_squared(pred, truth) -> float:
    """1 − SS_res / SS_tot, with SS_tot centered on the truth mean"""
    pred = np.asarray(pred, dtype=np.float64).ravel()
    truth = np.asarray(truth, dtype=np.float64).ravel()
    if pred.shape != truth.shape:
        raise ShapeError(f"pred has {pred.size} values, truth has {truth.size}")
    if truth.size < 2:
        raise InsufficientSamplesError("r_squared needs at least 2 values")
    ss_tot = float(np.sum((truth - truth.mean()) ** 2))
    if ss_tot == 0.0:
        raise DegenerateTargetError("truth is constant; R² is undefined")
    ss_res = float(np.sum((truth - pred) ** 2))
    return 1.0 - ss_res / ss_tot


def bootstrap_ci(
    values: Sequence[float],
    resamples: int = 10000,
    alpha: float = 0.05,
    seed: int = 0,
) -> Tuple[float, float, float]:
    """
    Percentile bootstrap of the mean over sessions

    Resample b draws its indices from its own counter stream (seed, b), so the
    result does not depend on the order in which resamples are computed.

    Returns:
        (mean of resample means, alpha/2 percentile, 1 − alpha/2 percentile)
    """
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        raise InsufficientSamplesError("bootstrap_ci needs at least one value")
    if resamples < 1:
        raise InsufficientSamplesError("bootstrap_ci needs at least one resample")
    n = values.size
    means = np.empty(resamples)
    for b in range(resamples):
        index = rng_stream(seed, STREAM_BOOTSTRAP, b).integers(0, n, n)
        means[b] = values[index].mean()
    # inverted_cdf returns observed resample means
    low, high = np.quantile(means, [alpha / 2.0, 1.0 - alpha / 2.0], method="inverted_cdf")
    return float(means.mean()), float(low), float(high)


# ============================================================================
# WILCOXON SIGNED-RANK
# ============================================================================

def _exact_two_sided(ranks: np.ndarray, w_plus: float) -> float:
    """Two-sided p from the exact null of W+ (ranks doubled so mid-ranks stay integral)"""
    doubled = np.rint(ranks * 2).astype(np.int64)
    total = int(doubled.sum())
    counts = np.zeros(total + 1, dtype=np.float64)
    counts[0] = 1.0
    for r in doubled:
        shifted = np.zeros_like(counts)
        shifted[r:] = counts[:-r]
        counts = counts + shifted
    distribution = counts / counts.sum()

    observed = int(round(w_plus * 2))
    mirrored = total - observed
    low, high = min(observed, mirrored), max(observed, mirrored)
    p = distribution[: low + 1].sum() + distribution[high:].sum()
    if low == high:
        p = distribution.sum()
    return float(min(1.0, p))


def wilcoxon_signed_rank(a: Sequence[float], b: Sequence[float]) -> float:
    """
    Two-sided Wilcoxon signed-rank p-value for paired samples

    Zero differences are dropped and ties get mid-ranks. n <= 20 uses the exact
    null distribution; larger n uses the tie-corrected normal approximation with
    continuity correction.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"paired samples differ in length: {a.size} vs {b.size}")
    diffs = a - b
    diffs = diffs[diffs != 0.0]
    n = diffs.size
    if n < MIN_NONZERO_PAIRS:
        raise InsufficientSamplesError(f"wilcoxon needs >= {MIN_NONZERO_PAIRS} nonzero differences, got {n}")

    ranks = stats.rankdata(np.abs(diffs))
    w_plus = float(ranks[diffs > 0].sum())
    if n <= EXACT_MAX_N:
        return _exact_two_sided(ranks, w_plus)

    mean = n * (n + 1) / 4.0
    _, tie_counts = np.unique(ranks, return_counts=True)
    variance = n * (n + 1) * (2 * n + 1) / 24.0 - np.sum(tie_counts ** 3 - tie_counts) / 48.0
    deviation = abs(w_plus - mean)
    z = max(deviation - 0.5, 0.0) / math.sqrt(variance)
    return float(min(1.0, 2.0 * stats.norm.sf(z)))
