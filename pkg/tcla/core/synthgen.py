"""
Synthetic Multi-Session Generator
Cosine-tuned Poisson population during center-out reaches, with parametric cross-session drift
"""

import math
import concurrent.futures
from dataclasses import dataclass
from typing import List, Optional

import numpy as np

from tcla.core.dataio import SessionDataset
from tcla.exceptions import ConfigError
from tcla.schemas.generation import DriftConfig, GenConfig
from tcla.utils.logger import LoggerManager
from tcla.utils.seeding import STREAM_DRIFT, STREAM_TRIAL, STREAM_TUNING, rng_stream

logger = LoggerManager.get_logger('synthgen')

SOURCE_SESSION_ID = "source"


def round_half_up(value: float) -> int:
    return int(math.floor(value + 0.5))


@dataclass(frozen=True)
class UnitTuning:
    """Per-channel tuning of one session"""
    unit_ids: np.ndarray              # base unit recorded on each channel
    preferred_directions: np.ndarray  # radians in [0, 2π)
    log_gains: np.ndarray             # additive on the log rate

    @property
    def num_channels(self) -> int:
        return self.unit_ids.shape[0]


# ============================================================================
# TUNING
# ============================================================================

def base_tuning(gen: GenConfig) -> UnitTuning:
    """Undrifted population shared by every session of an experiment"""
    rng = rng_stream(gen.master_seed, STREAM_TUNING)
    return UnitTuning(
        unit_ids=np.arange(gen.num_channels),
        preferred_directions=rng.uniform(0.0, 2.0 * np.pi, gen.num_channels),
        log_gains=np.zeros(gen.num_channels),
    )


def session_tuning(gen: GenConfig, drift: DriftConfig) -> UnitTuning:
    """
    Apply drift to the base tuning: permutation -> gain -> rotation -> dropping

    Every random draw happens regardless of the drift magnitudes, so a
    session's stream layout never depends on which drifts are active.
    """
    base = base_tuning(gen)
    num_channels = gen.num_channels
    rng = rng_stream(gen.master_seed, STREAM_DRIFT, drift.session_seed)

    unit_ids = base.unit_ids.copy()
    permuted = np.sort(rng.choice(num_channels, round_half_up(drift.permute_fraction * num_channels), replace=False))
    unit_ids[permuted] = unit_ids[rng.permutation(permuted)]

    log_gains = rng.standard_normal(num_channels) * drift.gain_log_std
    preferred = np.mod(base.preferred_directions[unit_ids] + drift.tuning_rotation_rad, 2.0 * np.pi)

    num_dropped = round_half_up(drift.dropped_unit_fraction * num_channels)
    if num_channels - num_dropped < 1:
        raise ConfigError("invariant violated: dropped_unit_fraction must leave >= 1 active unit")
    kept = np.sort(rng.choice(num_channels, num_channels - num_dropped, replace=False))

    return UnitTuning(
        unit_ids=unit_ids[kept],
        preferred_directions=preferred[kept],
        log_gains=log_gains[kept],
    )


# ============================================================================
# KINEMATICS
# ============================================================================

def direction_angles(num_directions: int) -> np.ndarray:
    """Angle of direction d (1-based) is 2π(d-1)/D"""
    return 2.0 * np.pi * np.arange(num_directions) / num_directions


def speed_profile(gen: GenConfig) -> np.ndarray:
    """Normalized half-cosine bell sin(πt/R) over the reach, zero afterwards"""
    t = np.arange(gen.num_bins, dtype=np.float64)
    duration = gen.reach_duration_bins
    return np.where(t <= duration, np.sin(np.pi * np.minimum(t, duration) / duration), 0.0)


def reach_positions(gen: GenConfig, labels: np.ndarray) -> np.ndarray:
    """Straight center-out reaches starting at the origin, [n, 2, T]"""
    speed = gen.kinematic_peak_speed * speed_profile(gen)
    distance = np.concatenate([[0.0], np.cumsum(speed[:-1] * gen.bin_width_s)])
    angles = direction_angles(gen.num_directions)[labels - 1]
    unit = np.stack([np.cos(angles), np.sin(angles)], axis=1)
    return (unit[:, :, None] * distance[None, None, :]).astype(np.float32)


# ============================================================================
# SESSIONS
# ============================================================================

def _trial_spikes(gen: GenConfig, drift: DriftConfig, log_rates: np.ndarray, trial: int) -> np.ndarray:
    rng = rng_stream(gen.master_seed, STREAM_TRIAL, drift.session_seed, trial)
    return rng.poisson(np.exp(log_rates) * gen.bin_width_s)


def generate_session(
    gen: GenConfig,
    drift: DriftConfig,
    session_id: Optional[str] = None,
    max_workers: int = 1,
) -> SessionDataset:
    """
    Generate one session of n trials (drift.num_trials, else gen.trials_per_session)

    Args:
        gen: Shared generation config
        drift: This session's drift
        session_id: Defaults to "session_<session_seed>"
        max_workers: Threads for per-trial sampling; output is identical for any value

    Returns:
        SessionDataset with Poisson spikes, positions and 1-based labels
    """
    num_trials = drift.num_trials or gen.trials_per_session
    if num_trials < gen.num_directions:
        raise ConfigError(f"invariant violated: session trials n={num_trials} >= num_directions D={gen.num_directions}")
    tuning = session_tuning(gen, drift)
    labels = np.arange(num_trials) % gen.num_directions + 1
    speed = speed_profile(gen)
    angles = direction_angles(gen.num_directions)

    # log λ_c(t) per trial: baseline + gain + depth · speed(t) · cos(θ_d − φ_c)
    cosines = np.cos(angles[labels - 1][:, None] - tuning.preferred_directions[None, :])
    log_rates = (
        gen.baseline_log_rate
        + tuning.log_gains[None, :, None]
        + gen.tuning_depth * cosines[:, :, None] * speed[None, None, :]
    )

    trials = range(num_trials)
    if max_workers > 1:
        with concurrent.futures.ThreadPoolExecutor(max_workers=max_workers) as pool:
            spikes = list(pool.map(lambda i: _trial_spikes(gen, drift, log_rates[i], i), trials))
    else:
        spikes = [_trial_spikes(gen, drift, log_rates[i], i) for i in trials]

    dataset = SessionDataset(
        session_id=session_id or f"session_{drift.session_seed}",
        spikes=np.stack(spikes).astype(np.int64),
        kinematics=reach_positions(gen, labels),
        labels=labels,
        bin_width_ms=gen.bin_width_ms,
        num_directions=gen.num_directions,
    )
    logger.info(
        f"Generated {dataset.session_id}: n={dataset.num_trials} C={dataset.num_channels} "
        f"T={dataset.num_bins} mean count/bin={dataset.spikes.mean():.4f}"
    )
    return dataset


def make_multisession(gen: GenConfig, drifts: List[DriftConfig]) -> List[SessionDataset]:
    """
    Source session (identity drift) followed by one target per remaining drift

    The first entry only contributes its session_seed; its drift magnitudes
    are replaced by the identity.
    """
    if not drifts:
        raise ConfigError("invariant violated: drifts list must be nonempty")
    if not drifts[0].is_identity:
        logger.warning("First drift is the source session; its drift magnitudes are ignored")

    sessions = [generate_session(gen, DriftConfig.identity(drifts[0].session_seed, drifts[0].num_trials), SOURCE_SESSION_ID)]
    for index, drift in enumerate(drifts[1:], start=1):
        sessions.append(generate_session(gen, drift, f"target_{index:02d}"))
    return sessions
