"""
Generation Schemas
Pydantic models for the synthetic multi-session generator
"""

import math
from typing import Optional

from pydantic import BaseModel, ConfigDict, Field, model_validator

SEED_MAX = 2 ** 64 - 1


class GenConfig(BaseModel):
    """Shared structure of every generated session"""
    model_config = ConfigDict(extra="forbid", allow_inf_nan=False, frozen=True)

    num_directions: int = Field(8, description="Number of reach directions D (D >= 2)")
    trials_per_session: int = Field(200, description="Trials per session n (n >= D)")
    num_channels: int = Field(96, description="Channels C of the undrifted base session (C >= 1)")
    num_bins: int = Field(60, description="Time bins per trial T (T >= 2)")
    bin_width_ms: float = Field(5.0, description="Bin width in milliseconds (> 0)")
    baseline_log_rate: float = Field(math.log(20.0), description="Log baseline firing rate, log spikes/s")
    tuning_depth: float = Field(1.5, description="Cosine tuning depth at peak speed (>= 0)")
    reach_duration_bins: int = Field(40, description="Bins spanned by the reach (2 <= R <= T)")
    kinematic_peak_speed: float = Field(30.0, description="Peak reach speed, position units per second (> 0)")
    master_seed: int = Field(0, ge=0, le=SEED_MAX, description="Seed for base tuning and all session streams")

    @model_validator(mode="after")
    def check_invariants(self):
        if self.num_directions < 2:
            raise ValueError("invariant violated: num_directions D >= 2")
        if self.trials_per_session < self.num_directions:
            raise ValueError("invariant violated: trials_per_session n >= num_directions D")
        if self.num_channels < 1:
            raise ValueError("invariant violated: num_channels C >= 1")
        if self.num_bins < 2:
            raise ValueError("invariant violated: num_bins T >= 2")
        if self.bin_width_ms <= 0:
            raise ValueError("invariant violated: bin_width_ms > 0")
        if self.tuning_depth < 0:
            raise ValueError("invariant violated: tuning_depth >= 0")
        if not 2 <= self.reach_duration_bins <= self.num_bins:
            raise ValueError("invariant violated: 2 <= reach_duration_bins <= num_bins T")
        if self.kinematic_peak_speed <= 0:
            raise ValueError("invariant violated: kinematic_peak_speed > 0")
        return self

    @property
    def bin_width_s(self) -> float:
        return self.bin_width_ms / 1000.0


class DriftConfig(BaseModel):
    """Parametric cross-session drift applied to the base tuning"""
    model_config = ConfigDict(extra="forbid", allow_inf_nan=False, frozen=True)

    permute_fraction: float = Field(0.0, ge=0.0, le=1.0, description="Fraction of channels whose unit identities are shuffled")
    gain_log_std: float = Field(0.0, ge=0.0, description="Std of the per-unit log-normal gain")
    tuning_rotation_rad: float = Field(0.0, description="Rotation added to every preferred direction, radians")
    dropped_unit_fraction: float = Field(0.0, ge=0.0, lt=1.0, description="Fraction of channels removed from the session")
    session_seed: int = Field(0, ge=0, le=SEED_MAX, description="Seed of this session's streams")
    num_trials: Optional[int] = Field(None, ge=1, description="Trials of this session; defaults to gen.trials_per_session")

    @classmethod
    def identity(cls, session_seed: int = 0, num_trials: Optional[int] = None) -> "DriftConfig":
        return cls(session_seed=session_seed, num_trials=num_trials)

    @property
    def is_identity(self) -> bool:
        return (
            self.permute_fraction == 0.0
            and self.gain_log_std == 0.0
            and self.tuning_rotation_rad == 0.0
            and self.dropped_unit_fraction == 0.0
        )
