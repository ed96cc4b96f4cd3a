"""
Objective Schemas
Regularizer, alignment and coordinated-dropout configuration
"""

from enum import Enum

from pydantic import BaseModel, ConfigDict, Field, field_validator


def _zero_or_within(value: float, low: float, high: float, name: str) -> float:
    """Hyperparameters are either switched off (0) or inside their selection interval"""
    if value == 0.0 or low <= value <= high:
        return value
    raise ValueError(f"invariant violated: {name} must be 0 or within [{low}, {high}]")


class Granularity(str, Enum):
    PER_TIME_BIN = "per_time_bin"
    PER_TRIAL_FLAT = "per_trial_flat"


class RegConfig(BaseModel):
    """Latent scale and smoothness regularizer"""
    model_config = ConfigDict(extra="forbid", allow_inf_nan=False, frozen=True)

    beta1: float = Field(5e-4, description="Latent L2 weight, 0 or in [1e-4, 1e-3]")
    beta2: float = Field(0.05, description="Temporal smoothness weight, 0 or in [0.01, 0.2]")
    smooth_window: int = Field(5, ge=1, description="Maximum lag W of the smoothness penalty (W < T)")

    @field_validator("beta1")
    @classmethod
    def check_beta1(cls, value):
        return _zero_or_within(value, 1e-4, 1e-3, "beta1")

    @field_validator("beta2")
    @classmethod
    def check_beta2(cls, value):
        return _zero_or_within(value, 0.01, 0.2, "beta2")


class MMDConfig(BaseModel):
    """Multi-kernel MMD alignment configuration"""
    model_config = ConfigDict(extra="forbid", allow_inf_nan=False, frozen=True)

    beta3: float = Field(5.0, description="Alignment weight, 0 or in [1, 10]")
    num_bandwidths: int = Field(5, ge=1, description="Number J of Gaussian bandwidths")
    bandwidth_scale: float = Field(2.0, gt=1.0, description="Geometric ratio K of the bandwidth ladder")
    granularity: Granularity = Field(Granularity.PER_TIME_BIN, description="What one MMD sample is")
    max_samples_per_condition: int = Field(512, ge=2, description="Stride-subsampling cap per condition and side")
    sigma_floor: float = Field(1e-8, gt=0.0, description="Lower bound on every bandwidth")
    conditional: bool = Field(True, description="Align per direction; false pools all trials into one condition")

    @field_validator("beta3")
    @classmethod
    def check_beta3(cls, value):
        return _zero_or_within(value, 1.0, 10.0, "beta3")


class DropoutConfig(BaseModel):
    """Coordinated dropout: mask input time bins, score only masked bins"""
    model_config = ConfigDict(extra="forbid", allow_inf_nan=False, frozen=True)

    mask_rate: float = Field(0.25, ge=0.0, lt=1.0, description="Per-bin masking probability")
    seed_stream: int = Field(0, ge=0, description="Seed stream id of the mask generator")
