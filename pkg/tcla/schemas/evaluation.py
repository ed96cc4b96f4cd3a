"""
Evaluation Schemas
Decoder configuration, evaluation settings and the serialized report
"""

from enum import Enum
from typing import Dict, List, Optional

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

METHODS = ("tcla", "tcla_global", "frozen_no_mmd", "ldnsws")
VARIABLES = ("pos_x", "pos_y", "vel_x", "vel_y")


class DecoderKind(str, Enum):
    RECURRENT = "recurrent"
    LINEAR_RIDGE = "linear_ridge"


class DecoderConfig(BaseModel):
    """Downstream rates-to-kinematics decoder"""
    model_config = ConfigDict(extra="forbid", allow_inf_nan=False, frozen=True)

    kind: DecoderKind = Field(DecoderKind.RECURRENT)
    hidden_size: int = Field(64, ge=1, description="LSTM hidden units (recurrent)")
    ridge_lambda: float = Field(1e-3, gt=0.0, description="Ridge penalty (linear_ridge)")
    learning_rate: float = Field(3e-3, gt=0.0)
    max_epochs: int = Field(200, ge=1)
    patience: int = Field(20, ge=1)
    batch_size: int = Field(16, ge=1)
    seed: int = Field(0, ge=0)


class EvalConfig(BaseModel):
    """Run matrix and statistics settings"""
    model_config = ConfigDict(extra="forbid", frozen=True)

    runs_per_session: int = Field(5, ge=1, description="Independent runs averaged per target session")
    bootstrap_resamples: int = Field(10000, ge=1)
    alpha: float = Field(0.05, gt=0.0, lt=1.0)
    bootstrap_seed: int = Field(0, ge=0)
    methods: List[str] = Field(default_factory=lambda: ["tcla"], description=f"Any of {', '.join(METHODS)}")
    baseline_method: str = Field("ldnsws", description="Method every other method is paired against")
    export_projection: bool = Field(True, description="Write 2-D latent projections per method")

    @field_validator("methods")
    @classmethod
    def check_methods(cls, value):
        unknown = [m for m in value if m not in METHODS]
        if unknown:
            raise ValueError(f"unknown methods: {', '.join(unknown)}")
        if len(set(value)) != len(value):
            raise ValueError("methods must be unique")
        return value


# ============================================================================
# REPORT
# ============================================================================

class R2Entry(BaseModel):
    """One (session, method, variable, run) cell"""
    session_id: str
    method: str
    variable: str
    run: int
    r2: float

    @field_validator("r2")
    @classmethod
    def check_r2(cls, value):
        if value > 1.0:
            raise ValueError("invariant violated: R² <= 1")
        return value


class VariableSummary(BaseModel):
    """Across-session statistics of one method and variable"""
    method: str
    variable: str
    session_means: Dict[str, float]
    bootstrap_mean: float
    ci_low: float
    ci_high: float

    @model_validator(mode="after")
    def check_order(self):
        if not self.ci_low <= self.ci_high:
            raise ValueError("invariant violated: ci_low <= ci_high")
        return self


class Comparison(BaseModel):
    """Paired Wilcoxon comparison of a method against the baseline"""
    method: str
    baseline: str
    variable: str
    pairing: str = Field(..., description="session_means or cells")
    n_pairs: int
    p_value: Optional[float] = None
    reason: Optional[str] = None
    mean_improvement: float
    baseline_mean: float


class EvalReport(BaseModel):
    """Per-session R², bootstrap statistics and paired tests"""
    entries: List[R2Entry]
    summaries: List[VariableSummary]
    comparisons: List[Comparison]
    metadata: Dict[str, object] = Field(default_factory=dict)
