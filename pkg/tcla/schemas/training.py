"""
Training Schemas
Stage One (source pretraining) and Stage Two (target alignment) configuration
"""

from typing import Literal

from pydantic import BaseModel, ConfigDict, Field, model_validator

from tcla.schemas.objectives import DropoutConfig, MMDConfig, RegConfig


class _StageBase(BaseModel):
    model_config = ConfigDict(extra="forbid", allow_inf_nan=False, frozen=True)

    dropout: DropoutConfig = Field(default_factory=DropoutConfig)
    batch_size: int = Field(32, ge=1)
    max_epochs: int = Field(500, ge=1)
    early_stop_patience: int = Field(25, ge=1)
    seed: int = Field(0, ge=0, description="Batch order, masks and fresh-layer initialization")
    loss_reduction: Literal["mean", "sum"] = Field(
        "mean", description="Reduction over trials of a batch; (c, t) are always summed within a trial"
    )
    divergence_factor: float = Field(1e3, gt=1.0, description="Abort when loss exceeds this multiple of the initial loss")

    @model_validator(mode="after")
    def check_patience(self):
        if self.early_stop_patience > self.max_epochs:
            raise ValueError("invariant violated: early_stop_patience <= max_epochs")
        return self


class StageOneConfig(_StageBase):
    """Joint optimization of the shared autoencoder and the source session layers"""
    reg: RegConfig = Field(default_factory=RegConfig)
    learning_rate: float = Field(1e-3, gt=0.0)


class StageTwoConfig(_StageBase):
    """Target session layers trained against a frozen shared autoencoder"""
    mmd: MMDConfig = Field(default_factory=MMDConfig)
    learning_rate: float = Field(5e-4, gt=0.0)
    source_latent_cache_size: int = Field(256, ge=2, description="Source training trials encoded once for L_MMD")
    source_data: Literal["train"] = Field("train", description="Source split feeding the latent cache")
