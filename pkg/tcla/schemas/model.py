"""
Model Schemas
Architecture hyperparameters of the shared autoencoder
"""

from pydantic import BaseModel, ConfigDict, Field, model_validator


class ArchitectureConfig(BaseModel):
    """Shared temporal-convolution autoencoder hyperparameters"""
    model_config = ConfigDict(extra="forbid", frozen=True)

    embed_width: int = Field(64, ge=1, description="Embedding width E produced by read-in layers")
    latent_dim: int = Field(8, ge=1, description="Latent dimension q (q < every session's C)")
    num_blocks: int = Field(3, ge=1, description="Residual gated temporal blocks per encoder/decoder")
    kernel_width: int = Field(9, ge=1, description="Temporal kernel width (odd)")
    seed: int = Field(0, ge=0, description="Initialization seed")

    @model_validator(mode="after")
    def check_invariants(self):
        if self.embed_width < self.latent_dim:
            raise ValueError("invariant violated: embed_width E >= latent_dim q")
        if self.kernel_width % 2 == 0:
            raise ValueError("invariant violated: kernel_width must be odd")
        return self
