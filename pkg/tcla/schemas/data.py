"""
Data Schemas
Pydantic models for dataset splitting
"""

from typing import Tuple

from pydantic import BaseModel, ConfigDict, Field, field_validator


class SplitSpec(BaseModel):
    """Train/val/test split as integer weights, e.g. 8:1:1 or 1:1:3"""
    model_config = ConfigDict(extra="forbid", frozen=True)

    ratios: Tuple[int, int, int] = Field((8, 1, 1), description="Integer weights for (train, val, test)")
    stratify_by_label: bool = Field(True, description="Split each direction separately")
    seed: int = Field(0, ge=0, description="Shuffle seed")

    @field_validator("ratios")
    @classmethod
    def check_ratios(cls, value):
        if any(part <= 0 for part in value):
            raise ValueError("invariant violated: every split part > 0")
        return value

    @property
    def label(self) -> str:
        return ":".join(str(part) for part in self.ratios)
