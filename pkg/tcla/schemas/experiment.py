"""
Experiment Schema
One JSON file drives generation, training, evaluation and reporting
"""

import json
from pathlib import Path
from typing import List

from pydantic import BaseModel, ConfigDict, Field, field_validator

from tcla.schemas.data import SplitSpec
from tcla.schemas.evaluation import DecoderConfig, EvalConfig
from tcla.schemas.generation import DriftConfig, GenConfig
from tcla.schemas.model import ArchitectureConfig
from tcla.schemas.training import StageOneConfig, StageTwoConfig


class ExperimentConfig(BaseModel):
    """Complete experiment description"""
    model_config = ConfigDict(extra="forbid", frozen=True)

    output_dir: str = Field(..., description="Root of data/, checkpoints/, reports/ and logs/")
    gen: GenConfig = Field(default_factory=GenConfig)
    drifts: List[DriftConfig] = Field(..., description="First entry is the source session (identity drift)")
    source_split: SplitSpec = Field(default_factory=lambda: SplitSpec(ratios=(8, 1, 1)))
    target_split: SplitSpec = Field(default_factory=lambda: SplitSpec(ratios=(1, 1, 3)))
    model: ArchitectureConfig = Field(default_factory=ArchitectureConfig)
    stage1: StageOneConfig = Field(default_factory=StageOneConfig)
    stage2: StageTwoConfig = Field(default_factory=StageTwoConfig)
    decoder: DecoderConfig = Field(default_factory=DecoderConfig)
    eval: EvalConfig = Field(default_factory=EvalConfig)

    @field_validator("drifts")
    @classmethod
    def check_drifts(cls, value):
        if not value:
            raise ValueError("invariant violated: drifts list must be nonempty")
        seeds = [d.session_seed for d in value]
        if len(set(seeds)) != len(seeds):
            raise ValueError("invariant violated: session_seed values must be distinct")
        return value

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        """Load and validate a JSON experiment config"""
        with open(path, "r", encoding="utf-8") as f:
            return cls.model_validate(json.load(f))

    @property
    def output_path(self) -> Path:
        return Path(self.output_dir)
