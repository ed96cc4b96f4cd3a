"""
Pydantic Schemas
"""

from tcla.schemas.data import SplitSpec
from tcla.schemas.evaluation import (
    Comparison,
    DecoderConfig,
    DecoderKind,
    EvalConfig,
    EvalReport,
    R2Entry,
    VariableSummary,
)
from tcla.schemas.experiment import ExperimentConfig
from tcla.schemas.generation import DriftConfig, GenConfig
from tcla.schemas.model import ArchitectureConfig
from tcla.schemas.objectives import DropoutConfig, Granularity, MMDConfig, RegConfig
from tcla.schemas.training import StageOneConfig, StageTwoConfig

__all__ = [
    "ArchitectureConfig",
    "Comparison",
    "DecoderConfig",
    "DecoderKind",
    "DriftConfig",
    "DropoutConfig",
    "EvalConfig",
    "EvalReport",
    "ExperimentConfig",
    "GenConfig",
    "Granularity",
    "MMDConfig",
    "R2Entry",
    "RegConfig",
    "SplitSpec",
    "StageOneConfig",
    "StageTwoConfig",
    "VariableSummary",
]
