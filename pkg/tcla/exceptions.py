"""
Exception Hierarchy
Every error carries a short machine-readable code used by the CLI error line
"""


class TCLAError(Exception):
    """Base class for laboratory errors"""
    code = "error"


class ConfigError(TCLAError):
    """Raised when a configuration violates an invariant"""
    code = "invalid-config"


class ShapeError(TCLAError):
    """Raised when tensor shapes are inconsistent"""
    code = "shape-mismatch"


class NonFiniteError(TCLAError):
    """Raised when parameters or inputs contain NaN/inf"""
    code = "non-finite"


# ============================================================================
# DATA BUNDLES
# ============================================================================

class BundleError(TCLAError):
    """Raised when a dataset bundle cannot be written or read"""
    code = "bundle"


class MissingBundleFileError(BundleError):
    """Raised when a bundle file is absent"""
    code = "missing-file"


class BundleSizeError(BundleError):
    """Raised when a payload file size disagrees with the manifest shapes"""
    code = "size-mismatch"


class UnsupportedFormatError(BundleError):
    """Raised when the manifest declares an unknown format_version"""
    code = "unsupported-version"


class MalformedManifestError(BundleError):
    """Raised when manifest.json is not valid JSON or lacks a required field"""
    code = "malformed-manifest"


class LabelRangeError(BundleError):
    """Raised when a stored label lies outside 1..D"""
    code = "label-range"


class SplitError(TCLAError):
    """Raised when a dataset cannot be split as requested"""
    code = "split"


# ============================================================================
# OBJECTIVES / STATISTICS
# ============================================================================

class NonPositiveRateError(TCLAError):
    """Raised when a Poisson rate is not strictly positive"""
    code = "nonpositive-rate"


class InsufficientSamplesError(TCLAError):
    """Raised when an estimator lacks the samples it needs"""
    code = "insufficient-samples"


class DegenerateTargetError(TCLAError):
    """Raised when R² is undefined because the truth is constant"""
    code = "degenerate-target"


# ============================================================================
# TRAINING / CHECKPOINTS
# ============================================================================

class CheckpointError(TCLAError):
    """Raised when a checkpoint cannot be saved or loaded"""
    code = "checkpoint"


class CheckpointVersionError(CheckpointError):
    """Raised on an unsupported checkpoint format version"""
    code = "checkpoint-version"


class CheckpointDigestError(CheckpointError):
    """Raised when weights.bin does not match its recorded digest"""
    code = "checkpoint-digest"


class UnknownSessionError(TCLAError):
    """Raised when a session id is not present in a checkpoint or dataset"""
    code = "unknown-session"


class DivergenceError(TCLAError):
    """Raised when training produces a non-finite or exploding loss"""
    code = "divergence"

    def __init__(self, message, checkpoint=None, report=None):
        super().__init__(message)
        self.checkpoint = checkpoint
        self.report = report or {}


class FrozenWeightError(TCLAError):
    """Raised when a frozen shared tensor changed during Stage Two"""
    code = "frozen-weight-mutation"


class MissingArtifactError(TCLAError):
    """Raised when a pipeline step needs an artifact that does not exist yet"""
    code = "missing-artifact"
