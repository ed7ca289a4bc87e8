"""Composite-query temporal grounding of instructional diagram sequences in video."""
from .types import (
    ConfigError,
    DiagramSequence,
    FormatError,
    GroundingSample,
    LossWeights,
    ModelConfig,
    Prediction,
    SeqGroundError,
    Timespan,
    ValidationError,
    ValidationReport,
    VideoFeatures,
    validate_sample,
)
from .kernels import BACKEND as KERNEL_BACKEND

__version__ = "0.1.0"
