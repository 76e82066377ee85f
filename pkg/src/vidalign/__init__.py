"""Verb/noun-aware video-caption alignment with action highlighting."""
from .encoders import NOUN, OTHER, VERB, Vocabulary
from .errors import (
    BatchError,
    ConfigError,
    DatasetError,
    FormatError,
    InputError,
    NonFiniteGradientError,
    VidAlignError,
)
from .estimator import ActionHighlighter
from .model import AlignmentModel
from .training import Checkpoint, TrainConfig, train

__all__ = [
    "ActionHighlighter",
    "AlignmentModel",
    "BatchError",
    "Checkpoint",
    "ConfigError",
    "DatasetError",
    "FormatError",
    "InputError",
    "NOUN",
    "NonFiniteGradientError",
    "OTHER",
    "TrainConfig",
    "VERB",
    "VidAlignError",
    "Vocabulary",
    "train",
]
__version__ = "0.1.0"
