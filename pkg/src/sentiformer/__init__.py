"""Metadata-enhanced transformer for image sentiment classification.

A self-contained engine over precomputed image/caption/prompt feature
vectors: a reverse-mode autodiff tensor core, the fusion network, a
deterministic AdamW training loop, metrics, and a CLI.
"""

from .errors import (ConfigMismatchError, DataError, DimensionError, FormatError,
                     NumericError, SentiformerError, UsageError)
from .model import ModelConfig, ModelParams
from .tensor import Tensor, Precision
from .train import TrainConfig

__version__ = "0.1.0"

__all__ = [
    "ConfigMismatchError", "DataError", "DimensionError", "FormatError",
    "NumericError", "SentiformerError", "UsageError",
    "ModelConfig", "ModelParams", "Tensor", "Precision", "TrainConfig",
    "__version__",
]
