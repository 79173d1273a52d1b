"""Multi-grid multi-block-size vector quantization image codec."""

from .codec import Model, decode, encode, encode_full, train_model
from .config import CodecConfig, small_config, table_i_256, table_i_512
from .errors import (
    ConfigError,
    CorruptStreamError,
    FormatError,
    InvalidInputError,
    MGBVQError,
    ModelMismatchError,
    ResourceLimitError,
    TrainingError,
)

__version__ = "0.1.0"

__all__ = [
    "CodecConfig",
    "ConfigError",
    "CorruptStreamError",
    "FormatError",
    "InvalidInputError",
    "MGBVQError",
    "Model",
    "ModelMismatchError",
    "ResourceLimitError",
    "TrainingError",
    "decode",
    "encode",
    "encode_full",
    "small_config",
    "table_i_256",
    "table_i_512",
    "train_model",
]
