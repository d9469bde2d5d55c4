"""Binaural intelligibility prediction head on precomputed per-layer speech features."""

from .errors import ConfigError, DataError, FormatError, IntellipredError, NumericError, ShapeError, ValidationError
from .model import BinauralInput, HeadConfig, HeadParams, head_forward, init_params, predict
from .tensor import RngStream, Tensor

__version__ = "0.1.0"

__all__ = [
    "BinauralInput",
    "ConfigError",
    "DataError",
    "FormatError",
    "HeadConfig",
    "HeadParams",
    "IntellipredError",
    "NumericError",
    "RngStream",
    "ShapeError",
    "Tensor",
    "ValidationError",
    "head_forward",
    "init_params",
    "predict",
]
