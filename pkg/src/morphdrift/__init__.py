"""Pseudo-label concept drift adaptation for streaming malware classifiers."""

from morphdrift.errors import (
    ConfigError,
    DataError,
    InputError,
    InvariantError,
    SequencingError,
    ShapeError,
    StreamParseError,
)

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "DataError",
    "InputError",
    "InvariantError",
    "SequencingError",
    "ShapeError",
    "StreamParseError",
]
