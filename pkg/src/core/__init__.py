"""
Numerical core: tensors and the reverse-mode tape, bit-plane slicing,
information measures, the network, losses and attacks.
"""
from .errors import (
    ConfigError,
    DomainError,
    F2ATError,
    FormatError,
    NonFiniteError,
    ShapeError,
    TrainingAborted,
    UnknownPrimitiveError,
)

__all__ = [
    "ConfigError",
    "DomainError",
    "F2ATError",
    "FormatError",
    "NonFiniteError",
    "ShapeError",
    "TrainingAborted",
    "UnknownPrimitiveError",
]
