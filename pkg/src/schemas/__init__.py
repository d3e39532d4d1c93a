"""
Schema modules for the application.
"""
from .configs import (
    AttackConfig,
    DataConfig,
    EpochRecord,
    LossConfig,
    LossRecord,
    NetworkConfig,
    RunManifest,
    RunMetrics,
    TrainConfig,
)
from .registry import SchemaRegistry

# Create a singleton instance of the SchemaRegistry class
schema_registry = SchemaRegistry()

__all__ = [
    "AttackConfig",
    "DataConfig",
    "EpochRecord",
    "LossConfig",
    "LossRecord",
    "NetworkConfig",
    "RunManifest",
    "RunMetrics",
    "TrainConfig",
    "SchemaRegistry",
    "schema_registry",
]
