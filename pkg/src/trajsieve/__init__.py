"""Trajectory prediction with learned neighbor selection.

A transformer predictor forecasts a primary person's path from the observed
tracks of everyone in the scene; an importance estimator scores each
neighbor so unimportant ones can be dropped at inference, with analytic
FLOPs accounting for the saved compute.
"""

__version__ = "0.1.0"

from .errors import (
    CheckpointError,
    ConfigError,
    ContractError,
    DimensionError,
    DomainError,
    EmptyInputError,
    ParseError,
    TrajsieveError,
    TrainingDiverged,
)

__all__ = [
    "CheckpointError",
    "ConfigError",
    "ContractError",
    "DimensionError",
    "DomainError",
    "EmptyInputError",
    "ParseError",
    "TrajsieveError",
    "TrainingDiverged",
    "__version__",
]
