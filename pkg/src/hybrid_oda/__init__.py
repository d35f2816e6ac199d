"""Identification of switched affine systems by online deterministic annealing
combined with recursive local model estimation."""
from . import divergence, hybrid, localid, oda, simulate
from .divergence import Divergence
from .errors import ConfigError, ContractViolation, DivergenceError, InvalidInput, OutOfDomainError
from .hybrid import (
    EstimatedHybridModel,
    HybridIdentifier,
    IdentifierConfig,
    ModeSet,
    predict_hard,
    predict_smooth,
)
from .simulate import RNG_ALGORITHM, SwitchedSystemSpec, Trajectory

__version__ = "0.1.0"

__all__ = [
    "Divergence", "ConfigError", "ContractViolation", "DivergenceError", "InvalidInput",
    "OutOfDomainError", "EstimatedHybridModel", "HybridIdentifier", "IdentifierConfig",
    "ModeSet", "predict_hard", "predict_smooth", "RNG_ALGORITHM", "SwitchedSystemSpec",
    "Trajectory", "divergence", "hybrid", "localid", "oda", "simulate",
]
