"""Physics-guided neural feedforward: rational models, MLPs and SK iterations."""
from . import decomp, model, neural, plant, signals, sk_solver
from ._kernels import backend
from .errors import (
    InvalidInputError,
    RankDeficientError,
    SimulationError,
    SolverDivergedError,
    StabilityWarning,
)
from .model import ModelSpec, ModelTheta
from .neural import Mlp, glorot_init
from .signals import PolyOp, RationalFilter, Signal
from .sk_solver import SkConfig, SkState, sk_fit, sk_fit_regularized

__version__ = "0.1.0"

__all__ = [
    "InvalidInputError",
    "Mlp",
    "ModelSpec",
    "ModelTheta",
    "PolyOp",
    "RankDeficientError",
    "RationalFilter",
    "Signal",
    "SimulationError",
    "SkConfig",
    "SkState",
    "SolverDivergedError",
    "StabilityWarning",
    "backend",
    "decomp",
    "glorot_init",
    "model",
    "neural",
    "plant",
    "signals",
    "sk_fit",
    "sk_fit_regularized",
    "sk_solver",
]
