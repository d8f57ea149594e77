"""Nonlocal two-time variational dynamics for measurement collapse in the coefficient representation."""

from .action import ActionBreakdown, evaluate as evaluate_action
from .errors import (
    ConfigError,
    DegenerateKernelError,
    DegenerateStateError,
    EnsembleError,
    NumericalBlowupError,
)
from .kernel import KernelSpec, kernel_eval, support_halfwidth
from .model import Couplings, ModeSpectrum, TimeGrid, combined_energy, delta, validate_nondegenerate
from .solver import SolveConfig, SolveResult, solve_bvp
from .trajectory import CoefficientTrajectory, collapse_metrics

__version__ = "0.1.0"

__all__ = [
    "ActionBreakdown",
    "CoefficientTrajectory",
    "ConfigError",
    "Couplings",
    "DegenerateKernelError",
    "DegenerateStateError",
    "EnsembleError",
    "KernelSpec",
    "ModeSpectrum",
    "NumericalBlowupError",
    "SolveConfig",
    "SolveResult",
    "TimeGrid",
    "collapse_metrics",
    "combined_energy",
    "delta",
    "evaluate_action",
    "kernel_eval",
    "solve_bvp",
    "support_halfwidth",
    "validate_nondegenerate",
]
