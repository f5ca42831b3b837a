"""Joint energy-bandwidth allocation for cooperating hybrid-energy nodes."""

from .admm import AdmmParams, SolveReport, augmented_lagrangian, solve, validate_params
from .model import (DualState, PrimalState, ResidualReport, Scenario,
                    battery_trajectory, feasibility, objective, rate_term)

__all__ = [
    "AdmmParams",
    "SolveReport",
    "Scenario",
    "PrimalState",
    "DualState",
    "ResidualReport",
    "augmented_lagrangian",
    "battery_trajectory",
    "feasibility",
    "objective",
    "rate_term",
    "solve",
    "validate_params",
]

__version__ = "0.1.0"
