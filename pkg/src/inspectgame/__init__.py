"""Mean-field inspection game: limit solver, finite-N simulator, epsilon-Nash studies."""

__version__ = "0.1.0"

from .model import DetectionSpec, DomainError, ModelParams, TerminalSpec  # noqa: E402
from .solver import (  # noqa: E402
    ConvergenceError,
    MfgSolution,
    TimeGrid,
    gamma_map,
    limit_payoff,
    solve_hjb_backward,
    solve_kinetic_forward,
    solve_mfg_fixed_point,
    solve_tagged_law_forward,
)

__all__ = [
    "ConvergenceError",
    "DetectionSpec",
    "DomainError",
    "MfgSolution",
    "ModelParams",
    "TerminalSpec",
    "TimeGrid",
    "gamma_map",
    "limit_payoff",
    "solve_hjb_backward",
    "solve_kinetic_forward",
    "solve_mfg_fixed_point",
    "solve_tagged_law_forward",
]
