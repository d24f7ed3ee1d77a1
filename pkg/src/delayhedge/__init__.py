"""Pricing, delta hedging and regularity diagnostics for delay models lifted to a Hilbert space."""

__version__ = "0.1.0"

from .coefficients import ModelSpec, MollifiedCoefficients, make_payoff
from .errors import ConfigError, DomainError, GridMismatchError, NondegeneracyError, NumericalError
from .hilbert_state import HistoryGrid, LiftedState
from .models import black_scholes_model, moving_average_model
from .sde_engine import SimConfig, simulate_mild, simulate_yosida
from .value_function import delta, gradient_n, value, value_n

__all__ = [
    "ConfigError", "DomainError", "GridMismatchError", "HistoryGrid", "LiftedState", "ModelSpec",
    "MollifiedCoefficients", "NondegeneracyError", "NumericalError", "SimConfig", "black_scholes_model",
    "delta", "gradient_n", "make_payoff", "moving_average_model", "simulate_mild", "simulate_yosida",
    "value", "value_n",
]
